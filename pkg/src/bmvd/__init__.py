"""Brownian motion with scalar drift on a space of varying dimension."""
