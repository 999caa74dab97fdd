"""Monotone solver and verification suite for multi-mode optimal switching
problems driven by jump-diffusions."""

__version__ = "0.1.0"
