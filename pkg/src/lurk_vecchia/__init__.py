"""Penalized spatiotemporal land-use regression with Vecchia approximations."""
__version__ = "0.1.0"
