"""Two-stream document forgery localization on a from-scratch tensor core."""
__version__ = "0.1.0"
