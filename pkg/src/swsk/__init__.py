"""Software twin of a wearable industrial-safety system."""

__version__ = "0.1.0"
