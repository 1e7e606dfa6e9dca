"""Long Expressive Memory (LEM) recurrent cells with exact gradients and verification tools."""

__version__ = "0.1.0"
