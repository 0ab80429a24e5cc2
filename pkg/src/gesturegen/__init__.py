"""Speech-driven, style-conditioned gesture generation on a small numpy autograd core."""

__version__ = "0.1.0"
