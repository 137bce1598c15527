"""Graph-based vision transformer blocks on a small numpy autodiff engine."""

__version__ = "0.1.0"
