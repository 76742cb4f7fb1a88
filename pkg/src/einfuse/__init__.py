"""einfuse: extended-Einsum cascade fusion analysis toolkit."""

__version__ = "0.1.0"
