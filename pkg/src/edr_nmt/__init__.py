"""Attention-based encoder-decoder NMT with a reconstructor, on a small numpy autodiff."""

__version__ = "0.1.0"
