"""Decision trees trained as neural networks via soft binning."""

__version__ = "0.1.0"
