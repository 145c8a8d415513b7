"""Transformer and U-Net EEG artifact removal on a small numpy autodiff engine."""

__version__ = "0.1.0"
