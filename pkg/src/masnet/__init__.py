"""Causal convolutional speech enhancement over complex STFT spectrograms."""

__version__ = "0.1.0"
