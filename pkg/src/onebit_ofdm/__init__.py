"""One-bit OFDM receivers: Bussgang-based neural channel estimation and autoencoder detection."""

__version__ = "0.1.0"
