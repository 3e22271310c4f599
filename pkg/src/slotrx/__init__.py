"""MU-MIMO OFDM link-level simulation and receiver toolkit.

Simulates one 5G-style slot at a time (resource grid, pilots, fading channel,
AWGN) and detects it with either classical receivers (LS/LMMSE estimation,
LMMSE equalization, K-best) or a trainable neural receiver built on the
bundled autodiff engine.
"""

__version__ = "0.1.0"
