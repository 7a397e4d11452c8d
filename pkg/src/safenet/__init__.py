"""Spiking sparse-attention feature decomposition for sEMG joint-angle estimation"""

__version__ = "0.1.0"
