"""Lattice Witten Laplacians, metastable spectra and Eyring-Kramers checks."""

__version__ = "0.1.0"
