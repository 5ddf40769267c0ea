"""Desk-scale teacher-student trajectory prediction with a Fourier adaptive spiking student."""

__version__ = "0.1.0"
