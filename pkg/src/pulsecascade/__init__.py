"""Cascaded master-equation simulation of quantum pulses scattering on localized systems."""

__version__ = "0.1.0"
