"""Cell-free ISAC energy-minimising resource allocation toolkit."""

__version__ = "0.1.0"
