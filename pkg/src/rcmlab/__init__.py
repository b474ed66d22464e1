"""Random walks among i.i.d. random conductances on finite lattice boxes."""

__version__ = "0.1.0"
