"""Tagged-particle diffusion in a hard-sphere gas: MD, linear Boltzmann, heat limit."""

__version__ = "0.1.0"
