"""Two-time measurement entropy production for finite-dimensional open
quantum systems: modular-theory routes, fermionic black box models and
quantum spin reservoirs."""

__version__ = "0.1.0"
