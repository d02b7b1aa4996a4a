"""Intrinsic decoherence in coupled two-degree-of-freedom systems.

Quantum linear entropy of a subsystem (split-operator wavepackets) side by
side with its classical analog (Liouville ensembles), plus the short-time
perturbative rates that connect them.
"""

__version__ = "0.1.0"
