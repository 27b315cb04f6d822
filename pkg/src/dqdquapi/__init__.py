"""Path-integral simulation of phonon decoherence in a double-dot charge qubit."""

__version__ = "0.1.0"
