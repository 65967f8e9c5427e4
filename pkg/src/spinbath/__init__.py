"""Spin-bath flip-flop suppression, decoherence and charge-transport modelling for diamond defects."""
__version__ = "0.1.0"
