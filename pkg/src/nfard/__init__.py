"""Neuron-functionality reuse detection for small MLP classifiers."""
__version__ = "0.1.0"
