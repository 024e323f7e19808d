"""Prior optimization for Bayesian autoencoders."""
__version__ = "0.1.0"
