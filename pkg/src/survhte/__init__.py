"""Individual survival treatment effect estimation and learner benchmarking."""
__version__ = "0.1.0"
