"""Active meta-learning of deep-kernel GPs by hyperparameter disagreement."""

__version__ = "0.1.0"
