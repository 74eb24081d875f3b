"""Gradient-boosted trees with SHAP entropy and stability regularization."""

__version__ = "0.1.0"
