"""Tongue-lesion screening toolkit: transfer-learning classifiers,
evaluation metrics, and the (AI + Physician) ensemble review loop."""

__version__ = "0.1.0"
