"""Causal normalizing flows: structure-aware density models that answer
interventional and counterfactual queries."""
__version__ = "0.1.0"
