"""Deterministic simulator for curriculum-guided personalized subgraph federated learning."""

__version__ = "0.1.0"
