"""Federated knowledge-graph-embedding privacy laboratory.

Desk-scale, deterministic implementation of federated KGE training,
triple-membership inference attacks, a differentially private defense with
private gradient-row selection, and a Renyi-DP accountant.
"""

__version__ = "0.1.0"
