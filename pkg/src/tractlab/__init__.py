"""Tabular risk-class modelling toolkit: binning, SMOTE, tree learners, TreeSHAP, interventions."""

__version__ = "0.1.0"
