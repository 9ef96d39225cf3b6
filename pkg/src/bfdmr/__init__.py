"""Bayesian detection of differentially methylated regions with smoothing splines
and a dynamically weighted particle filter."""

__version__ = "0.1.0"
