"""Desk-scale digital twin of a closed-loop SAG mill.

Synthetic plant, fuzzy expert-control model, state-space regulatory model
and NARX process model composed into a moving-horizon prediction and
operating-limit optimization engine, with statistical drift detection and
automatic retraining.  Reproducibility note: every stochastic component
draws from numpy's PCG64 generator seeded from its config.
"""

__version__ = "0.1.0"
