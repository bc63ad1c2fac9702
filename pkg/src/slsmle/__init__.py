"""Finite-sample tools for penalized maximum likelihood in stochastically
linear smooth models: quadratic-form tail bounds, model zoo, expansion and
risk certificates, penalty design, and a reproducible experiment harness."""

__version__ = "0.1.0"
