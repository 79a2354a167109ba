"""Simulation and estimation of vote dynamics on a community site.

Resolves (user-posted items) gather votes with probability proportional to
an intrinsic interestingness r_j times an aging factor f(age); users arrive,
act at lognormal rates for exponential lifetimes, and form friend and
ideological links.
"""
__version__ = "0.1.0"
