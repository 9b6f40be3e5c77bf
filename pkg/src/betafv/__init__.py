"""Simulation toolkit for stable branching, Beta-Fleming-Viot processes and Poisson covering."""
__version__ = "0.1.0"
