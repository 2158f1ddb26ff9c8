"""Simulation and certification of hysteresis-switched stochastic systems.

Classical jump-diffusions and quantum stochastic master equations share one
switching controller, one ensemble runner and one set of exponent estimators.
"""
__version__ = "0.1.0"
