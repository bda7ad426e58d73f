"""Simulation and stability analysis of 1-bit Sigma-Delta quantizers with
minimal-support second-order FIR feedback filters."""

__version__ = "0.1.0"
