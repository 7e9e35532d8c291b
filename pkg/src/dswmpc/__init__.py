"""Distributed tube-based switched MPC workbench for networks with switched topology."""

__version__ = "0.1.0"
