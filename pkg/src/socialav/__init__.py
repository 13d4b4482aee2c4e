"""
socialav - socially coordinated autonomous driving at unsignalized intersections

IDM-driven human traffic, a GRU-VAE driving-prior model and an attention PPO
policy whose reward mixes ego and coordination terms by an angle phi.
"""

__version__ = "0.1.0"

from .cli import main

__all__ = ["main"]
