"""Sturmflow: numerical experiments on scalar reaction-diffusion equations on the circle."""

__version__ = "0.1.0"
__license__ = "MIT"
