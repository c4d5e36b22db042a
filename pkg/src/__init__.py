"""Corrolab - parallel reaction-diffusion solver with level-set interface tracking"""

__version__ = "0.1.0"
