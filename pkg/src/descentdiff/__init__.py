"""Powered-descent trajectory generation: compositional diffusion + SCvx."""

__version__ = "0.1.0"
