"""Trust-region reduced basis optimization with Galerkin and Petrov-Galerkin
reduced models for parametrized elliptic PDE constraints."""

__version__ = '0.1.0'
