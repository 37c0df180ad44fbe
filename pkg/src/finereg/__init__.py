"""Fine regularity of boundary points for Schrodinger operators on Lipschitz domains."""
__version__ = "0.1.0"
