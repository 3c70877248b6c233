"""finslerlab: chart-based numerical workbench for Finsler and Riemannian scenes."""

__version__ = "0.1.0"
