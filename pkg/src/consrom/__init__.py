"""Mass-conservative neural reduced-order models for parametrized Darcy flow."""

__version__ = "0.1.0"
