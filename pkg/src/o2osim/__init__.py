"""Agent-based O2O delivery-platform simulator for studying rider involution."""

__version__ = "0.1.0"
