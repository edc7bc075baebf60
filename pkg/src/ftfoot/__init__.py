"""Self-supervised off-road traversability estimation at desk scale."""

__version__ = "0.1.0"
