"""Group recommendation through simulated multi-agent group decisions."""

__version__ = "0.1.0"
