"""Multi-agent driving with natural-language vehicle-to-vehicle messages."""

__version__ = "0.1.0"
