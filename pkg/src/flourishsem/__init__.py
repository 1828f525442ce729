"""County flourishing indicators and a climate-risk structural equation model."""

__version__ = "0.1.0"
