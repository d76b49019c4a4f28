"""Company credibility ranking from news text with topic features and a small residual network."""

__version__ = "0.1.0"
