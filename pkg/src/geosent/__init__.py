"""Sentiment classification of geo-tagged tweets from text and nearby-location features."""

__version__ = "0.1.0"
