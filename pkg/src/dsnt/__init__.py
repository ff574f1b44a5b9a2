"""Sentiment-supervised discourse trees and discourse-augmented sentiment models."""

__version__ = "0.1.0"
