"""Semi-supervised prototypical networks for few-shot classification."""

__version__ = "0.1.0"
