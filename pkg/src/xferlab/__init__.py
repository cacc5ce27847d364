"""Controlled laboratory for feature and task correlation in pre-trained network reuse."""

__version__ = "0.1.0"
