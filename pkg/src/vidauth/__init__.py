"""Toy-scale RL fine-tuning stack for video authenticity detection."""

__version__ = "0.1.0"
