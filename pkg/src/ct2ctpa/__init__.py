"""CT to CTPA simulation study: phantom data, trainers, and evaluation metrics."""

__version__ = "0.1.0"
