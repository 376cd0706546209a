"""Exam paper generation with knowledge tracing and double Q-learning."""

__version__ = "0.1.0"
