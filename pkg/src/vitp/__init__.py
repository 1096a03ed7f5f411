"""Desk-scale instruction-driven vision-encoder pretraining."""

__version__ = "0.1.0"
