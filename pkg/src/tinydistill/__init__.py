"""Desk-scale curriculum fine-tuning and offline on-policy distillation."""

__version__ = "0.1.0"
