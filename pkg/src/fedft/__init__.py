"""Hybrid server-edge federated fine-tuning for network intrusion detection."""

__version__ = "0.1.0"
