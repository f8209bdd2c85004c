"""Federated fine-tuning of a tiny byte-level GPT with retrieval-backed QA."""

__version__ = "0.1.0"
