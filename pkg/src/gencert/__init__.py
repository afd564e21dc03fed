"""Poisoning-robustness certificates for shard-and-aggregate text generation."""

__version__ = "0.1.0"
