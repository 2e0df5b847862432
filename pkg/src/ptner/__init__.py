"""Toy-scale pre-training strategies and FC+CRF fine-tuning for character-level NER."""

__version__ = "0.1.0"
