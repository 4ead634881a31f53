"""Deterministic simulator for slider-and-strategy trading vaults on a closed AMM market."""

__version__ = "0.1.0"
