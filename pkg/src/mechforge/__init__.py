"""Mechanic-aware iterative generation of single-file canvas games."""
