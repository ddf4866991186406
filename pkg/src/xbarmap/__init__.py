"""Signed matrix-vector multiplication on non-negative crossbar arrays."""
