"""Hashing, seeds and the binary container format."""
