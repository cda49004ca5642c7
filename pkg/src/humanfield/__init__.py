"""Sparse-view human surface reconstruction."""
