"""Identifiable conditional energy-based models."""
