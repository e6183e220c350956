"""Evaluation metrics and perturbation sweeps."""
