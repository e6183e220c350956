"""Edge-consistency detection of adversarial perturbations for depth + segmentation networks."""

__version__ = "0.1.0"
