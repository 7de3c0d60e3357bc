"""purlab: a desk-scale lab for imperceptible image-protection
perturbations and consistency-based purification on toy latent
diffusion models."""

__version__ = "0.1.0"
