"""Conditional refinement GAN for imbalanced semantic segmentation."""
