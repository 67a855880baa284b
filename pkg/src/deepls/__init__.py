"""Local implicit surfaces: one latent code per sparse voxel, decoded by a shared MLP."""

__version__ = "0.1.0"
