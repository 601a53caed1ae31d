"""Layer zoo, optimizers and architecture descriptors."""
