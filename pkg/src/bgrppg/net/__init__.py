"""Disentanglement network, its losses, training loop and checkpoint format."""
