"""Consistency-trained audio autoencoder with continuous and FSQ-token bottlenecks."""
__version__ = "0.1.0"
