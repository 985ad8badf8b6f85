"""Latent world model plus imagination-augmented PPO for 2D social navigation."""

__version__ = "0.1.0"
