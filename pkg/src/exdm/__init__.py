"""Exploratory diffusion models for unsupervised reinforcement learning."""
