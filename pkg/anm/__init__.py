"""Adversarial neuron manipulation lab."""
