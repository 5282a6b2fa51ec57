"""Spiking ring-attractor joint-state estimator."""
