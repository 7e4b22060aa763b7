"""Core domain layer for gocnn-lab.

Tensors, ops, losses, the GoCNN graph, diversity metrics, models and
services. Imports no adapter except through services.
"""
