"""Adapters layer for gocnn-lab.

Concrete implementations: corpus and checkpoint files, CSV and PGM writers,
the shape synthesizer, and the CLI config-file reader.
"""
