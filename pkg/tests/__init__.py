"""Tests for gocnn-lab."""
