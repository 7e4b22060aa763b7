"""Command-line surface of gocnn-lab."""
