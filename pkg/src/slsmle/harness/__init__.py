"""Command-line experiment runner and file formats."""
