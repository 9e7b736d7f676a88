"""Test package for semsam-bench."""
