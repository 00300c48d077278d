"""Test package for bimeixner."""
