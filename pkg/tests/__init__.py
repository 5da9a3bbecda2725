"""Test package for sturmflow."""
