"""Integration tests for combined functionality."""