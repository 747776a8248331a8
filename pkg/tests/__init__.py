"""Tests package init."""
