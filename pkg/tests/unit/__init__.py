"""Unit tests package initialization."""
