"""Tests for the catsd package."""
