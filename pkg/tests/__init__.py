"""Test suite for the low-light enhancement engine."""
