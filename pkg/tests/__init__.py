"""
Test suite for ionsplit
"""
