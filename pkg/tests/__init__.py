"""
This module contains all tests
"""
