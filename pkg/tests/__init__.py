"""
krf-lab test suite.
"""
