"""
Desk-scale statistical experiments (marked slow).
"""
