"""
Geoward Test Suite

Unit tests per module plus slow desk-scale experiments.
"""
