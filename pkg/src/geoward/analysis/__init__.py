"""
Geoward Analysis

Metric geometry, damage constructors, damage paths and geodesic recovery.
"""
