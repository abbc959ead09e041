"""
Geoward Model Layer

Networks in flat weight coordinates, datasets, and SGD training.
"""
