"""
Geoward - weight-space geometry of neural network resilience

Measures how damage to a trained network's weights moves its outputs
(through the pullback metric), traces damage paths, and recovers damaged
networks along geodesic paths that keep their function intact.
"""

__version__ = "0.1.0"
__author__ = "Geoward Project"
__description__ = "Pullback-metric resilience analysis and geodesic recovery for MLPs"
