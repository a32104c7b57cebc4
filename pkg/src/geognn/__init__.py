"""Spherical geodesic message passing with a semantic-drift lens.

Graph learning toolkit where aggregation happens on the unit sphere
(log map, geodesic attention, exp map) instead of in flat feature space,
plus a local-PCA drift metric that measures how far any propagation scheme
pushes node representations off the original feature manifold.
"""

__version__ = "0.1.0"
