"""Energy-management laboratory for a series-hybrid tractor powertrain."""

__version__ = "0.1.0"
