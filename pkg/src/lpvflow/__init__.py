"""Low-order LPV approximations of quadratic systems for gain-scheduled control."""
__version__ = "0.1.0"
