"""Source localisation in an acoustic waveguide with a physics-informed network."""

__version__ = "0.1.0"
