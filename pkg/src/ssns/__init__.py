"""Forward self-similar Navier-Stokes profiles from (-1)-homogeneous data."""

__version__ = "0.1.0"
