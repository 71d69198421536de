"""Near-field optics of subwavelength apertures in a plate waveguide, and the
atom traps and lenses they form."""

__version__ = "0.1.0"
