"""specunet: 1D-UNet spectral preprocessing with a classical pipeline oracle."""

from . import backends

__version__ = "0.1.0"


def backend_name():
    """Name of the active convolution backend ('compiled' or 'numpy')."""
    return backends.active().name
