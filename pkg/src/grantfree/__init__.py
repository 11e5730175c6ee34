"""Maximum-likelihood device activity detection for grant-free random access with partial CSI."""

__version__ = "0.1.0"
