"""Direct ALE ADER-WENO finite-volume solver for the unified hyperbolic
model of continuum mechanics on moving unstructured triangular meshes."""

__version__ = "0.1.0"
