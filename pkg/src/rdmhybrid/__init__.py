"""Hybrid RDM toolkit: FCI, ACSE, tomography simulation, purification and MC-PDFT.

Subpackages are imported lazily by the user; the top level only exposes the
version string.
"""
from importlib import metadata as _metadata

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.1.0"

__all__ = ["__version__"]
