"""Oblivious message store: two-tier hash tables, bin buffer, merged tables."""

from .oht import BuildError, Oht, oht_build, oht_build_reference, oht_lookup
from .store import PongStore, WriteBatch

__all__ = [
    "BuildError",
    "Oht",
    "oht_build",
    "oht_build_reference",
    "oht_lookup",
    "PongStore",
    "WriteBatch",
]
