"""Two-stage EIT reconstruction: coarse-grid convexification plus a refiner dataset builder.

Pipeline: forward FEM data on the disk -> log/θ-derivative boundary transform ->
weighted least-squares minimization on a coarse grid -> conductivity recovery via
quasi-reversibility on a fine grid -> paired datasets for an image-to-image refiner.
"""

from ceit.geometry import DomainSpec, GridSpec, SourceRing, build_domain, build_grid, source_angles

__all__ = [
    "DomainSpec",
    "GridSpec",
    "SourceRing",
    "build_domain",
    "build_grid",
    "source_angles",
]

__version__ = "0.1.0"
