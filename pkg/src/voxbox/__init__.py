"""voxbox: volumetric binary segmentation on frozen 2D encoder features.

A small training engine built around three ideas: slice-wise encoding of a
volume through a frozen 2D backbone (unboxing/boxing), a lightweight
multi-scale 3D decoder, and a two-pass sub-cube gradient schedule that
keeps exact full-volume supervision while bounding live autodiff memory
by the sub-cube size.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as kernel_backend  # noqa: F401
