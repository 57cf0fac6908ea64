"""Single-level orthonormal Haar transform between pixel and coefficient tensors.

Output channel layout is band-major: ``[LL | LH | HL | HH]``, each band holding
one plane per source channel. Because the transform is orthonormal, each
direction is the other's adjoint, which is what the gradient uses.
"""

from __future__ import annotations

from . import kernels
from .diffcore import Tensor, linear_map
from .errors import GeometryError


def _forward(a):
    return kernels.haar_forward(a)


def _inverse(a):
    return kernels.haar_inverse(a)


def dwt(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, 4C, H/2, W/2)."""
    if x.data.ndim != 4:
        raise GeometryError(f"dwt expects a rank-4 tensor, got shape {x.shape}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise GeometryError(f"dwt needs even spatial dims, got {h}x{w}")
    return linear_map(x, _forward, _inverse, name="dwt")


def idwt(w: Tensor) -> Tensor:
    """(B, 4C, H, W) -> (B, C, 2H, 2W); exact inverse of :func:`dwt`."""
    if w.data.ndim != 4:
        raise GeometryError(f"idwt expects a rank-4 tensor, got shape {w.shape}")
    if w.shape[1] % 4:
        raise GeometryError(f"idwt needs a channel count divisible by 4, got {w.shape[1]}")
    return linear_map(w, _inverse, _forward, name="idwt")
