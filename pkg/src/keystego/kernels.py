"""Hot inner loops: patch extraction for convolution, Haar butterflies, SSIM filtering.

Each kernel exists twice: a vectorised numpy version and a numba ``@njit`` loop
version. The active backend is picked once at import time from the
``KEYSTEGO_BACKEND`` environment variable (``numba`` or ``numpy``). When unset,
numba is used if it imports, otherwise numpy. Both backends are exposed through
``BACKENDS`` so they can be benchmarked and cross-checked side by side.
"""

from __future__ import annotations

import logging
import os
from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- numpy path

def im2col_numpy(xp, k):
    """(B, C, Hp, Wp) padded input -> (B*H*W, C*k*k) patch matrix."""
    b, c, hp, wp = xp.shape
    h, w = hp - k + 1, wp - k + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B, C, H, W, k, k
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * h * w, c * k * k)


def col2im_numpy(cols, padded_shape, k):
    """Adjoint of :func:`im2col_numpy`: scatter-add patch rows back onto the padded grid."""
    b, c, hp, wp = padded_shape
    h, w = hp - k + 1, wp - k + 1
    cols6 = cols.reshape(b, h, w, c, k, k)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            out[:, :, di:di + h, dj:dj + w] += cols6[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return out


def haar_forward_numpy(x):
    b, c, h, w = x.shape
    a = x[:, :, 0::2, 0::2]
    bb = x[:, :, 0::2, 1::2]
    cc = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    ll = (a + bb + cc + d) * 0.5
    lh = (a - bb + cc - d) * 0.5
    hl = (a + bb - cc - d) * 0.5
    hh = (a - bb - cc + d) * 0.5
    return np.concatenate([ll, lh, hl, hh], axis=1)


def haar_inverse_numpy(wt):
    b, c4, h2, w2 = wt.shape
    c = c4 // 4
    ll, lh, hl, hh = wt[:, :c], wt[:, c:2 * c], wt[:, 2 * c:3 * c], wt[:, 3 * c:]
    out = np.empty((b, c, 2 * h2, 2 * w2), dtype=wt.dtype)
    out[:, :, 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[:, :, 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    out[:, :, 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    out[:, :, 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def filter_valid_numpy(img, taps):
    """Separable correlation of a stack of 2-D planes (N, H, W) with ``taps`` on both axes, 'valid' mode."""
    k = taps.shape[0]
    rows = sliding_window_view(img, k, axis=2) @ taps  # N, H, W-k+1
    return sliding_window_view(rows, k, axis=1) @ taps


# ---------------------------------------------------------------- numba path

def _build_numba():
    from numba import njit

    # j innermost: contiguous reads from the source row, one column of the patch matrix at a time
    @njit(cache=True)
    def im2col(xp, k):
        b, c, hp, wp = xp.shape
        h = hp - k + 1
        w = wp - k + 1
        out = np.empty((b * h * w, c * k * k), dtype=xp.dtype)
        for n in range(b):
            for i in range(h):
                base = (n * h + i) * w
                for ch in range(c):
                    for di in range(k):
                        src = xp[n, ch, i + di]
                        for dj in range(k):
                            col = (ch * k + di) * k + dj
                            for j in range(w):
                                out[base + j, col] = src[j + dj]
        return out

    @njit(cache=True)
    def _col2im(cols, b, c, hp, wp, k):
        h = hp - k + 1
        w = wp - k + 1
        out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
        for n in range(b):
            for i in range(h):
                base = (n * h + i) * w
                for ch in range(c):
                    for di in range(k):
                        dst = out[n, ch, i + di]
                        for dj in range(k):
                            col = (ch * k + di) * k + dj
                            for j in range(w):
                                dst[j + dj] += cols[base + j, col]
        return out

    def col2im(cols, padded_shape, k):
        b, c, hp, wp = padded_shape
        return _col2im(np.ascontiguousarray(cols), b, c, hp, wp, k)

    @njit(cache=True)
    def haar_forward(x):
        b, c, h, w = x.shape
        h2 = h // 2
        w2 = w // 2
        out = np.empty((b, 4 * c, h2, w2), dtype=x.dtype)
        for n in range(b):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        a = x[n, ch, 2 * i, 2 * j]
                        bb = x[n, ch, 2 * i, 2 * j + 1]
                        cc = x[n, ch, 2 * i + 1, 2 * j]
                        d = x[n, ch, 2 * i + 1, 2 * j + 1]
                        out[n, ch, i, j] = (a + bb + cc + d) * 0.5
                        out[n, c + ch, i, j] = (a - bb + cc - d) * 0.5
                        out[n, 2 * c + ch, i, j] = (a + bb - cc - d) * 0.5
                        out[n, 3 * c + ch, i, j] = (a - bb - cc + d) * 0.5
        return out

    @njit(cache=True)
    def haar_inverse(wt):
        b, c4, h2, w2 = wt.shape
        c = c4 // 4
        out = np.empty((b, c, 2 * h2, 2 * w2), dtype=wt.dtype)
        for n in range(b):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        ll = wt[n, ch, i, j]
                        lh = wt[n, c + ch, i, j]
                        hl = wt[n, 2 * c + ch, i, j]
                        hh = wt[n, 3 * c + ch, i, j]
                        out[n, ch, 2 * i, 2 * j] = (ll + lh + hl + hh) * 0.5
                        out[n, ch, 2 * i, 2 * j + 1] = (ll - lh + hl - hh) * 0.5
                        out[n, ch, 2 * i + 1, 2 * j] = (ll + lh - hl - hh) * 0.5
                        out[n, ch, 2 * i + 1, 2 * j + 1] = (ll - lh - hl + hh) * 0.5
        return out

    @njit(cache=True)
    def filter_valid(img, taps):
        n_img, h, w = img.shape
        k = taps.shape[0]
        ho = h - k + 1
        wo = w - k + 1
        rows = np.zeros((n_img, h, wo), dtype=img.dtype)
        for n in range(n_img):
            for i in range(h):
                for j in range(wo):
                    acc = 0.0
                    for t in range(k):
                        acc += img[n, i, j + t] * taps[t]
                    rows[n, i, j] = acc
        out = np.zeros((n_img, ho, wo), dtype=img.dtype)
        for n in range(n_img):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for t in range(k):
                        acc += rows[n, i + t, j] * taps[t]
                    out[n, i, j] = acc
        return out

    return SimpleNamespace(
        name="numba",
        im2col=im2col,
        col2im=col2im,
        haar_forward=haar_forward,
        haar_inverse=haar_inverse,
        filter_valid=filter_valid,
    )


NUMPY = SimpleNamespace(
    name="numpy",
    im2col=im2col_numpy,
    col2im=col2im_numpy,
    haar_forward=haar_forward_numpy,
    haar_inverse=haar_inverse_numpy,
    filter_valid=filter_valid_numpy,
)

BACKENDS = {"numpy": NUMPY}
try:
    BACKENDS["numba"] = _build_numba()
except ImportError:  # pragma: no cover - numba is optional
    logger.info("numba unavailable; kernels run on numpy")


def _select(requested):
    if requested is None:
        return BACKENDS.get("numba", NUMPY)
    requested = requested.strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"KEYSTEGO_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested not in BACKENDS:
        logger.warning("KEYSTEGO_BACKEND=numba requested but numba is not importable; using numpy")
        return NUMPY
    return BACKENDS[requested]


active = _select(os.environ.get("KEYSTEGO_BACKEND"))
BACKEND = active.name

im2col = active.im2col
col2im = active.col2im
haar_forward = active.haar_forward
haar_inverse = active.haar_inverse
filter_valid = active.filter_valid
