"""PSNR, SSIM and average pixel distance on 8-bit images, plus pair-wise reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import GeometryError

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * PEAK) ** 2
C2 = (0.03 * PEAK) ** 2


def _pair(x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise GeometryError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x.astype(np.float64), y.astype(np.float64)


def apd(x, y) -> float:
    """Mean absolute difference over every pixel scalar."""
    a, b = _pair(x, y)
    return float(np.mean(np.abs(a - b)))


def psnr(x, y) -> float:
    """Peak 255; identical images give ``math.inf``."""
    a, b = _pair(x, y)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = (size - 1) / 2.0
    t = np.exp(-0.5 * ((np.arange(size) - r) / sigma) ** 2)
    return t / t.sum()


def _planes(a):
    # (H, W) or (H, W, C) -> (C, H, W)
    return a[None] if a.ndim == 2 else np.moveaxis(a, -1, 0)


def ssim(x, y) -> float:
    """Mean single-scale SSIM, Gaussian window, averaged over channels.

    The window statistics are only evaluated where the window fits inside the
    image (no border padding).
    """
    a, b = _pair(x, y)
    pa, pb = _planes(a), _planes(b)
    if min(pa.shape[1:]) < SSIM_WINDOW:
        raise GeometryError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c = pa.shape[0]
    stack = np.ascontiguousarray(np.concatenate([pa, pb, pa * pa, pb * pb, pa * pb]))
    f = kernels.filter_valid(stack, gaussian_taps())
    mx, my, xx, yy, xy = (f[i * c:(i + 1) * c] for i in range(5))
    vx = xx - mx * mx
    vy = yy - my * my
    cxy = xy - mx * my
    smap = ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
    return float(np.mean(smap.reshape(c, -1).mean(axis=1)))


@dataclass
class MetricsReport:
    psnr_c: float = math.nan
    psnr_s: float = math.nan
    psnr_s_prime: float = math.nan
    ssim_c: float = math.nan
    ssim_s: float = math.nan
    ssim_s_prime: float = math.nan
    apd_c: float = math.nan
    apd_s: float = math.nan
    apd_s_prime: float = math.nan

    @classmethod
    def from_images(cls, host=None, container=None, secret=None, extracted=None, wrong=None):
        r = cls()
        if host is not None and container is not None:
            r.psnr_c, r.ssim_c, r.apd_c = psnr(host, container), ssim(host, container), apd(host, container)
        if secret is not None and extracted is not None:
            r.psnr_s, r.ssim_s, r.apd_s = psnr(secret, extracted), ssim(secret, extracted), apd(secret, extracted)
        if secret is not None and wrong is not None:
            r.psnr_s_prime, r.ssim_s_prime, r.apd_s_prime = psnr(secret, wrong), ssim(secret, wrong), apd(secret, wrong)
        return r

    @classmethod
    def mean(cls, reports):
        reports = list(reports)
        out = cls()
        for k in asdict(out):
            vals = np.array([getattr(r, k) for r in reports], dtype=np.float64)
            setattr(out, k, float(np.mean(vals)) if len(vals) else math.nan)
        return out

    def to_dict(self) -> dict:
        return {k: _jsonable(v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        cols = [("PSNR-C", self.psnr_c, 2), ("PSNR-S", self.psnr_s, 2), ("SSIM-C", self.ssim_c, 4),
                ("SSIM-S", self.ssim_s, 4), ("PSNR-S'", self.psnr_s_prime, 2), ("SSIM-S'", self.ssim_s_prime, 4)]
        head = " ".join(f"{name:>9}" for name, _, _ in cols)
        row = " ".join(f"{_fmt(v, d):>9}" for _, v, d in cols)
        return f"{head}\n{row}"


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def _fmt(v, digits):
    if math.isnan(v):
        return "-"
    if math.isinf(v):
        return "inf"
    return f"{v:.{digits}f}"
