"""How far each secret-pipeline state drifts from the secret image, block by block."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .inn import Model, model_forward
from .metrics import apd, psnr, ssim
from .pipeline import (
    check_geometry,
    check_image,
    deprocess,
    images_to_pixels,
    pixels_to_images,
    preprocess,
    schedule_for,
)
from .wavelet import dwt, idwt


@dataclass
class DivergenceRow:
    index: int
    apd: float
    psnr: float
    ssim: float


def align_to(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Affine map of ``x`` so its global mean and std match ``ref``."""
    x = x.astype(np.float64)
    ref = ref.astype(np.float64)
    sx = x.std()
    z = (x - x.mean()) / sx if sx > 0 else x - x.mean()
    return z * ref.std() + ref.mean()


def secret_pipeline_images(model: Model, host, secret, passphrase=None) -> list:
    """Pixel-domain float images of x_s^0 .. x_s^n, shape (H, W, 3) each."""
    host = check_image(host, "host")
    secret = check_image(secret, "secret")
    h, w = host.shape[:2]
    check_geometry(h, w, model.config.patch_size)
    cfg = model.config
    trace = []
    model_forward(dwt(preprocess(images_to_pixels(host), cfg)), dwt(preprocess(images_to_pixels(secret), cfg)),
                  schedule_for(model, passphrase, h, w), model, trace=trace)
    return [deprocess(idwt(t), cfg).data[0].transpose(1, 2, 0) for t in trace]


def secret_divergence_report(model: Model, host, secret, passphrase=None) -> list:
    """One row per secret-pipeline state (``n_blocks + 1`` rows), metrics after mean/std alignment."""
    secret = check_image(secret, "secret")
    rows = []
    for i, img in enumerate(secret_pipeline_images(model, host, secret, passphrase)):
        aligned = pixels_to_images(align_to(img, secret).transpose(2, 0, 1)[None])[0]
        rows.append(DivergenceRow(i, apd(secret, aligned), psnr(secret, aligned), ssim(secret, aligned)))
    return rows


def trend(rows) -> str:
    """Direction of SSIM against block index, by the sign of its rank correlation."""
    if len(rows) < 3:
        return "n/a"
    s = np.array([r.ssim for r in rows])
    rank_i = np.arange(len(s), dtype=np.float64)
    rank_s = np.argsort(np.argsort(s)).astype(np.float64)
    rho = np.corrcoef(rank_i, rank_s)[0, 1]
    if rho <= -0.5:
        return f"similarity falls with block index (rho={rho:.2f})"
    if rho >= 0.5:
        return f"similarity rises with block index (rho={rho:.2f})"
    return f"no clear trend (rho={rho:.2f})"


def divergence_table(rows) -> str:
    lines = [f"{'i':>3} {'APD*':>8} {'PSNR*':>8} {'SSIM*':>8}"]
    for r in rows:
        p = "inf" if np.isinf(r.psnr) else f"{r.psnr:.2f}"
        lines.append(f"{r.index:>3} {r.apd:8.3f} {p:>8} {r.ssim:8.4f}")
    lines.append(trend(rows))
    return "\n".join(lines)


def write_divergence_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "apd_aligned", "psnr_aligned", "ssim_aligned"])
        for r in rows:
            w.writerow([r.index, f"{r.apd:.4f}", "inf" if np.isinf(r.psnr) else f"{r.psnr:.4f}", f"{r.ssim:.6f}"])
