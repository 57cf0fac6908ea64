"""Pixel-level embed/extract around the invertible model, plus PNG I/O and difference images."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from . import diffcore as dc
from .diffcore import Tensor
from .errors import GeometryError
from .inn import Model, ModelConfig, model_forward, model_inverse
from .keying import KeySchedule, identity_schedule, schedule_from_passphrase
from .wavelet import dwt, idwt

DIFF_GAIN = 10.0
DIFF_LIFT = 0.4 * 255.0


# ------------------------------------------------------------------ images

def check_image(img, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise GeometryError(f"{name} must be an (H, W, 3) uint8 array, got {img.dtype} {img.shape}")
    return img


def read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    with Image.open(path) as im:
        if im.mode in ("RGBA", "LA", "PA") or "transparency" in im.info:
            raise GeometryError(f"{path}: alpha channels are not supported, supply an RGB image")
        return np.array(im.convert("RGB"), dtype=np.uint8)


def write_png(path, img) -> None:
    Image.fromarray(check_image(img)).save(Path(path), format="PNG")


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(x: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round; stays floating point."""
    return round_half_away(np.clip(x, 0.0, 255.0))


def check_geometry(h: int, w: int, patch_size: int):
    step = 2 * patch_size
    if h % step or w % step:
        raise GeometryError(f"image {h}x{w} must have both sides divisible by {step} (2 x patch size)")


# ------------------------------------------------------------------ pre-processing

def _channel_affine(config: ModelConfig):
    """Per-channel (scale, offset) mapping pixels to model inputs: ``x * scale + offset``."""
    c = config.channels
    if config.preprocess == "normalize":
        return np.full(c, 1.0 / 255.0), np.zeros(c)
    std = np.asarray(config.std, dtype=np.float64)
    mean = np.asarray(config.mean, dtype=np.float64)
    return 1.0 / (255.0 * std), -mean / std


def _broadcast(v, shape):
    return Tensor(np.broadcast_to(np.asarray(v, dtype=np.float32)[None, :, None, None], shape).copy())


def images_to_pixels(images) -> Tensor:
    """(B, H, W, 3) or (H, W, 3) uint8 -> (B, 3, H, W) float pixel tensor."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(arr.transpose(0, 3, 1, 2).astype(np.float32))


def pixels_to_images(px: np.ndarray) -> np.ndarray:
    """(B, 3, H, W) float pixels -> (B, H, W, 3) uint8 after clamping and rounding."""
    return quantize(px).astype(np.uint8).transpose(0, 2, 3, 1)


def preprocess(px: Tensor, config: ModelConfig) -> Tensor:
    s, o = _channel_affine(config)
    return dc.add(dc.mul(px, _broadcast(s, px.shape)), _broadcast(o, px.shape))


def deprocess(x: Tensor, config: ModelConfig) -> Tensor:
    s, o = _channel_affine(config)
    return dc.mul(dc.sub(x, _broadcast(o, x.shape)), _broadcast(1.0 / s, x.shape))


# ------------------------------------------------------------------ keys

def coeff_shape(model: Model, h: int, w: int):
    return (model.config.coeff_channels, h // 2, w // 2)


def schedule_for(model: Model, passphrase, h: int, w: int) -> KeySchedule:
    shape = coeff_shape(model, h, w)
    if not model.config.keyed or passphrase is None:
        return identity_schedule(model.n_blocks, shape, model.config.patch_size)
    return schedule_from_passphrase(passphrase, model.n_blocks, shape, model.config.patch_size)


# ------------------------------------------------------------------ embed / extract

def embed_pixels(host_px: Tensor, secret_px: Tensor, schedule: KeySchedule, model: Model):
    """Model-domain embed on pixel tensors; returns (container pixels before rounding, missing coefficients)."""
    cfg = model.config
    c_w, missing = model_forward(dwt(preprocess(host_px, cfg)), dwt(preprocess(secret_px, cfg)), schedule, model)
    return deprocess(idwt(c_w), cfg), missing


def extract_pixels(container_px: Tensor, z: Tensor, schedule: KeySchedule, model: Model) -> Tensor:
    cfg = model.config
    _, s_w = model_inverse(dwt(preprocess(container_px, cfg)), z, schedule, model)
    return deprocess(idwt(s_w), cfg)


def embed(host, secret, passphrase, model: Model):
    """Hide ``secret`` in ``host``. Returns ``(container_u8, missing_info)``."""
    host = check_image(host, "host")
    secret = check_image(secret, "secret")
    if host.shape != secret.shape:
        raise GeometryError(f"host {host.shape[:2]} and secret {secret.shape[:2]} differ in size")
    h, w = host.shape[:2]
    check_geometry(h, w, model.config.patch_size)
    schedule = schedule_for(model, passphrase, h, w)
    c_px, missing = embed_pixels(images_to_pixels(host), images_to_pixels(secret), schedule, model)
    return pixels_to_images(c_px.data)[0], missing


def sample_placeholder(shape, z_seed=None) -> Tensor:
    """Standard-normal placeholder for the discarded missing info; ``None`` seeds from OS entropy."""
    return Tensor(np.random.default_rng(z_seed).standard_normal(shape))


def extract(container, passphrase, model: Model, z_seed=None) -> np.ndarray:
    container = check_image(container, "container")
    h, w = container.shape[:2]
    check_geometry(h, w, model.config.patch_size)
    schedule = schedule_for(model, passphrase, h, w)
    z = sample_placeholder((1,) + coeff_shape(model, h, w), z_seed)
    return pixels_to_images(extract_pixels(images_to_pixels(container), z, schedule, model).data)[0]


def diff_visualize(host, container) -> np.ndarray:
    """``|host - container| * 10 + 40 % of full brightness``, clamped and rounded."""
    host = check_image(host, "host")
    container = check_image(container, "container")
    if host.shape != container.shape:
        raise GeometryError(f"host {host.shape[:2]} and container {container.shape[:2]} differ in size")
    diff = np.abs(host.astype(np.float64) - container.astype(np.float64))
    return quantize(diff * DIFF_GAIN + DIFF_LIFT).astype(np.uint8)


def load_image_dir(path) -> list:
    """All ``*.png`` files in a directory, sorted by name."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"no such directory: {path}")
    files = sorted(path.glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG images in {path}")
    return [read_png(f) for f in files]
