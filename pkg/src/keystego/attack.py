"""Attack simulation: train a small conv surrogate on pairs produced by a target model.

* ``extraction``: the surrogate sees only containers and learns to output the secret.
* ``embedding``: the surrogate sees (host, fabricated secret) and learns to output
  the target's container; success is measured by how well the target's own
  extractor then recovers the fabricated secret from the forged container.

Key modes control what key material the target uses while generating pairs:
``none`` runs the target with identity keys (the key-free variant), ``fixed``
uses one passphrase for every pair, ``random`` draws a fresh passphrase per pair.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor
from .errors import ConfigError
from .inn import Model
from .metrics import psnr, ssim
from .pipeline import embed_pixels, extract_pixels, pixels_to_images, sample_placeholder, schedule_for
from .training import adam_step, random_crop
from .wavelet import dwt, idwt

logger = logging.getLogger(__name__)

MODES = ("embedding", "extraction")
KEY_MODES = ("none", "fixed", "random")
FIXED_ATTACK_KEY = b"keystego-target-fixed-key"


@dataclass
class AttackReport:
    mode: str
    key_mode: str
    psnr: float
    ssim: float
    budget: int

    def row(self) -> str:
        key = {"none": "x"}.get(self.key_mode, self.key_mode)
        return f"{'surrogate':<10} | {key:<6} | {self.mode:<10} | PSNR {self.psnr:6.2f} | SSIM {self.ssim:.4f}"


class Surrogate:
    """Wavelet-domain conv stack: DWT -> convs with leaky ReLU -> IWT, inputs/outputs in [0, 1]."""

    def __init__(self, in_images: int, hidden: int = 32, layers: int = 4, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.params = ParamStore()
        widths = [12 * in_images] + [hidden] * (layers - 1) + [12]
        self.layers = []
        for j in range(layers):
            fan_in = widths[j] * 9
            w = self.params.add(f"conv{j}.weight", rng.normal(0, np.sqrt(2.0 / fan_in), (widths[j + 1], widths[j], 3, 3)))
            b = self.params.add(f"conv{j}.bias", np.zeros(widths[j + 1]))
            self.layers.append((w, b))

    def __call__(self, images) -> Tensor:
        x = dc.concat_channels([dwt(dc.scale(im, 1.0 / 255.0)) for im in images])
        for j, (w, b) in enumerate(self.layers):
            x = dc.conv2d(x, w, b, 1)
            if j < len(self.layers) - 1:
                x = dc.leaky_relu(x, 0.2)
        return dc.scale(idwt(x), 255.0)


def is_trained(model: Model) -> bool:
    """Zero-initialised output layers mean the model has never been updated."""
    last = model.config.layers - 1
    return any(np.any(model.params[f"block{i}.{s}.conv{last}.weight"].data != 0)
               for i in range(model.n_blocks) for s in ("f", "h"))


def _passphrase(key_mode, rng):
    if key_mode == "none":
        return None
    if key_mode == "fixed":
        return FIXED_ATTACK_KEY
    return rng.bytes(16)


def _stack(images):
    return Tensor(np.stack(images).transpose(0, 3, 1, 2).astype(np.float32))


def _target_pairs(target: Model, images, n, crop, key_mode, rng):
    """Generate ``n`` (host, secret, container, passphrase) samples from the target."""
    out = []
    for _ in range(n):
        a, b = rng.choice(len(images), size=2, replace=False)
        host = random_crop(images[a], crop, rng)
        secret = random_crop(images[b], crop, rng)
        key = _passphrase(key_mode, rng)
        sched = schedule_for(target, key, crop, crop)
        c_px, _ = embed_pixels(_stack([host]), _stack([secret]), sched, target)
        out.append((host, secret, pixels_to_images(c_px.data)[0], key))
    return out


def attack_sim(target: Model, images, mode: str = "extraction", key_mode: str = "random", budget: int = 300,
               crop: int = 32, batch_size: int = 4, n_train: int = 256, n_eval: int = 16, hidden: int = 32,
               lr: float = 2e-3, seed: int = 0) -> AttackReport:
    """Train a surrogate for ``budget`` Adam steps and score it on held-out target pairs."""
    if mode not in MODES:
        raise ConfigError(f"attack mode must be one of {MODES}, got {mode!r}")
    if key_mode not in KEY_MODES:
        raise ConfigError(f"key mode must be one of {KEY_MODES}, got {key_mode!r}")
    if not is_trained(target):
        raise ConfigError("attack target is untrained (all output layers are zero)")
    if budget <= 0:
        raise ConfigError("attack budget must be positive")
    images = [np.asarray(im) for im in images]
    if len(images) < 2:
        raise ConfigError("attack simulation needs at least 2 images")
    if crop % (2 * target.config.patch_size):
        raise ConfigError(f"attack crop {crop} not divisible by 2 x patch size")

    rng = np.random.default_rng(seed)
    train_pairs = _target_pairs(target, images, n_train, crop, key_mode, rng)
    eval_pairs = _target_pairs(target, images, n_eval, crop, key_mode, rng)
    surrogate = Surrogate(2 if mode == "embedding" else 1, hidden=hidden, seed=seed)
    params = surrogate.params

    for step in range(budget):
        idx = rng.choice(len(train_pairs), size=batch_size, replace=False)
        batch = [train_pairs[i] for i in idx]
        hosts = _stack([p[0] for p in batch])
        secrets = _stack([p[1] for p in batch])
        containers = _stack([p[2] for p in batch])
        params.zero_grad()
        with dc.recording():
            if mode == "extraction":
                pred, target_px = surrogate([containers]), secrets
            else:
                pred, target_px = surrogate([hosts, secrets]), containers
            loss = dc.mean(dc.square(dc.scale(dc.sub(pred, target_px), 1.0 / 255.0)))
            dc.backward(loss, params)
        adam_step(params, lr, 0.9, 0.99)
        if step % 100 == 0:
            logger.debug("attack %s/%s step %d loss %.5f", mode, key_mode, step, loss.item())

    scores = []
    for k, (host, secret, container, key) in enumerate(eval_pairs):
        if mode == "extraction":
            recovered = pixels_to_images(surrogate([_stack([container])]).data)[0]
        else:
            forged = pixels_to_images(surrogate([_stack([host]), _stack([secret])]).data)[0]
            victim_key = key if key_mode != "random" else rng.bytes(16)
            sched = schedule_for(target, victim_key, crop, crop)
            z = sample_placeholder((1, target.config.coeff_channels, crop // 2, crop // 2), seed + k)
            recovered = pixels_to_images(extract_pixels(_stack([forged]), z, sched, target).data)[0]
        scores.append((psnr(secret, recovered), ssim(secret, recovered)))
    scores = np.array(scores)
    return AttackReport(mode, key_mode, float(np.mean(scores[:, 0])), float(np.mean(scores[:, 1])), budget)


def attack_table(reports) -> str:
    head = f"{'model':<10} | {'key':<6} | {'phase':<10} | {'PSNR':>11} | {'SSIM':>11}"
    return "\n".join([head] + [r.row() for r in reports])
