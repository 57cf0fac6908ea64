"""Desk-scale training: squared-error loss, straight-through rounding, Adam, decay-rate ablation."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor
from .errors import ConfigError, ShapeError
from .inn import Model, ModelConfig
from .metrics import MetricsReport
from .pipeline import (
    embed_pixels,
    extract_pixels,
    pixels_to_images,
    quantize,
    round_half_away,
    sample_placeholder,
    schedule_for,
)

logger = logging.getLogger(__name__)

EVAL_PASSPHRASE = b"keystego-eval"
WRONG_SUFFIX = b"#wrong"


# ------------------------------------------------------------------ loss & rounding

def loss_total(x_c: Tensor, x_h: Tensor, x_e: Tensor, x_s: Tensor, lambda_c: float = 1.0,
               lambda_s: float = 1.0) -> Tensor:
    """``lambda_c * sum((x_c - x_h)^2) + lambda_s * sum((x_s - x_e)^2)``."""
    if x_c.shape != x_h.shape or x_e.shape != x_s.shape:
        raise ShapeError(f"loss pairs differ in shape: {x_c.shape}/{x_h.shape}, {x_e.shape}/{x_s.shape}")
    l_c = dc.sum(dc.square(dc.sub(x_c, x_h)))
    l_s = dc.sum(dc.square(dc.sub(x_s, x_e)))
    return dc.add(dc.scale(l_c, lambda_c), dc.scale(l_s, lambda_s))


def round_st(x: Tensor) -> Tensor:
    """Round half away from zero; the gradient passes straight through."""
    return dc.straight_through(x, round_half_away, name="round_st")


def quantize_st(x: Tensor) -> Tensor:
    """Clamp to [0, 255] and round; straight-through gradient."""
    return dc.straight_through(x, quantize, name="quantize_st")


ROUNDING = {
    "ste": quantize_st,
    "none": lambda x: x,
}


# ------------------------------------------------------------------ optimiser

def adam_step(params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
    """One bias-corrected Adam update of every parameter holding a gradient."""
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad.astype(np.float64)
        m, v = params.moments.get(name, (np.zeros_like(g), np.zeros_like(g)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        params.moments[name] = (m, v)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)
    return params


# ------------------------------------------------------------------ config & data

@dataclass
class TrainConfig:
    lambda_c: float = 1.0
    lambda_s: float = 1.0
    epochs: int = 300
    lr: float = 10 ** -2.5
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    lr_halving_period: int = 100
    batch_size: int = 4
    crop_size: int = 64
    decay_rate: float = 1.0
    preprocess: str = "standardize"
    rounding: str = "ste"
    n_blocks: int = 4
    hidden: int = 16
    patch_size: int = 4
    key_mode: str = "random"  # random | fixed | none
    passphrase: str = "keystego"
    holdout: int = 0
    max_steps: int | None = None
    seed: int = 0

    def validate(self):
        positive = ("epochs", "lr", "batch_size", "crop_size", "lr_halving_period", "n_blocks", "hidden", "patch_size")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lambda_c < 0 or self.lambda_s < 0:
            raise ConfigError("loss weights must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.crop_size % (2 * self.patch_size):
            raise ConfigError(f"crop size {self.crop_size} not divisible by 2 x patch size")
        if self.key_mode not in ("random", "fixed", "none"):
            raise ConfigError(f"unknown key mode {self.key_mode!r}")
        if self.rounding not in ROUNDING:
            raise ConfigError(f"unknown rounding mode {self.rounding!r}")
        if self.preprocess not in ("normalize", "standardize"):
            raise ConfigError(f"unknown preprocess mode {self.preprocess!r}")
        if not (0 < self.decay_rate <= 1):
            raise ConfigError("decay rate must lie in (0, 1]")
        return self

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw).validate()


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    psnr_c: float
    psnr_s: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    steps: int = 0
    seconds: float = 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "psnr_c", "psnr_s"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.loss:.6f}", f"{r.psnr_c:.4f}", f"{r.psnr_s:.4f}"])


def channel_stats(images) -> tuple:
    """Per-channel mean and std of pixel/255 over a list of images."""
    flat = np.concatenate([np.asarray(im, dtype=np.float64).reshape(-1, 3) / 255.0 for im in images])
    return flat.mean(axis=0).tolist(), np.maximum(flat.std(axis=0), 1e-3).tolist()


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return img[y:y + size, x:x + size]


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    y, x = (h - size) // 2, (w - size) // 2
    return img[y:y + size, x:x + size]


def _check_dataset(images, crop):
    if len(images) < 2:
        raise ConfigError(f"training needs at least 2 images, got {len(images)}")
    for i, im in enumerate(images):
        im = np.asarray(im)
        if im.dtype != np.uint8 or im.ndim != 3 or im.shape[2] != 3:
            raise ConfigError(f"image {i} is not an (H, W, 3) uint8 array")
        if min(im.shape[:2]) < crop:
            raise ConfigError(f"image {i} ({im.shape[0]}x{im.shape[1]}) is smaller than the {crop}px crop")


def epoch_batches(n_images: int, batch_size: int, rng: np.random.Generator):
    """Shuffle, pair consecutive images as (host, secret) without replacement, group into batches."""
    order = rng.permutation(n_images)
    pairs = [(int(order[i]), int(order[i + 1])) for i in range(0, n_images - 1, 2)]
    return [pairs[i:i + batch_size] for i in range(0, len(pairs), batch_size)]


def model_config_for(config: TrainConfig, images=None) -> ModelConfig:
    mean, std = channel_stats(images) if images is not None else ([0.5] * 3, [0.25] * 3)
    return ModelConfig(n_blocks=config.n_blocks, decay_rate=config.decay_rate, patch_size=config.patch_size,
                       hidden=config.hidden, keyed=config.key_mode != "none", preprocess=config.preprocess,
                       mean=mean, std=std)


# ------------------------------------------------------------------ training step

def _stack(images) -> Tensor:
    return Tensor(np.stack(images).transpose(0, 3, 1, 2).astype(np.float32))


def training_loss(model: Model, host_px: Tensor, secret_px: Tensor, passphrase, config: TrainConfig,
                  rng: np.random.Generator, rounding: Callable | None = None) -> Tensor:
    """Embed, quantise the container, extract from a Gaussian placeholder; loss per image in [0, 1] units."""
    h, w = host_px.shape[2:]
    schedule = schedule_for(model, passphrase, h, w)
    c_px, missing = embed_pixels(host_px, secret_px, schedule, model)
    c_q = (rounding or ROUNDING[config.rounding])(c_px)
    z = Tensor(rng.standard_normal(missing.shape))
    s_px = extract_pixels(c_q, z, schedule, model)
    inv = 1.0 / 255.0
    loss = loss_total(dc.scale(c_q, inv), dc.scale(host_px, inv), dc.scale(s_px, inv), dc.scale(secret_px, inv),
                      config.lambda_c, config.lambda_s)
    return dc.scale(loss, 1.0 / host_px.shape[0])


def _train_passphrase(config: TrainConfig, rng: np.random.Generator):
    if config.key_mode == "random":
        return rng.bytes(16)
    if config.key_mode == "fixed":
        return config.passphrase
    return None


def evaluate_pairs(model: Model, hosts, secrets, passphrase, z_seed: int = 0,
                   wrong_passphrase=None) -> MetricsReport:
    """Batch embed/extract on uint8 image lists; S'-pair uses ``wrong_passphrase`` when given."""
    host_px, secret_px = _stack(hosts), _stack(secrets)
    h, w = host_px.shape[2:]
    schedule = schedule_for(model, passphrase, h, w)
    c_px, missing = embed_pixels(host_px, secret_px, schedule, model)
    containers = pixels_to_images(c_px.data)
    c_in = _stack(containers)
    z = sample_placeholder(missing.shape, z_seed)
    extracted = pixels_to_images(extract_pixels(c_in, z, schedule, model).data)
    wrong = None
    if wrong_passphrase is not None:
        wrong_sched = schedule_for(model, wrong_passphrase, h, w)
        wrong = pixels_to_images(extract_pixels(c_in, z, wrong_sched, model).data)
    reports = [MetricsReport.from_images(hosts[i], containers[i], secrets[i], extracted[i],
                                         None if wrong is None else wrong[i]) for i in range(len(hosts))]
    return MetricsReport.mean(reports)


def train(dataset, config: TrainConfig | None = None, model: Model | None = None,
          log_every: int = 0) -> tuple:
    """Train a model on a list of uint8 RGB images. Returns ``(model, history)``."""
    config = (config or TrainConfig()).validate()
    images = [np.asarray(im) for im in dataset]
    _check_dataset(images, config.crop_size)
    rng = np.random.default_rng(config.seed)
    n_hold = min(config.holdout, len(images) - 2)
    held, train_set = images[:n_hold], images[n_hold:]
    eval_set = held if len(held) >= 2 else train_set
    eval_pairs = [(eval_set[i], eval_set[i + 1]) for i in range(0, min(len(eval_set), 8) - 1, 2)]
    eval_hosts = [center_crop(a, config.crop_size) for a, _ in eval_pairs]
    eval_secrets = [center_crop(b, config.crop_size) for _, b in eval_pairs]

    if model is None:
        model = Model(model_config_for(config, train_set), seed=config.seed)
    params = model.params
    history = TrainHistory()
    eval_key = EVAL_PASSPHRASE if config.key_mode != "fixed" else config.passphrase
    start = time.perf_counter()
    step = 0
    for epoch in range(config.epochs):
        lr = config.lr * 0.5 ** (epoch // config.lr_halving_period)
        losses = []
        for batch in epoch_batches(len(train_set), config.batch_size, rng):
            hosts = [random_crop(train_set[a], config.crop_size, rng) for a, _ in batch]
            secrets = [random_crop(train_set[b], config.crop_size, rng) for _, b in batch]
            passphrase = _train_passphrase(config, rng)
            params.zero_grad()
            with dc.recording():
                loss = training_loss(model, _stack(hosts), _stack(secrets), passphrase, config, rng)
                dc.backward(loss, params)
            adam_step(params, lr, config.beta1, config.beta2, config.eps)
            value = loss.item()
            if step == 0:
                history.initial_loss = value
            losses.append(value)
            step += 1
            if log_every and step % log_every == 0:
                logger.info("step %d epoch %d loss %.4f", step, epoch, value)
            if config.max_steps and step >= config.max_steps:
                break
        rep = evaluate_pairs(model, eval_hosts, eval_secrets, eval_key, z_seed=config.seed)
        history.records.append(EpochRecord(epoch, float(np.mean(losses)), rep.psnr_c, rep.psnr_s))
        if config.max_steps and step >= config.max_steps:
            break
    history.steps = step
    history.final_loss = history.records[-1].loss
    history.seconds = time.perf_counter() - start
    return model, history


def final_loss(model: Model, images, config: TrainConfig, n_batches: int = 4, seed: int = 1234) -> float:
    """Deterministic evaluation loss over fixed random crops (no parameter updates)."""
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(n_batches):
        batch = epoch_batches(len(images), config.batch_size, rng)[0]
        hosts = _stack([random_crop(images[a], config.crop_size, rng) for a, _ in batch])
        secrets = _stack([random_crop(images[b], config.crop_size, rng) for _, b in batch])
        values.append(training_loss(model, hosts, secrets, _train_passphrase(config, rng), config, rng).item())
    return float(np.mean(values))


# ------------------------------------------------------------------ ablation

ABLATION_GRID = (
    ("normalize", None),
    ("standardize", None),
    ("standardize", 0.9),
    ("standardize", 0.8),
    ("standardize", 0.7),
    ("standardize", 0.6),
    ("standardize", 0.5),
)


@dataclass
class AblationRow:
    preprocess: str
    decay_rate: float | None
    psnr_c: float
    psnr_s: float
    ssim_c: float
    ssim_s: float
    loss: float

    @property
    def decay_label(self) -> str:
        return "x" if self.decay_rate is None else f"{self.decay_rate:g}"


def ablate(dataset, base: TrainConfig, grid=ABLATION_GRID) -> list:
    """Train one model per (preprocess, decay rate) cell and collect the comparison table."""
    images = [np.asarray(im) for im in dataset]
    rows = []
    for mode, rate in grid:
        cfg = TrainConfig(**{**asdict(base), "preprocess": mode, "decay_rate": 1.0 if rate is None else rate})
        model, hist = train(images, cfg)
        hosts = [center_crop(images[i], cfg.crop_size) for i in range(0, len(images) - 1, 2)][:8]
        secrets = [center_crop(images[i + 1], cfg.crop_size) for i in range(0, len(images) - 1, 2)][:8]
        key = EVAL_PASSPHRASE if cfg.key_mode != "fixed" else cfg.passphrase
        rep = evaluate_pairs(model, hosts, secrets, key, z_seed=cfg.seed)
        loss = final_loss(model, images, cfg)
        rows.append(AblationRow(mode, rate, rep.psnr_c, rep.psnr_s, rep.ssim_c, rep.ssim_s, loss))
        logger.info("ablation %s r=%s loss %.4f", mode, rate, loss)
    return rows


def write_ablation_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["preprocess", "decay_rate", "psnr_c", "psnr_s", "ssim_c", "ssim_s", "loss"])
        for r in rows:
            w.writerow([r.preprocess, r.decay_label, f"{r.psnr_c:.2f}", f"{r.psnr_s:.2f}",
                        f"{r.ssim_c:.4f}", f"{r.ssim_s:.4f}", f"{r.loss:.4f}"])


def ablation_table(rows) -> str:
    head = f"{'Pre-process':<12} {'Decay':>6} {'PSNR-C':>8} {'PSNR-S':>8} {'SSIM-C':>8} {'SSIM-S':>8} {'Loss':>10}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.preprocess.capitalize():<12} {r.decay_label:>6} {r.psnr_c:8.2f} {r.psnr_s:8.2f} "
                     f"{r.ssim_c:8.4f} {r.ssim_s:8.4f} {r.loss:10.4f}")
    return "\n".join(lines)

