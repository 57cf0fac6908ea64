"""Key-conditioned invertible coupling blocks and the stacked model.

One block maps a (host, secret) pair of coefficient tensors forward as::

    x_k  = encode(x_s, key)
    x_h' = x_h + w_i * f(x_k)
    x_s' = x_k * exp(s(g(x_h'))) + h(x_h')

with ``w_i = r**i`` and ``s`` the logistic sigmoid (or its centred variant).
The inverse undoes the three lines in reverse order, reusing the single
intermediate ``x_k``.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor
from .errors import ConfigError, ShapeError
from .keying import BlockKey, KeySchedule, decode, encode

SUBNETS = ("f", "g", "h")
LEAK = 0.2


def decay_weight(i: int, r: float) -> float:
    """Host-update weight of block ``i``: ``r ** i``."""
    if not (0.0 < r <= 1.0):
        raise ConfigError(f"decay rate must lie in (0, 1], got {r}")
    if i < 0:
        raise ConfigError(f"block index must be >= 0, got {i}")
    return float(r) ** i


@dataclass
class ModelConfig:
    """Architecture; defaults are full scale, desk runs take theirs from ``TrainConfig``."""

    n_blocks: int = 16
    decay_rate: float = 1.0  # 1.0 disables decay
    patch_size: int = 4
    channels: int = 3
    hidden: int = 32
    layers: int = 3
    kernel: int = 3
    keyed: bool = True
    preprocess: str = "standardize"
    mean: list = field(default_factory=lambda: [0.5, 0.5, 0.5])
    std: list = field(default_factory=lambda: [0.25, 0.25, 0.25])
    scale_mode: str = "sigmoid"  # or "centered": alpha * (2 * sigmoid - 1)
    centered_alpha: float = 1.0

    def validate(self):
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be >= 1")
        decay_weight(0, self.decay_rate)
        if self.layers < 1 or self.kernel % 2 == 0:
            raise ConfigError("subnets need >= 1 layer and an odd kernel size")
        if self.preprocess not in ("normalize", "standardize"):
            raise ConfigError(f"unknown preprocess mode {self.preprocess!r}")
        if len(self.mean) != self.channels or len(self.std) != self.channels:
            raise ConfigError("mean/std need one entry per channel")
        if min(self.std) <= 0:
            raise ConfigError("standardisation std must be positive")
        if self.scale_mode not in ("sigmoid", "centered"):
            raise ConfigError(f"unknown scale mode {self.scale_mode!r}")
        return self

    @property
    def coeff_channels(self) -> int:
        return 4 * self.channels


class Subnet:
    """Plain conv stack: ``layers`` same-padded convs with leaky ReLU between them."""

    def __init__(self, params: ParamStore, prefix: str, c_in: int, c_out: int, hidden: int,
                 layers: int, kernel: int, rng: np.random.Generator):
        self.prefix = prefix
        self.kernel = kernel
        widths = [c_in] + [hidden] * (layers - 1) + [c_out]
        self.weights, self.biases = [], []
        for j in range(layers):
            fan_in = widths[j] * kernel * kernel
            last = j == layers - 1
            w = np.zeros((widths[j + 1], widths[j], kernel, kernel)) if last else \
                rng.normal(0.0, np.sqrt(2.0 / fan_in), (widths[j + 1], widths[j], kernel, kernel))
            self.weights.append(params.add(f"{prefix}.conv{j}.weight", w))
            self.biases.append(params.add(f"{prefix}.conv{j}.bias", np.zeros(widths[j + 1])))

    def __call__(self, x: Tensor) -> Tensor:
        pad = self.kernel // 2
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = dc.conv2d(x, w, b, pad)
            if j < len(self.weights) - 1:
                x = dc.leaky_relu(x, LEAK)
        return x


class DKiBlock:
    def __init__(self, index: int, config: ModelConfig, params: ParamStore, rng: np.random.Generator):
        self.index = index
        self.config = config
        self.weight = decay_weight(index, config.decay_rate)
        c = config.coeff_channels
        self.subnets = {
            name: Subnet(params, f"block{index}.{name}", c, c, config.hidden, config.layers, config.kernel, rng)
            for name in SUBNETS
        }

    def f(self, x):
        return self.subnets["f"](x)

    def g(self, x):
        return self.subnets["g"](x)

    def h(self, x):
        return self.subnets["h"](x)

    def log_scale(self, x_h: Tensor) -> Tensor:
        s = dc.sigmoid(self.g(x_h))
        if self.config.scale_mode == "centered":
            a = self.config.centered_alpha
            s = dc.add(dc.scale(s, 2.0 * a), Tensor(np.full(s.shape, -a, dtype=s.data.dtype), dtype=None))
        return s

    def _encode(self, x, key):
        return encode(x, key, self.config.patch_size) if self.config.keyed else x

    def _decode(self, x, key):
        return decode(x, key, self.config.patch_size) if self.config.keyed else x

    def forward(self, x_h: Tensor, x_s: Tensor, key: BlockKey):
        if x_h.shape != x_s.shape:
            raise ShapeError(f"host {x_h.shape} and secret {x_s.shape} tensors differ")
        x_k = self._encode(x_s, key)
        x_h = dc.add(x_h, dc.scale(self.f(x_k), self.weight))
        x_s = dc.add(dc.mul(x_k, dc.exp(self.log_scale(x_h))), self.h(x_h))
        return x_h, x_s

    def inverse(self, x_h: Tensor, x_s: Tensor, key: BlockKey):
        if x_h.shape != x_s.shape:
            raise ShapeError(f"host {x_h.shape} and secret {x_s.shape} tensors differ")
        x_k = dc.mul(dc.sub(x_s, self.h(x_h)), dc.exp(dc.scale(self.log_scale(x_h), -1.0)))
        x_h = dc.sub(x_h, dc.scale(self.f(x_k), self.weight))
        return x_h, self._decode(x_k, key)


class Model:
    """Ordered DKiBlocks sharing one :class:`ParamStore`."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = (config or ModelConfig()).validate()
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        self.blocks = [DKiBlock(i, self.config, self.params, rng) for i in range(self.config.n_blocks)]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def randomize(self, seed: int = 0, std: float = 0.05):
        """Overwrite every parameter with N(0, std^2) noise (tests and diagnostics)."""
        rng = np.random.default_rng(seed)
        for t in self.params.values():
            t.data = rng.normal(0.0, std, t.shape).astype(t.data.dtype)
        return self

    def copy(self) -> "Model":
        other = Model(ModelConfig(**asdict(self.config)))
        for name, t in self.params.items():
            other.params[name].data = t.data.copy()
        return other


def block_forward(x_h: Tensor, x_s: Tensor, key: BlockKey, block: DKiBlock):
    return block.forward(x_h, x_s, key)


def block_inverse(x_h: Tensor, x_s: Tensor, key: BlockKey, block: DKiBlock):
    return block.inverse(x_h, x_s, key)


def _check_schedule(schedule: KeySchedule, model: Model):
    if len(schedule) != model.n_blocks:
        raise ConfigError(f"schedule has {len(schedule)} block keys, model has {model.n_blocks} blocks")


def model_forward(host_w: Tensor, secret_w: Tensor, schedule: KeySchedule, model: Model,
                  trace: list | None = None):
    """Run all blocks; returns ``(container_w, missing_w)``.

    If ``trace`` is a list, the secret-pipeline state before block 0 and after
    every block is appended to it (``n_blocks + 1`` tensors).
    """
    _check_schedule(schedule, model)
    x_h, x_s = host_w, secret_w
    if trace is not None:
        trace.append(x_s)
    for block, key in zip(model.blocks, schedule.blocks):
        x_h, x_s = block.forward(x_h, x_s, key)
        if trace is not None:
            trace.append(x_s)
    return x_h, x_s


def model_inverse(container_w: Tensor, z: Tensor, schedule: KeySchedule, model: Model):
    """Blocks in reverse order; returns ``(host_rec_w, secret_rec_w)``."""
    _check_schedule(schedule, model)
    if z.shape != container_w.shape:
        raise ShapeError(f"placeholder {z.shape} must match container coefficients {container_w.shape}")
    x_h, x_s = container_w, z
    for block, key in zip(reversed(model.blocks), reversed(schedule.blocks)):
        x_h, x_s = block.inverse(x_h, x_s, key)
    return x_h, x_s


# ------------------------------------------------------------------ checkpoints

MAGIC = b"KSTGCKPT"
FORMAT_VERSION = 1


def _manifest(model: Model):
    tensors, offset = [], 0
    for name, t in model.params.items():
        nbytes = t.size * 4
        tensors.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    return {"format": "keystego-checkpoint", "version": FORMAT_VERSION,
            "config": asdict(model.config), "tensors": tensors}


def checkpoint_bytes(model: Model) -> bytes:
    """Magic, u64 LE manifest length, UTF-8 JSON manifest, then raw ``<f4`` blobs in manifest order."""
    manifest = json.dumps(_manifest(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(manifest)))
    buf.write(manifest)
    for t in model.params.values():
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return buf.getvalue()


def model_from_bytes(blob: bytes) -> Model:
    if blob[:8] != MAGIC:
        raise ConfigError("not a keystego checkpoint (bad magic)")
    (mlen,) = struct.unpack("<Q", blob[8:16])
    manifest = json.loads(blob[16:16 + mlen].decode("utf-8"))
    if manifest.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {manifest.get('version')}")
    model = Model(ModelConfig(**manifest["config"]))
    base = 16 + mlen
    names = [entry["name"] for entry in manifest["tensors"]]
    if names != list(model.params):
        raise ConfigError("checkpoint tensor list does not match the model layout")
    for entry in manifest["tensors"]:
        start = base + entry["offset"]
        raw = blob[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ConfigError(f"checkpoint truncated in tensor {entry['name']}")
        model.params[entry["name"]].data = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(entry["shape"])
    return model


def save_checkpoint(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())

