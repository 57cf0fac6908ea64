"""Passphrase -> per-block key material, and the keyed patch-shuffle/sign-mask encoder.

Key derivation:

* the passphrase bytes are hashed with SHA-256;
* the first 8 digest bytes, read big-endian, seed a master SplitMix64 stream;
* block ``i`` gets its own SplitMix64 stream seeded with the master stream's
  ``(i + 1)``-th output;
* from that stream a Fisher-Yates shuffle draws the patch permutation
  (``next() % (j + 1)`` for ``j = n-1 .. 1``), then the sign mask consumes one
  bit per element, least significant bit first, 64 elements per draw.

Everything here is pure; a :class:`KeySchedule` is immutable and can be shared.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, linear_map
from .errors import GeometryError, ShapeError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
DEFAULT_PATCH = 4


class SplitMix64:
    """The SplitMix64 generator (Steele, Lea, Flood 2014), 64-bit outputs."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def words(self, n: int) -> np.ndarray:
        return np.array([self.next() for _ in range(n)], dtype="<u8")


def to_bytes(passphrase) -> bytes:
    if isinstance(passphrase, str):
        return passphrase.encode("utf-8")
    return bytes(passphrase)


def derive_seed(passphrase) -> bytes:
    """SHA-256 digest (32 bytes) of the passphrase; ``str`` is UTF-8 encoded."""
    return hashlib.sha256(to_bytes(passphrase)).digest()


@dataclass(frozen=True, eq=False)
class BlockKey:
    perm: np.ndarray  # patch permutation; output patch j takes input patch perm[j]
    mask: np.ndarray  # (C, H, W) entries in {-1, +1}

    def __post_init__(self):
        self.perm.setflags(write=False)
        self.mask.setflags(write=False)

    @property
    def inverse_perm(self) -> np.ndarray:
        return np.argsort(self.perm, kind="stable")

    def __eq__(self, other):
        return (isinstance(other, BlockKey) and np.array_equal(self.perm, other.perm)
                and np.array_equal(self.mask, other.mask))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class KeySchedule:
    blocks: tuple
    patch_size: int = DEFAULT_PATCH

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i) -> BlockKey:
        return self.blocks[i]

    def __eq__(self, other):
        return (isinstance(other, KeySchedule) and self.patch_size == other.patch_size
                and len(self) == len(other) and all(a == b for a, b in zip(self.blocks, other.blocks)))

    __hash__ = None


def _check_geometry(shape, patch_size):
    if len(shape) != 3:
        raise GeometryError(f"tensor_shape must be (C, H, W), got {shape}")
    c, h, w = shape
    if patch_size <= 0 or h % patch_size or w % patch_size:
        raise GeometryError(f"spatial dims {h}x{w} not divisible by patch size {patch_size}")
    return (h // patch_size) * (w // patch_size)


def _block_key(rng: SplitMix64, shape, n_patches) -> BlockKey:
    perm = np.arange(n_patches, dtype=np.int64)
    for j in range(n_patches - 1, 0, -1):
        r = rng.next() % (j + 1)
        perm[j], perm[r] = perm[r], perm[j]
    n = int(np.prod(shape))
    words = rng.words(-(-n // 64))
    bits = np.unpackbits(words.view(np.uint8), bitorder="little")[:n]
    mask = np.where(bits == 1, 1.0, -1.0).astype(np.float32).reshape(shape)
    return BlockKey(perm, mask)


def generate_schedule(seed: bytes, n_blocks: int, tensor_shape, patch_size: int = DEFAULT_PATCH) -> KeySchedule:
    """Deterministic key schedule for ``n_blocks`` blocks over a (C, H, W) coefficient tensor."""
    if len(seed) != 32:
        raise ValueError(f"seed must be a 32-byte SHA-256 digest, got {len(seed)} bytes")
    shape = tuple(int(s) for s in tensor_shape)
    n_patches = _check_geometry(shape, patch_size)
    master = SplitMix64(int.from_bytes(seed[:8], "big"))
    blocks = tuple(_block_key(SplitMix64(master.next()), shape, n_patches) for _ in range(n_blocks))
    return KeySchedule(blocks, patch_size)


def schedule_from_passphrase(passphrase, n_blocks: int, tensor_shape, patch_size: int = DEFAULT_PATCH) -> KeySchedule:
    return generate_schedule(derive_seed(passphrase), n_blocks, tensor_shape, patch_size)


def identity_schedule(n_blocks: int, tensor_shape, patch_size: int = DEFAULT_PATCH) -> KeySchedule:
    """Key material that makes :func:`encode` the identity (the key-free variant)."""
    shape = tuple(int(s) for s in tensor_shape)
    n_patches = _check_geometry(shape, patch_size)
    key = BlockKey(np.arange(n_patches, dtype=np.int64), np.ones(shape, dtype=np.float32))
    return KeySchedule((key,) * n_blocks, patch_size)


# ------------------------------------------------------------------ encode / decode

def _patch_view(a: np.ndarray, p: int):
    b, c, h, w = a.shape
    nh, nw = h // p, w // p
    return a.reshape(b, c, nh, p, nw, p).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, nh * nw, p, p), (nh, nw)


def _from_patches(a: np.ndarray, nh: int, nw: int) -> np.ndarray:
    b, c, _, p, _ = a.shape
    return a.reshape(b, c, nh, nw, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, nh * p, nw * p)


def _check(a: np.ndarray, key: BlockKey, p: int):
    if a.ndim != 4:
        raise ShapeError(f"expected a (B, C, H, W) tensor, got {a.shape}")
    h, w = a.shape[2:]
    if p <= 0 or h % p or w % p:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by patch size {p}")
    if key.mask.shape != a.shape[1:]:
        raise ShapeError(f"key mask shape {key.mask.shape} does not match tensor {a.shape[1:]}")
    if key.perm.shape != ((h // p) * (w // p),):
        raise ShapeError(f"key permutation covers {key.perm.size} patches, tensor has {(h // p) * (w // p)}")


def encode_array(a: np.ndarray, key: BlockKey, patch_size: int = DEFAULT_PATCH) -> np.ndarray:
    _check(a, key, patch_size)
    patches, (nh, nw) = _patch_view(a, patch_size)
    shuffled = _from_patches(patches[:, :, key.perm], nh, nw)
    return shuffled * key.mask.astype(a.dtype, copy=False)


def decode_array(a: np.ndarray, key: BlockKey, patch_size: int = DEFAULT_PATCH) -> np.ndarray:
    _check(a, key, patch_size)
    unmasked = a * key.mask.astype(a.dtype, copy=False)
    patches, (nh, nw) = _patch_view(unmasked, patch_size)
    return _from_patches(patches[:, :, key.inverse_perm], nh, nw)


def encode(x: Tensor, key: BlockKey, patch_size: int = DEFAULT_PATCH) -> Tensor:
    """Shuffle patches by ``key.perm`` then multiply by ``key.mask``; differentiable."""
    return linear_map(x, lambda a: encode_array(a, key, patch_size),
                      lambda g: decode_array(g, key, patch_size), name="encode")


def decode(x: Tensor, key: BlockKey, patch_size: int = DEFAULT_PATCH) -> Tensor:
    """Exact inverse of :func:`encode` under the same key."""
    return linear_map(x, lambda a: decode_array(a, key, patch_size),
                      lambda g: encode_array(g, key, patch_size), name="decode")
