"""Synthetic multi-modal datasets whose mode identities are known exactly.

Random streams
--------------
All randomness goes through :func:`rng_stream`, a PCG64 generator seeded from
``SeedSequence([seed, crc32(purpose)])``. Data, weight init, latent draws and
minibatch selection each use their own purpose string, so changing how many
latents a run draws never shifts the data it sees.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError

__all__ = [
    "rng_stream",
    "MixtureSpec",
    "PatternDatasetSpec",
    "LabeledBatch",
    "ring_spec",
    "grid_spec",
    "make_base_patterns",
    "sample_mixture",
    "sample_ring",
    "sample_grid",
    "sample_patterns",
    "true_mode_of",
    "pattern_mode_of",
    "write_dataset",
    "read_dataset",
    "DatasetConfig",
]


def rng_stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, purpose)``."""
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), tag])))


@dataclass
class MixtureSpec:
    """Isotropic Gaussian mixture with a shared standard deviation."""

    centers: np.ndarray
    std: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        k = len(self.centers)
        if k < 1:
            raise ContractError("mixture needs at least one center")
        if self.weights is None:
            self.weights = np.full(k, 1.0 / k)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.std <= 0:
            raise ContractError("std must be positive")
        if self.weights.shape != (k,) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ContractError("weights must be K probabilities summing to 1")
        if k > 1:
            diff = self.centers[:, None, :] - self.centers[None, :, :]
            d2 = (diff**2).sum(-1) + np.eye(k)
            if np.any(d2 == 0):
                raise ContractError("mixture centers must be pairwise distinct")

    @property
    def n_modes(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


@dataclass
class PatternDatasetSpec:
    """K binary g x g base patterns composed into Q quadrants of a canvas.

    With Q == 1 the canvas is the pattern itself. With Q == 3 the canvas is
    2g x 2g; quadrants are filled top-left, top-right, bottom-left and the
    bottom-right quadrant stays blank.
    """

    base_patterns: np.ndarray
    quadrant_count: int = 3
    noise_flip_prob: float = 0.0

    def __post_init__(self):
        self.base_patterns = np.asarray(self.base_patterns, dtype=np.float64)
        if self.base_patterns.ndim != 3 or self.base_patterns.shape[1] != self.base_patterns.shape[2]:
            raise ContractError("base_patterns must have shape (K, g, g)")
        k = len(self.base_patterns)
        if k < 2:
            raise ContractError("need at least two base patterns")
        if not np.all((self.base_patterns == 0) | (self.base_patterns == 1)):
            raise ContractError("base patterns must be binary")
        flat = self.base_patterns.reshape(k, -1)
        if len(np.unique(flat, axis=0)) != k:
            raise ContractError("base patterns must be pairwise distinct")
        if self.quadrant_count not in (1, 3):
            raise ContractError("quadrant_count must be 1 or 3")
        if not 0.0 <= self.noise_flip_prob < 0.5:
            raise ContractError("noise_flip_prob must lie in [0, 0.5)")

    @property
    def n_patterns(self) -> int:
        return len(self.base_patterns)

    @property
    def pattern_size(self) -> int:
        return self.base_patterns.shape[1]

    @property
    def canvas_size(self) -> int:
        g = self.pattern_size
        return g if self.quadrant_count == 1 else 2 * g

    @property
    def dim(self) -> int:
        return self.canvas_size**2

    @property
    def n_modes(self) -> int:
        return self.n_patterns**self.quadrant_count

    def quadrant_slices(self):
        g = self.pattern_size
        if self.quadrant_count == 1:
            return [(slice(0, g), slice(0, g))]
        return [
            (slice(0, g), slice(0, g)),
            (slice(0, g), slice(g, 2 * g)),
            (slice(g, 2 * g), slice(0, g)),
        ]


@dataclass
class LabeledBatch:
    samples: np.ndarray
    mode_labels: np.ndarray
    n_modes: int = field(default=0)

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ContractError("batch must be non-empty")
        if len(self.samples) != len(self.mode_labels):
            raise ContractError("samples and labels differ in length")
        if self.n_modes and (self.mode_labels.min() < 0 or self.mode_labels.max() >= self.n_modes):
            raise ContractError("labels out of range")

    def __len__(self):
        return len(self.samples)


# ---------------------------------------------------------------------------
# continuous mixtures


def ring_spec(k: int, radius: float, std: float) -> MixtureSpec:
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return MixtureSpec(centers, std)


def grid_spec(side: int, spacing: float, std: float) -> MixtureSpec:
    """``side x side`` lattice centred on the origin: coordinate ``(i - (side-1)/2) * spacing``."""
    ticks = (np.arange(side) - (side - 1) / 2.0) * spacing
    xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
    return MixtureSpec(np.stack([xx.ravel(), yy.ravel()], axis=1), std)


def sample_mixture(spec: MixtureSpec, n: int, seed: int, stream: str = "data") -> LabeledBatch:
    rng = rng_stream(seed, stream)
    labels = rng.choice(spec.n_modes, size=n, p=spec.weights)
    noise = rng.standard_normal((n, spec.dim))
    x = spec.centers[labels] + spec.std * noise
    return LabeledBatch(x, labels.astype(np.int64), spec.n_modes)


def sample_ring(k: int, radius: float, std: float, n: int, seed: int, stream: str = "data") -> LabeledBatch:
    if k < 1 or n < 1:
        raise ContractError("need k >= 1 and n >= 1")
    return sample_mixture(ring_spec(k, radius, std), n, seed, stream)


def sample_grid(side: int, spacing: float, std: float, n: int, seed: int, stream: str = "data") -> LabeledBatch:
    if side < 1 or n < 1:
        raise ContractError("need side >= 1 and n >= 1")
    return sample_mixture(grid_spec(side, spacing, std), n, seed, stream)


def true_mode_of(spec: MixtureSpec, points) -> np.ndarray:
    """Index of the nearest center; ties go to the lowest index."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != spec.dim:
        raise ContractError(f"point dimension {pts.shape[1]} != {spec.dim}")
    d2 = ((pts[:, None, :] - spec.centers[None, :, :]) ** 2).sum(-1)
    return np.argmin(d2, axis=1)


# ---------------------------------------------------------------------------
# compositional patterns


def make_base_patterns(k: int, g: int, seed: int, min_distance: int = 3) -> np.ndarray:
    """Random binary g x g patterns with pairwise Hamming distance >= ``min_distance``."""
    rng = rng_stream(seed, "patterns")
    chosen: list[np.ndarray] = []
    for _ in range(10000 * k):
        cand = rng.integers(0, 2, size=g * g)
        if all(np.sum(cand != c) >= min_distance for c in chosen):
            chosen.append(cand)
            if len(chosen) == k:
                return np.stack(chosen).reshape(k, g, g).astype(np.float64)
    raise ContractError(f"could not find {k} patterns of size {g} at distance {min_distance}")


def sample_patterns(spec: PatternDatasetSpec, n: int, seed: int, stream: str = "data") -> LabeledBatch:
    rng = rng_stream(seed, stream)
    k, q, s = spec.n_patterns, spec.quadrant_count, spec.canvas_size
    idx = rng.integers(0, k, size=(n, q))
    canvas = np.zeros((n, s, s))
    for j, (rows, cols) in enumerate(spec.quadrant_slices()):
        canvas[:, rows, cols] = spec.base_patterns[idx[:, j]]
    if spec.noise_flip_prob > 0:
        flips = rng.random(canvas.shape) < spec.noise_flip_prob
        canvas = np.where(flips, 1.0 - canvas, canvas)
    weights = k ** np.arange(q - 1, -1, -1)
    labels = idx @ weights
    return LabeledBatch(canvas.reshape(n, -1), labels.astype(np.int64), spec.n_modes)


def pattern_mode_of(spec: PatternDatasetSpec, points) -> np.ndarray:
    """Composite mode label from the nearest base pattern in each quadrant."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != spec.dim:
        raise ContractError(f"point dimension {pts.shape[1]} != {spec.dim}")
    s, k = spec.canvas_size, spec.n_patterns
    imgs = pts.reshape(-1, s, s)
    flat_patterns = spec.base_patterns.reshape(k, -1)
    label = np.zeros(len(pts), dtype=np.int64)
    for rows, cols in spec.quadrant_slices():
        quad = imgs[:, rows, cols].reshape(len(pts), -1)
        d2 = ((quad[:, None, :] - flat_patterns[None]) ** 2).sum(-1)
        label = label * k + np.argmin(d2, axis=1)
    return label


# ---------------------------------------------------------------------------
# HGD1 flat binary export

_MAGIC = b"HGD1"


def write_dataset(path, batch: LabeledBatch) -> None:
    """``HGD1``, u32 n, u32 d, u32 n_modes, float64 samples row-major, u32 labels (all LE)."""
    x = np.ascontiguousarray(batch.samples, dtype="<f8")
    n, d = x.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", n, d, batch.n_modes))
        fh.write(x.tobytes())
        fh.write(np.asarray(batch.mode_labels, dtype="<u4").tobytes())


def read_dataset(path) -> LabeledBatch:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not an HGD1 file")
    n, d, n_modes = struct.unpack_from("<III", raw, 4)
    off = 16
    x = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d).astype(np.float64)
    off += 8 * n * d
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
    return LabeledBatch(x, labels, n_modes)


# ---------------------------------------------------------------------------
# dataset selection by name


@dataclass
class DatasetConfig:
    """Named dataset recipe: ``ring``, ``grid`` or ``patterns``."""

    kind: str = "ring"
    k: int = 8
    radius: float = 2.0
    std: float = 0.02
    side: int = 5
    spacing: float = 2.0
    pattern_size: int = 3
    quadrants: int = 3
    noise: float = 0.0
    pattern_seed: int = 0
    min_distance: int = 3

    def __post_init__(self):
        if self.kind not in ("ring", "grid", "patterns"):
            raise ContractError(f"unknown dataset kind {self.kind!r}")

    def spec(self):
        if self.kind == "ring":
            return ring_spec(self.k, self.radius, self.std)
        if self.kind == "grid":
            return grid_spec(self.side, self.spacing, self.std)
        patterns = make_base_patterns(self.k, self.pattern_size, self.pattern_seed, self.min_distance)
        return PatternDatasetSpec(patterns, self.quadrants, self.noise)

    @property
    def is_binary(self) -> bool:
        return self.kind == "patterns"

    def sample(self, n: int, seed: int, stream: str = "data") -> LabeledBatch:
        spec = self.spec()
        if self.kind == "patterns":
            return sample_patterns(spec, n, seed, stream)
        return sample_mixture(spec, n, seed, stream)

    def labeler(self):
        """Exact mode oracle ``points -> labels`` for this dataset."""
        spec = self.spec()
        if self.kind == "patterns":
            return lambda pts: pattern_mode_of(spec, pts)
        return lambda pts: true_mode_of(spec, pts)

    @property
    def n_modes(self) -> int:
        return self.spec().n_modes
