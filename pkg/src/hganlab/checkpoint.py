"""Binary checkpoints for :class:`~hganlab.training.HybridGAN`.

Layout (all integers little-endian u32)::

    "HGCK" version count
    count x (name_len name rank extent_1 .. extent_rank float64-LE values)
    meta_len meta

``meta`` is UTF-8 JSON with sorted keys: variant, step count, the training
config echo and the RNG stream states. Tensors are network parameters
(``G/``, ``D/``, ``AR/``) and Adam moments (``adam/G/m/...``), with each
optimizer's step counter stored as a rank-0 tensor. Saving a loaded
checkpoint reproduces the original bytes.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np

from .data import DatasetConfig
from .training import HybridGAN, TrainConfig, config_dict

__all__ = ["FORMAT_VERSION", "CheckpointError", "write_tensors", "read_tensors", "save_checkpoint", "load_checkpoint"]

MAGIC = b"HGCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or incompatible checkpoint."""


def write_tensors(tensors, meta: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


def read_tensors(raw: bytes):
    """Inverse of :func:`write_tensors`: ``(OrderedDict name -> array, meta)``."""
    if raw[:4] != MAGIC:
        raise CheckpointError("not an HGCK checkpoint")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"checkpoint version {version}, this build reads {FORMAT_VERSION}")
        off = 12
        tensors = OrderedDict()
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, off)
            name = raw[off + 4 : off + 4 + n].decode("utf-8")
            off += 4 + n
            (rank,) = struct.unpack_from("<I", raw, off)
            shape = struct.unpack_from(f"<{rank}I", raw, off + 4)
            off += 4 + 4 * rank
            size = int(np.prod(shape)) if rank else 1
            if off + 8 * size > len(raw):
                raise CheckpointError("truncated tensor data")
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
        (m,) = struct.unpack_from("<I", raw, off)
        if off + 4 + m != len(raw):
            raise CheckpointError("trailing or missing bytes after metadata")
        meta = json.loads(raw[off + 4 : off + 4 + m].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    return tensors, meta


def _collect(est: HybridGAN):
    tensors = OrderedDict()
    nets = est.nets_
    for tag, module in nets.named_modules().items():
        for k, p in module.parameters().items():
            tensors[f"{tag}/{k}"] = p.data
    for tag, opt in nets.named_optimizers().items():
        tensors[f"adam/{tag}/t"] = np.array(float(opt.state.t))
        for k in opt.params:
            if k in opt.state.m:
                tensors[f"adam/{tag}/m/{k}"] = opt.state.m[k]
                tensors[f"adam/{tag}/v/{k}"] = opt.state.v[k]
    return tensors


def save_checkpoint(path, est: HybridGAN, config: TrainConfig | None = None) -> bytes:
    """Write ``est`` (and the config that produced it) to ``path``; returns the bytes."""
    params = est.get_params()
    meta = {
        "variant": est.variant,
        "steps_done": int(est.steps_done_),
        "n_features": int(est.n_features_in_),
        "binary": bool(est.binary_),
        "estimator": {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()},
        "config": _jsonable(config_dict(config)) if config is not None else None,
        "rng": {"batches": est.batch_rng_.bit_generator.state, "latent": est.latent_rng_.bit_generator.state},
    }
    raw = write_tensors(_collect(est), meta)
    with open(path, "wb") as fh:
        fh.write(raw)
    return raw


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    return obj


def config_from_meta(meta: dict) -> TrainConfig | None:
    c = meta.get("config")
    if c is None:
        return None
    c = dict(c)
    ds = DatasetConfig(**c.pop("dataset"))
    for k in ("generator_hidden", "discriminator_hidden", "ar_hidden"):
        c[k] = tuple(c[k])
    return TrainConfig(dataset=ds, **c)


def load_checkpoint(path):
    """Rebuild the estimator; returns ``(HybridGAN, TrainConfig or None)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tensors, meta = read_tensors(raw)
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["estimator"].items()}
    est = HybridGAN(**params).initialize(meta["n_features"], meta["binary"])
    nets = est.nets_
    try:
        for tag, module in nets.named_modules().items():
            module.load_state_dict({k: tensors[f"{tag}/{k}"] for k in module.parameters()})
        for tag, opt in nets.named_optimizers().items():
            opt.state.t = int(tensors[f"adam/{tag}/t"])
            for k in opt.params:
                if f"adam/{tag}/m/{k}" in tensors:
                    opt.state.m[k] = tensors[f"adam/{tag}/m/{k}"].copy()
                    opt.state.v[k] = tensors[f"adam/{tag}/v/{k}"].copy()
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not match its own estimator settings: {exc}") from None
    est.batch_rng_.bit_generator.state = meta["rng"]["batches"]
    est.latent_rng_.bit_generator.state = meta["rng"]["latent"]
    est.steps_done_ = meta["steps_done"]
    return est, config_from_meta(meta)
