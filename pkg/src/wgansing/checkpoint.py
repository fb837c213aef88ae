"""Versioned binary checkpoint container.

Layout (little-endian), also described in ``docs/formats.md``::

    magic       8 bytes   b"WGSCKPT\\0"
    version     uint32
    header_len  uint64
    header      header_len bytes of UTF-8 JSON
    payload     concatenated raw arrays; offsets are relative to payload start

The JSON header carries the training config, its hash, the vocabularies,
trainer counters, the sampling RNG state and an ordered array table
(``name``, ``dtype``, ``shape``, ``offset``, ``nbytes``).  Arrays are written in
layer order: generator-side parameters, critic parameters, then the two
RMSProp accumulators in the same order, then the normalization statistics.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NormStats
from .errors import CheckpointError, ConfigError
from .model import ModelConfig, Networks

MAGIC = b"WGSCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")

# keys that may differ between a checkpoint and a resumed run
_RUNTIME_KEYS = ("epochs", "checkpoint_every")


def config_hash(config_dict: dict) -> str:
    core = {k: v for k, v in sorted(config_dict.items()) if k not in _RUNTIME_KEYS}
    return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    header: dict
    arrays: dict[str, np.ndarray]

    @property
    def epoch(self) -> int:
        return int(self.header["epoch"])

    @property
    def config(self):
        from .training import TrainingConfig
        return TrainingConfig(**self.header["config"])

    @property
    def stats(self) -> NormStats:
        return NormStats(self.arrays["norm.min"], self.arrays["norm.max"])

    @property
    def phonemes(self) -> list[str]:
        return list(self.header["phonemes"])

    @property
    def singers(self) -> list[str]:
        return list(self.header["singers"])

    def model_config(self) -> ModelConfig:
        h = self.header
        return self.config.model_config(len(h["phonemes"]), len(h["singers"]), h["f0_min"], h["f0_max"])

    def networks(self) -> Networks:
        cfg = self.model_config()
        nets = Networks.build(cfg, self.config.seed)
        for name, p in nets.named_parameters():
            arr = self.arrays.get(name)
            if arr is None:
                raise CheckpointError(f"checkpoint lacks parameter {name}")
            if arr.shape != p.shape:
                raise CheckpointError(f"parameter {name}: checkpoint shape {arr.shape}, model {p.shape}")
            p.data[...] = arr
        return nets


def _write(path: Path, header: dict, arrays: list[tuple[str, np.ndarray]]) -> Path:
    table, offset, blobs = [], 0, []
    for name, arr in arrays:
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"))
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset,
                      "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = dict(header, arrays=table)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
            fh.write(hbytes)
            for raw in blobs:
                fh.write(raw)
        tmp.replace(path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    payload = memoryview(raw)[start + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(payload):
            raise CheckpointError(f"{path}: array {entry['name']} extends past end of file")
        arrays[entry["name"]] = np.frombuffer(payload[lo:lo + n], dtype=np.dtype(entry["dtype"])).reshape(
            entry["shape"]).copy()
    return Checkpoint(header, arrays)


def save_checkpoint(trainer, path) -> Path:
    cfg = trainer.config.as_dict()
    m = trainer.dataset.manifest
    nets = trainer.nets
    header = {
        "format": "wgansing-checkpoint",
        "epoch": trainer.state.epoch,
        "counters": {"critic_updates": trainer.state.critic_updates,
                     "generator_updates": trainer.state.generator_updates},
        "config": cfg,
        "config_hash": config_hash(cfg),
        "phonemes": list(m.phonemes),
        "singers": list(m.singers),
        "f0_min": m.f0_min,
        "f0_max": m.f0_max,
        "hop_ms": m.hop_ms,
        "holdout": list(m.holdout),
        "rng_state": trainer.rng.bit_generator.state,
    }
    arrays = [(name, p.data) for name, p in nets.named_parameters()]
    for prefix, opt, params in (("opt.gen.", trainer.gen_opt, nets.generator_parameters()),
                                ("opt.critic.", trainer.critic_opt, nets.critic_parameters())):
        ms = opt.mean_square or [np.zeros_like(p.data) for p in params]
        arrays += [(prefix + p.name, a) for p, a in zip(params, ms)]
        header[prefix + "initialized"] = bool(opt.mean_square)
    arrays += [("norm.min", trainer.dataset.stats.minimum), ("norm.max", trainer.dataset.stats.maximum)]
    return _write(Path(path), header, arrays)


def load_trainer(path, dataset, config=None):
    """Rebuild a :class:`~wgansing.training.Trainer` exactly as it was saved.

    ``config`` may change only the epoch budget and checkpoint cadence.
    """
    from .training import Trainer

    ck = read_checkpoint(path)
    saved = ck.config
    if config is not None:
        if config_hash(config.as_dict()) != ck.header["config_hash"]:
            raise ConfigError(f"config differs from the one stored in {path} "
                              "(only epochs/checkpoint_every may change on resume)")
        saved = config
    trainer = Trainer(dataset, saved, ck.networks())
    stats = dataset.stats
    if not (np.array_equal(stats.minimum, ck.arrays["norm.min"]) and np.array_equal(stats.maximum, ck.arrays["norm.max"])):
        raise CheckpointError(f"{path}: normalization statistics do not match the corpus")
    for prefix, opt, params in (("opt.gen.", trainer.gen_opt, trainer.nets.generator_parameters()),
                                ("opt.critic.", trainer.critic_opt, trainer.nets.critic_parameters())):
        if ck.header[prefix + "initialized"]:
            opt.mean_square = [ck.arrays[prefix + p.name].copy() for p in params]
    trainer.rng.bit_generator.state = ck.header["rng_state"]
    trainer.state.epoch = ck.epoch
    trainer.state.critic_updates = ck.header["counters"]["critic_updates"]
    trainer.state.generator_updates = ck.header["counters"]["generator_updates"]
    return trainer

