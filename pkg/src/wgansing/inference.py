"""Full-track synthesis by overlap-adding generator blocks at 50% overlap."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .conditioning import ConditioningConfig, ConditioningInputs, FrameAnnotations, window_inputs
from .data import HOP_MS, NormStats, write_features, write_features_text
from .errors import ConfigError, DegenerateInputError
from .model import Networks

BlockFn = Callable[[ConditioningInputs], np.ndarray]


class InputTooShortError(DegenerateInputError):
    pass


def triangular_window(n: int) -> np.ndarray:
    """Symmetric triangle with w[i] + w[i + n/2] == 1, e.g. n=4 -> [.25, .75, .75, .25]."""
    if n < 2 or n % 2:
        raise ConfigError(f"triangular window length must be even and >= 2, got {n}")
    h = n // 2
    rise = (np.arange(h) + 0.5) / h
    return np.concatenate([rise, 1.0 - rise])


@dataclass(frozen=True)
class SynthesisPlan:
    track_length: int
    block_size: int
    block_starts: tuple[int, ...]

    @property
    def hop(self) -> int:
        return self.block_size // 2

    @property
    def window(self) -> np.ndarray:
        return triangular_window(self.block_size)

    @property
    def padded_length(self) -> int:
        return self.block_starts[-1] + self.block_size

    def block_weights(self, k: int) -> np.ndarray:
        """Effective weights of block ``k``; half-blocks covered by no neighbour get weight 1."""
        w = self.window
        if k == 0:
            w[:self.hop] = 1.0
        if k == len(self.block_starts) - 1:
            w[self.hop:] = 1.0
        return w


def plan_synthesis(track_length: int, block_size: int) -> SynthesisPlan:
    if track_length < block_size:
        raise InputTooShortError(f"track has {track_length} frames, fewer than the block size {block_size}; "
                                 "pad the annotations (e.g. repeat the last frame) to at least one block")
    if block_size % 2:
        raise ConfigError(f"block size must be even, got {block_size}")
    hop = block_size // 2
    starts = [0]
    while starts[-1] + block_size < track_length:
        starts.append(starts[-1] + hop)
    return SynthesisPlan(track_length, block_size, tuple(starts))


def overlap_add(blocks: np.ndarray, plan: SynthesisPlan) -> np.ndarray:
    """Combine (K, C, N) block predictions into a (C, T) track."""
    blocks = np.asarray(blocks)
    if blocks.shape[0] != len(plan.block_starts) or blocks.shape[-1] != plan.block_size:
        raise ConfigError(f"expected {len(plan.block_starts)} blocks of {plan.block_size} frames, "
                          f"got {blocks.shape}")
    if len(plan.block_starts) == 1:
        return blocks[0][:, :plan.track_length].copy()
    out = np.zeros((blocks.shape[1], plan.padded_length), dtype=np.float64)
    n = plan.block_size
    for k, start in enumerate(plan.block_starts):
        out[:, start:start + n] += blocks[k] * plan.block_weights(k)
    return out[:, :plan.track_length]


def synthesize_track(ann: FrameAnnotations, generator: Union[Networks, BlockFn], stats: NormStats | None,
                     seed: int | None = 0, *, block_size: int | None = None,
                     conditioning: ConditioningConfig | None = None, semitones: float = 0.0,
                     noise: bool = True) -> np.ndarray:
    """Generate a (64, T) feature track for ``ann``.

    ``generator`` is a trained :class:`Networks` or any callable mapping
    :class:`ConditioningInputs` to normalized (B, 64, N) blocks.  Blocks are
    combined in the normalized domain and denormalized once with ``stats``
    (skipped when ``stats`` is None).  Noise comes from one RNG seeded with
    ``seed`` per track.
    """
    if isinstance(generator, Networks):
        block_size = block_size or generator.cfg.block_size
        conditioning = conditioning or generator.cfg.conditioning
        fn: BlockFn = generator.predict
    else:
        fn = generator
    if block_size is None or conditioning is None:
        raise ConfigError("block_size and conditioning are required for a bare generator callable")
    plan = plan_synthesis(len(ann), block_size)
    padded = ann.padded(plan.padded_length)
    rng = np.random.default_rng(seed) if noise and seed is not None else None
    inputs = ConditioningInputs.concat(window_inputs(padded, s, block_size, conditioning, rng, semitones)
                                       for s in plan.block_starts)
    blocks = np.asarray(fn(inputs), dtype=np.float64)
    track = overlap_add(blocks, plan)
    return stats.denormalize(track) if stats is not None else track


def export_features(matrix: np.ndarray, path, text: bool = False, hop_ms: float = HOP_MS) -> Path:
    """Write synthesized features in the corpus feature format (or the text debug form)."""
    m = np.asarray(matrix)
    if m.size == 0:
        raise ConfigError("cannot export an empty feature matrix")
    return write_features_text(m, path, hop_ms) if text else write_features(m, path, hop_ms)
