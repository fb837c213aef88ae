"""Generator input assembly: phoneme one-hot, log-f0 with an unvoiced flag and a
broadcast singer one-hot, each through a learned 1x1 projection, plus uniform
noise channels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import BoundsError, ConfigError, RangeError, VocabularyError
from .nn import ConvLayerSpec, Tensor

F0_INPUT_CHANNELS = 2  # normalized log-f0, unvoiced flag


@dataclass
class FrameAnnotations:
    phoneme_ids: np.ndarray
    f0_hz: np.ndarray
    singer_id: int
    frame_hop_ms: float = 5.0

    def __post_init__(self):
        self.phoneme_ids = np.asarray(self.phoneme_ids, dtype=np.int64)
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        if self.phoneme_ids.ndim != 1 or self.f0_hz.shape != self.phoneme_ids.shape:
            raise ConfigError(f"phoneme ids {self.phoneme_ids.shape} and f0 {self.f0_hz.shape} "
                              "must be 1-D sequences of equal length")
        if self.frame_hop_ms <= 0:
            raise ConfigError("frame_hop_ms must be positive")

    def __len__(self) -> int:
        return len(self.phoneme_ids)

    def validate(self, n_phonemes: int, n_singers: int, f0_min: float, f0_max: float) -> None:
        encode_phonemes(self.phoneme_ids, n_phonemes)
        if not 0 <= self.singer_id < n_singers:
            raise VocabularyError(f"singer id {self.singer_id} outside [0, {n_singers})")
        normalize_f0(self.f0_hz, f0_min, f0_max)

    def padded(self, length: int) -> FrameAnnotations:
        """Extend to ``length`` frames by repeating the last frame."""
        extra = length - len(self)
        if extra <= 0:
            return self
        return FrameAnnotations(np.concatenate([self.phoneme_ids, np.repeat(self.phoneme_ids[-1:], extra)]),
                                np.concatenate([self.f0_hz, np.repeat(self.f0_hz[-1:], extra)]),
                                self.singer_id, self.frame_hop_ms)

    def window(self, start: int, n: int) -> FrameAnnotations:
        if start < 0 or start + n > len(self):
            raise BoundsError(f"window [{start}, {start + n}) outside track of {len(self)} frames")
        return FrameAnnotations(self.phoneme_ids[start:start + n], self.f0_hz[start:start + n],
                                self.singer_id, self.frame_hop_ms)


def encode_phonemes(phoneme_ids, n_phonemes: int) -> np.ndarray:
    """(P, T) one-hot matrix."""
    ids = np.asarray(phoneme_ids, dtype=np.int64)
    bad = np.flatnonzero((ids < 0) | (ids >= n_phonemes))
    if bad.size:
        i = int(bad[0])
        raise VocabularyError(f"phoneme id {ids[i]} at frame {i} outside vocabulary of size {n_phonemes}", frame=i)
    out = np.zeros((n_phonemes, ids.size))
    out[ids, np.arange(ids.size)] = 1.0
    return out


def encode_singer(singer_id: int, n_singers: int, n_frames: int) -> np.ndarray:
    """(S, T) one-hot broadcast along time."""
    if not 0 <= singer_id < n_singers:
        raise VocabularyError(f"singer id {singer_id} outside [0, {n_singers})")
    out = np.zeros((n_singers, n_frames))
    out[singer_id] = 1.0
    return out


def normalize_f0(f0_hz, f0_min: float, f0_max: float) -> np.ndarray:
    """Map voiced frames to [-1, 1] on a log scale; unvoiced (0 Hz) frames to -1.

    Returns a (1, T) array.
    """
    if not 0 < f0_min < f0_max:
        raise ConfigError(f"need 0 < f0_min < f0_max, got {f0_min}, {f0_max}")
    f0 = np.asarray(f0_hz, dtype=np.float64)
    voiced = f0 > 0
    bad = np.flatnonzero((f0 < 0) | (voiced & ((f0 < f0_min) | (f0 > f0_max))) | ~np.isfinite(f0))
    if bad.size:
        i = int(bad[0])
        raise RangeError(f"f0 {f0[i]} Hz at frame {i} outside [{f0_min}, {f0_max}]")
    lo, hi = math.log(f0_min), math.log(f0_max)
    out = np.full(f0.shape, -1.0)
    out[voiced] = 2.0 * (np.log(f0[voiced]) - lo) / (hi - lo) - 1.0
    return out[None, :]


def f0_features(f0_hz, f0_min: float, f0_max: float) -> np.ndarray:
    """(2, T): normalized f0 stacked with the unvoiced flag."""
    f0 = np.asarray(f0_hz, dtype=np.float64)
    return np.concatenate([normalize_f0(f0, f0_min, f0_max), (f0 == 0).astype(np.float64)[None, :]])


def transpose_f0(f0_hz, semitones: float, f0_min: float | None = None, f0_max: float | None = None) -> np.ndarray:
    """Shift voiced frames by ``semitones``; optionally clamp into [f0_min, f0_max]."""
    f0 = np.asarray(f0_hz, dtype=np.float64) * 1.0
    voiced = f0 > 0
    f0[voiced] *= 2.0 ** (semitones / 12.0)
    if f0_min is not None and f0_max is not None:
        f0[voiced] = np.clip(f0[voiced], f0_min, f0_max)
    return f0


@dataclass(frozen=True)
class ConditioningConfig:
    n_phonemes: int
    n_singers: int
    f0_min: float = 50.0
    f0_max: float = 1000.0
    phoneme_channels: int = 16
    f0_channels: int = 16
    singer_channels: int = 16
    noise_channels: int = 4

    @property
    def out_channels(self) -> int:
        return self.phoneme_channels + self.f0_channels + self.singer_channels + self.noise_channels

    @property
    def raw_channels(self) -> int:
        """Channel count of the un-projected stack (one-hots plus f0 features)."""
        return self.n_phonemes + F0_INPUT_CHANNELS + self.n_singers


@dataclass
class ConditioningInputs:
    """Un-projected conditioning for a batch of windows, each (B, C, N)."""

    phonemes: np.ndarray
    f0: np.ndarray
    singer: np.ndarray
    noise: np.ndarray
    starts: tuple[int, ...] = ()

    @property
    def n_frames(self) -> int:
        return self.phonemes.shape[-1]

    @property
    def batch_size(self) -> int:
        return self.phonemes.shape[0]

    def stack(self) -> np.ndarray:
        """Phoneme, f0 and singer channels concatenated (the critic's view)."""
        return np.concatenate([self.phonemes, self.f0, self.singer], axis=1)

    def astype(self, dtype) -> ConditioningInputs:
        return ConditioningInputs(self.phonemes.astype(dtype), self.f0.astype(dtype),
                                  self.singer.astype(dtype), self.noise.astype(dtype), self.starts)

    @staticmethod
    def concat(items) -> ConditioningInputs:
        items = list(items)
        return ConditioningInputs(*(np.concatenate([getattr(it, k) for it in items])
                                    for k in ("phonemes", "f0", "singer", "noise")),
                                  starts=tuple(s for it in items for s in it.starts))


@dataclass
class ConditioningBlock:
    projected_phoneme: Tensor
    projected_f0: Tensor
    projected_singer: Tensor
    noise: Tensor
    concatenated: Tensor
    inputs: ConditioningInputs

    @property
    def n_frames(self) -> int:
        return self.concatenated.shape[-1]


def window_inputs(ann: FrameAnnotations, start: int, n: int, cfg: ConditioningConfig,
                  rng: np.random.Generator | None, semitones: float = 0.0) -> ConditioningInputs:
    """Raw conditioning for frames [start, start + n) of one track.

    ``rng`` supplies the uniform noise; ``None`` gives zero noise channels.
    """
    win = ann.window(start, n)
    f0 = win.f0_hz if semitones == 0 else transpose_f0(win.f0_hz, semitones, cfg.f0_min, cfg.f0_max)
    noise = (rng.uniform(-1.0, 1.0, size=(cfg.noise_channels, n)) if rng is not None
             else np.zeros((cfg.noise_channels, n)))
    return ConditioningInputs(encode_phonemes(win.phoneme_ids, cfg.n_phonemes)[None],
                              f0_features(f0, cfg.f0_min, cfg.f0_max)[None],
                              encode_singer(ann.singer_id, cfg.n_singers, n)[None],
                              noise[None], starts=(start,))


class Conditioner:
    """The three learned 1x1 projections."""

    def __init__(self, cfg: ConditioningConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        self.phoneme_proj = nn.Conv1d(ConvLayerSpec(cfg.n_phonemes, cfg.phoneme_channels, 1),
                                      rng, "cond.phoneme", dtype)
        self.f0_proj = nn.Conv1d(ConvLayerSpec(F0_INPUT_CHANNELS, cfg.f0_channels, 1), rng, "cond.f0", dtype)
        self.singer_proj = nn.Conv1d(ConvLayerSpec(cfg.n_singers, cfg.singer_channels, 1),
                                     rng, "cond.singer", dtype)

    @property
    def layers(self) -> list[nn.Conv1d]:
        return [self.phoneme_proj, self.f0_proj, self.singer_proj]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, inputs: ConditioningInputs) -> ConditioningBlock:
        inputs = inputs.astype(self.dtype)
        ph = self.phoneme_proj(Tensor(inputs.phonemes))
        f0 = self.f0_proj(Tensor(inputs.f0))
        sg = self.singer_proj(Tensor(inputs.singer))
        noise = Tensor(inputs.noise)
        return ConditioningBlock(ph, f0, sg, noise, nn.concat([ph, f0, sg, noise], axis=1), inputs)


def assemble_block(ann: FrameAnnotations, start: int, n: int, conditioner: Conditioner,
                   rng_seed: int | None, semitones: float = 0.0) -> ConditioningBlock:
    """Conditioning block for one window; ``rng_seed=None`` disables noise."""
    rng = None if rng_seed is None else np.random.default_rng(rng_seed)
    return conditioner(window_inputs(ann, start, n, conditioner.cfg, rng, semitones))
