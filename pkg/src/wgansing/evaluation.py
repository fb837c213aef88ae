"""Mel-cepstral distortion and hold-out evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import read_checkpoint
from .data import N_HARMONIC, Dataset
from .errors import ConfigError, DimensionError
from .inference import synthesize_track

MCD_CONST = 10.0 / math.log(10.0)
DEFAULT_RANGE = (1, N_HARMONIC)


@dataclass(frozen=True)
class McdResult:
    track_id: str
    mcd_db: float
    frames_compared: int
    channel_range: tuple[int, int] = DEFAULT_RANGE


def mcd(pred: np.ndarray, ref: np.ndarray, channel_range: tuple[int, int] = DEFAULT_RANGE,
        frame_mask: np.ndarray | None = None, track_id: str = "") -> McdResult:
    """Mean over frames of (10 / ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2).

    Coefficients ``channel_range`` = [lo, hi) of the harmonic block are compared;
    the default skips coefficient 0 (energy).
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise DimensionError("shape", f"prediction {pred.shape} vs reference {ref.shape}")
    lo, hi = channel_range
    if not 0 <= lo < hi <= min(N_HARMONIC, pred.shape[0]):
        raise ConfigError(f"channel range {channel_range} must lie within the {N_HARMONIC} harmonic coefficients")
    diff = pred[lo:hi] - ref[lo:hi]
    if frame_mask is not None:
        diff = diff[:, np.asarray(frame_mask, dtype=bool)]
    frames = diff.shape[1]
    if frames == 0:
        raise ConfigError("no frames to compare")
    per_frame = MCD_CONST * np.sqrt(2.0 * np.sum(diff * diff, axis=0))
    return McdResult(track_id, float(per_frame.mean()), frames, (lo, hi))


@dataclass
class HoldoutReport:
    """MCD per hold-out track for one or more labelled checkpoints."""

    status: str  # "ok" or "empty"
    results: dict[str, list[McdResult]] = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return list(self.results)

    def table(self) -> str:
        if self.status == "empty":
            return "no hold-out tracks: nothing evaluated"
        labels = self.labels
        ids = [r.track_id for r in self.results[labels[0]]]
        width = max([5] + [len(i) for i in ids])
        lines = ["Track".ljust(width) + "".join(f"  {lbl:>16}" for lbl in labels)]
        for i, tid in enumerate(ids):
            lines.append(tid.ljust(width) + "".join(f"  {self.results[lbl][i].mcd_db:13.2f} dB" for lbl in labels))
        return "\n".join(lines)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        multi = len(self.results) > 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["track", "mcd_db", "frames"] + (["model"] if multi else []))
            for label, rows in self.results.items():
                for r in rows:
                    w.writerow([r.track_id, repr(r.mcd_db), r.frames_compared] + ([label] if multi else []))
        return path


def evaluate_holdout(checkpoints, dataset: Dataset, seed: int = 0,
                     channel_range: tuple[int, int] = DEFAULT_RANGE, voiced_only: bool = False) -> HoldoutReport:
    """Synthesize each hold-out track with its own f0, phonemes and singer and score it.

    ``checkpoints`` is a path or a ``{label: path}`` mapping.
    """
    if not isinstance(checkpoints, dict):
        checkpoints = {"WGAN + L_recon": checkpoints}
    loaded = {label: read_checkpoint(path) for label, path in checkpoints.items()}
    tracks = dataset.holdout_tracks
    if not tracks:
        return HoldoutReport("empty")
    report = HoldoutReport("ok")
    for label, ck in loaded.items():
        nets = ck.networks()
        noise = ck.config.inference_noise
        rows = []
        for t in tracks:
            pred = synthesize_track(t.annotations, nets, ck.stats, seed, noise=noise)
            mask = t.annotations.f0_hz > 0 if voiced_only else None
            rows.append(mcd(pred, t.features, channel_range, mask, t.id))
        report.results[label] = rows
    return report
