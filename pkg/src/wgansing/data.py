"""Corpus files: feature container, frame-wise annotations, manifest, and the
synthetic toy corpus used for desk-scale runs.

Byte layouts are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditioning import FrameAnnotations, normalize_f0
from .errors import AlignmentError, ConfigError, CorpusError, ParseError, UserError

FEATURE_MAGIC = b"WGSF"
FEATURE_VERSION = 1
N_CHANNELS = 64
N_HARMONIC = 60
HOP_MS = 5.0
LABEL_BYTES = 8
CHANNEL_LABELS = tuple([f"harm{i:02d}" for i in range(N_HARMONIC)]
                       + [f"aper{i}" for i in range(N_CHANNELS - N_HARMONIC)])
_HEADER = struct.Struct("<4sHHdQ")

MANIFEST_NAME = "manifest.txt"
MANIFEST_FORMAT = "wgansing-corpus-1"


# feature files --------------------------------------------------------------

@dataclass
class FeatureHeader:
    channels: int
    hop_ms: float
    frames: int
    labels: tuple[str, ...]
    version: int = FEATURE_VERSION


def write_features(matrix: np.ndarray, path, hop_ms: float = HOP_MS) -> Path:
    """Write a (64, T) matrix as a binary feature file (frame-major float64)."""
    path = Path(path)
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != N_CHANNELS:
        raise ConfigError(f"feature matrix must be ({N_CHANNELS}, T), got {m.shape}")
    if m.shape[1] == 0:
        raise ConfigError("refusing to write an empty feature matrix")
    if not np.all(np.isfinite(m)):
        raise ConfigError("feature matrix contains non-finite values")
    labels = b"".join(lbl.encode("ascii").ljust(LABEL_BYTES, b"\0") for lbl in CHANNEL_LABELS)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, N_CHANNELS, hop_ms, m.shape[1]))
            fh.write(labels)
            fh.write(np.ascontiguousarray(m.T).astype("<f8").tobytes())
    except OSError as exc:
        raise CorpusError(f"cannot write feature file {path}: {exc}") from exc
    return path


def read_feature_header(path) -> FeatureHeader:
    return _read_features(Path(path), header_only=True)[0]


def read_features(path) -> np.ndarray:
    """(64, T) float64 matrix from a binary feature file."""
    return _read_features(Path(path))[1]


def _read_features(path: Path, header_only: bool = False):
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorpusError(f"cannot read feature file {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise ParseError("truncated header", path=path)
    magic, version, channels, hop_ms, frames = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise ParseError(f"bad magic {magic!r}", path=path)
    if version != FEATURE_VERSION:
        raise ParseError(f"unsupported feature file version {version}", path=path)
    off = _HEADER.size
    lab = raw[off:off + channels * LABEL_BYTES]
    labels = tuple(lab[i:i + LABEL_BYTES].rstrip(b"\0").decode("ascii")
                   for i in range(0, len(lab), LABEL_BYTES))
    header = FeatureHeader(channels, hop_ms, frames, labels, version)
    if header_only:
        return header, None
    off += channels * LABEL_BYTES
    payload = raw[off:]
    if len(payload) != frames * channels * 8:
        raise ParseError(f"payload holds {len(payload)} bytes, header declares {frames}x{channels} float64",
                         path=path)
    m = np.frombuffer(payload, dtype="<f8").reshape(frames, channels).T.astype(np.float64)
    if not np.all(np.isfinite(m)):
        raise ParseError("non-finite values in payload", path=path)
    return header, m


def write_features_text(matrix: np.ndarray, path, hop_ms: float = HOP_MS) -> Path:
    """Debug export: one frame per line, tab separated, labelled header row."""
    path = Path(path)
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise ConfigError(f"cannot export feature matrix of shape {m.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"# hop_ms={hop_ms} frames={m.shape[1]}\n")
        fh.write("\t".join(CHANNEL_LABELS[:m.shape[0]]) + "\n")
        for frame in m.T:
            fh.write("\t".join(repr(float(v)) for v in frame) + "\n")
    return path


# annotations -------------------------------------------------------------------

def parse_annotations(path, singer_id: int = 0, hop_ms: float = HOP_MS) -> FrameAnnotations:
    """Read ``phoneme_id<TAB>f0_hz`` lines; f0 of 0 marks an unvoiced frame."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read annotations {path}: {exc}") from exc
    ids, f0 = [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"expected 'phoneme_id<TAB>f0_hz', got {line!r}", lineno, path)
        try:
            pid = int(fields[0])
            hz = float(fields[1])
        except ValueError:
            raise ParseError(f"cannot parse {line!r}", lineno, path) from None
        if pid < 0:
            raise ParseError(f"negative phoneme id {pid}", lineno, path)
        if hz < 0 or not math.isfinite(hz):
            raise ParseError(f"f0 must be a finite value >= 0, got {hz}", lineno, path)
        ids.append(pid)
        f0.append(hz)
    if not ids:
        raise ParseError("annotation file has no frames", path=path)
    return FrameAnnotations(np.array(ids), np.array(f0), singer_id, hop_ms)


def write_annotations(ann: FrameAnnotations, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{int(p)}\t{float(f)!r}\n" for p, f in zip(ann.phoneme_ids, ann.f0_hz)))
    return path


def read_vocab(path) -> list[str]:
    try:
        return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise CorpusError(f"cannot read vocabulary {path}: {exc}") from exc


# manifest ------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackEntry:
    id: str
    singer: str
    annotations: str
    features: str
    frames: int


@dataclass
class CorpusManifest:
    root: Path
    phonemes_file: str
    singers_file: str
    tracks: list[TrackEntry]
    holdout: tuple[str, ...] = ()
    f0_min: float = 50.0
    f0_max: float = 1000.0
    hop_ms: float = HOP_MS
    phonemes: list[str] = field(default_factory=list)
    singers: list[str] = field(default_factory=list)

    def singer_index(self, name: str) -> int:
        try:
            return self.singers.index(name)
        except ValueError:
            raise CorpusError(f"singer {name!r} not in {self.singers_file}") from None


def write_manifest(m: CorpusManifest) -> Path:
    lines = [
        "# wgansing corpus manifest: key = value header, then a tab-separated [tracks] table",
        f"format = {MANIFEST_FORMAT}",
        f"phonemes = {m.phonemes_file}",
        f"singers = {m.singers_file}",
        f"f0_min = {m.f0_min!r}",
        f"f0_max = {m.f0_max!r}",
        f"hop_ms = {m.hop_ms!r}",
        f"holdout = {','.join(m.holdout)}",
        "[tracks]",
    ]
    for t in sorted(m.tracks, key=lambda t: t.id):
        lines.append(f"{t.id}\t{t.singer}\t{t.annotations}\t{t.features}\t{t.frames}")
    path = Path(m.root) / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> CorpusManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read manifest {path}: {exc}") from exc
    keys: dict[str, str] = {}
    tracks: list[TrackEntry] = []
    in_tracks = False
    for lineno, line in enumerate(lines, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s == "[tracks]":
            in_tracks = True
            continue
        if not in_tracks:
            if "=" not in s:
                raise ParseError(f"expected 'key = value', got {s!r}", lineno, path)
            k, v = (x.strip() for x in s.split("=", 1))
            keys[k] = v
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise ParseError(f"track row needs 5 tab-separated columns, got {len(cols)}", lineno, path)
        try:
            frames = int(cols[4])
        except ValueError:
            raise ParseError(f"bad frame count {cols[4]!r}", lineno, path) from None
        tracks.append(TrackEntry(cols[0], cols[1], cols[2], cols[3], frames))
    if keys.get("format") != MANIFEST_FORMAT:
        raise ParseError(f"manifest format must be {MANIFEST_FORMAT!r}, got {keys.get('format')!r}", path=path)
    for k in ("phonemes", "singers"):
        if k not in keys:
            raise ParseError(f"missing key {k!r}", path=path)
    ids = [t.id for t in tracks]
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate track ids", path=path)
    holdout = tuple(h for h in keys.get("holdout", "").split(",") if h.strip())
    unknown = set(holdout) - set(ids)
    if unknown:
        raise ParseError(f"holdout ids not in track table: {sorted(unknown)}", path=path)
    root = path.parent
    m = CorpusManifest(root, keys["phonemes"], keys["singers"], sorted(tracks, key=lambda t: t.id),
                       holdout, float(keys.get("f0_min", 50.0)), float(keys.get("f0_max", 1000.0)),
                       float(keys.get("hop_ms", HOP_MS)))
    m.phonemes = read_vocab(root / m.phonemes_file)
    m.singers = read_vocab(root / m.singers_file)
    return m


# dataset ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    """Per-channel min/max; maps the training split onto [-1, 1]."""

    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def scale(self) -> np.ndarray:
        span = self.maximum - self.minimum
        return np.where(span > 0, span, 1.0)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (x - self.minimum[:, None]) / self.scale[:, None] - 1.0

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) + 1.0) * 0.5 * self.scale[:, None] + self.minimum[:, None]


def compute_norm_stats(matrices) -> NormStats:
    matrices = list(matrices)
    if not matrices:
        raise UserError("cannot compute normalization statistics from zero tracks")
    return NormStats(np.min([m.min(axis=1) for m in matrices], axis=0),
                     np.max([m.max(axis=1) for m in matrices], axis=0))


@dataclass(frozen=True)
class Track:
    id: str
    annotations: FrameAnnotations
    features: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.features.shape[1]


@dataclass
class Dataset:
    manifest: CorpusManifest
    tracks: list[Track]
    stats: NormStats

    @property
    def holdout_ids(self) -> tuple[str, ...]:
        return self.manifest.holdout

    @property
    def train_tracks(self) -> list[Track]:
        return [t for t in self.tracks if t.id not in self.manifest.holdout]

    @property
    def holdout_tracks(self) -> list[Track]:
        return [t for t in self.tracks if t.id in self.manifest.holdout]

    def track(self, track_id: str) -> Track:
        for t in self.tracks:
            if t.id == track_id:
                return t
        raise KeyError(track_id)


def load_corpus(manifest_path) -> Dataset:
    """Load every track; statistics come from the non-holdout tracks only."""
    m = read_manifest(manifest_path)
    tracks = []
    for entry in m.tracks:
        singer = m.singer_index(entry.singer)
        ann = parse_annotations(m.root / entry.annotations, singer, m.hop_ms)
        header, feats = _read_features(m.root / entry.features)
        if header.channels != N_CHANNELS:
            raise AlignmentError(f"track {entry.id}: feature file has {header.channels} channels")
        if not (len(ann) == feats.shape[1] == entry.frames):
            raise AlignmentError(f"track {entry.id}: annotations have {len(ann)} frames, features "
                                 f"{feats.shape[1]}, manifest declares {entry.frames}")
        try:
            ann.validate(len(m.phonemes), len(m.singers), m.f0_min, m.f0_max)
        except UserError as exc:
            raise CorpusError(f"track {entry.id}: {exc}") from exc
        tracks.append(Track(entry.id, ann, feats))
    if not tracks:
        raise CorpusError(f"manifest {manifest_path} lists no tracks")
    train = [t.features for t in tracks if t.id not in m.holdout]
    return Dataset(m, tracks, compute_norm_stats(train))


# toy corpus ----------------------------------------------------------------------------

def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    """Centred moving average along the last axis with edge replication."""
    if width <= 1:
        return x
    half = width // 2
    xp = np.concatenate([np.repeat(x[..., :1], half, axis=-1), x, np.repeat(x[..., -1:], half, axis=-1)],
                        axis=-1)
    c = np.cumsum(xp, axis=-1)
    c = np.concatenate([np.zeros(x.shape[:-1] + (1,)), c], axis=-1)
    return (c[..., width:] - c[..., :-width]) / width


def _smooth_channel_profiles(rng: np.random.Generator, n: int, amplitude: float) -> np.ndarray:
    c = np.arange(N_CHANNELS) / (N_CHANNELS - 1)
    out = np.zeros((n, N_CHANNELS))
    for k in range(1, 4):
        a = rng.uniform(-1.0, 1.0, size=(n, 1)) / k
        phase = rng.uniform(0.0, 2 * np.pi, size=(n, 1))
        out += a * np.cos(np.pi * k * c[None, :] + phase)
    return amplitude * out


@dataclass(frozen=True)
class ToyRule:
    """Noiseless generative rule of the toy corpus.

    features[:, t] = smoothed phoneme template + singer offset
                     + singer f0 gain * normalized f0 (voiced frames only)
    """

    phoneme_templates: np.ndarray  # (P, 64)
    singer_offsets: np.ndarray  # (S, 64)
    singer_f0_gain: np.ndarray  # (S, 64)
    f0_min: float = 50.0
    f0_max: float = 1000.0
    smoothing: int = 5

    @classmethod
    def from_seed(cls, seed: int, n_singers: int, n_phonemes: int,
                  f0_min: float = 50.0, f0_max: float = 1000.0) -> ToyRule:
        rng = np.random.default_rng([seed, 101])
        ph = _smooth_channel_profiles(rng, n_phonemes, 1.0)
        ph[0] *= 0.2  # silence
        return cls(ph, _smooth_channel_profiles(rng, n_singers, 0.5),
                   _smooth_channel_profiles(rng, n_singers, 0.5), f0_min, f0_max)

    def render(self, ann: FrameAnnotations) -> np.ndarray:
        base = _smooth(self.phoneme_templates[ann.phoneme_ids].T, self.smoothing)
        f0n = normalize_f0(ann.f0_hz, self.f0_min, self.f0_max)[0] * (ann.f0_hz > 0)
        return (base + self.singer_offsets[ann.singer_id][:, None]
                + self.singer_f0_gain[ann.singer_id][:, None] * f0n[None, :])


def toy_annotations(rng: np.random.Generator, n_frames: int, n_phonemes: int, singer_id: int,
                    base_hz: float) -> FrameAnnotations:
    """Piecewise-constant phonemes, smooth note contour with vibrato, silent gaps unvoiced."""
    ids = np.empty(n_frames, dtype=np.int64)
    notes = np.empty(n_frames)
    t = 0
    while t < n_frames:
        seg = int(rng.integers(10, 41))
        silent = rng.random() < 0.15
        ids[t:t + seg] = 0 if silent else rng.integers(1, n_phonemes)
        notes[t:t + seg] = rng.integers(-5, 8)
        t += seg
    semis = _smooth(notes, 9) + 0.3 * np.sin(2 * np.pi * 5.5 * np.arange(n_frames) * HOP_MS / 1000.0)
    f0 = base_hz * 2.0 ** (semis / 12.0)
    f0[ids == 0] = 0.0
    return FrameAnnotations(ids, f0, singer_id, HOP_MS)


def make_toy_corpus(out_dir, seed: int = 0, n_singers: int = 2, n_phonemes: int = 10,
                    n_tracks: int = 8, n_frames: int = 512, n_holdout: int = 2,
                    noise_std: float = 0.01) -> CorpusManifest:
    """Write a synthetic corpus whose features follow :class:`ToyRule` plus Gaussian noise.

    The last ``n_holdout`` tracks (by id) are held out.
    """
    if n_singers < 1 or n_phonemes < 2 or n_tracks < 1 or n_frames < 1:
        raise ConfigError("toy corpus needs >=1 singer, >=2 phonemes, >=1 track, >=1 frame")
    if not 0 <= n_holdout < n_tracks:
        raise ConfigError(f"n_holdout must be in [0, {n_tracks}), got {n_holdout}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rule = ToyRule.from_seed(seed, n_singers, n_phonemes)
    rng = np.random.default_rng([seed, 202])
    phonemes = ["sil"] + [f"ph{i:02d}" for i in range(1, n_phonemes)]
    singers = [f"singer{i:02d}" for i in range(n_singers)]
    (root / "phonemes.txt").write_text("\n".join(phonemes) + "\n")
    (root / "singers.txt").write_text("\n".join(singers) + "\n")
    base_hz = np.geomspace(220.0, 130.0, n_singers) if n_singers > 1 else np.array([180.0])
    entries = []
    for i in range(n_tracks):
        tid = f"track{i:03d}"
        singer = i % n_singers
        ann = toy_annotations(rng, n_frames, n_phonemes, singer, float(base_hz[singer]))
        feats = rule.render(ann)
        if noise_std > 0:
            feats = feats + noise_std * rng.standard_normal(feats.shape)
        write_annotations(ann, root / "annotations" / f"{tid}.txt")
        write_features(feats, root / "features" / f"{tid}.wgf")
        entries.append(TrackEntry(tid, singers[singer], f"annotations/{tid}.txt", f"features/{tid}.wgf", n_frames))
    holdout = tuple(e.id for e in entries[n_tracks - n_holdout:])
    m = CorpusManifest(root, "phonemes.txt", "singers.txt", entries, holdout, rule.f0_min, rule.f0_max, HOP_MS,
                       phonemes, singers)
    write_manifest(m)
    return m
