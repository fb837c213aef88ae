"""Adversarial training: critic and generator updates, the epoch loop, the loss
CSV and checkpoint series."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nn
from .conditioning import ConditioningConfig, ConditioningInputs, window_inputs
from .data import Dataset
from .errors import ConfigError, ContractError, NumericError, ParseError, UserError
from .model import ModelConfig, Networks
from .nn import OptimizerState, Tensor

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "critic_estimate", "gen_adv", "recon", "total")


@dataclass(frozen=True)
class TrainingConfig:
    lambda_recon: float = 0.0005
    learning_rate: float = 0.0001
    epochs: int = 3000
    block_size: int = 128
    clip_bound: float = 0.01
    critic_steps: int = 5
    batch_size: int = 16
    seed: int = 0
    width_multiplier: float = 1.0
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    recon_norm: str = "l1"
    precision: int = 64
    leaky_slope: float = 0.2
    phoneme_channels: int = 16
    f0_channels: int = 16
    singer_channels: int = 16
    noise_channels: int = 4
    inference_noise: bool = True
    checkpoint_every: int = 1

    def __post_init__(self):
        positive = ("learning_rate", "block_size", "clip_bound", "critic_steps", "batch_size",
                    "width_multiplier", "rms_epsilon", "phoneme_channels", "f0_channels",
                    "singer_channels", "noise_channels", "checkpoint_every")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lambda_recon < 0:
            raise ConfigError("lambda_recon must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.block_size % 32 or self.block_size < 64:
            raise ConfigError(f"block_size must be a multiple of 32 and at least 64, got {self.block_size}")
        if self.recon_norm not in ("l1", "l2"):
            raise ConfigError(f"recon_norm must be 'l1' or 'l2', got {self.recon_norm!r}")
        if not 0 < self.rms_decay < 1:
            raise ConfigError("rms_decay must lie in (0, 1)")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")

    def replace(self, **kw) -> TrainingConfig:
        return dataclasses.replace(self, **kw)

    def model_config(self, n_phonemes: int, n_singers: int, f0_min: float, f0_max: float) -> ModelConfig:
        cond = ConditioningConfig(n_phonemes, n_singers, f0_min, f0_max, self.phoneme_channels,
                                  self.f0_channels, self.singer_channels, self.noise_channels)
        return ModelConfig(cond, self.block_size, self.width_multiplier, self.leaky_slope,
                           precision=self.precision)

    # flat key = value text form -------------------------------------------

    @classmethod
    def parse_value(cls, key: str, text: str):
        types = {f.name: f.type for f in fields(cls)}
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        kind = types[key]
        text = text.strip()
        try:
            if kind == "bool":
                low = text.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(text)
                return low in ("true", "1", "yes")
            if kind == "int":
                return int(text)
            if kind == "float":
                return float(text)
            return text
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {kind}") from None

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: TrainingConfig | None = None) -> TrainingConfig:
        parsed = {k: cls.parse_value(k, v) for k, v in values.items()}
        return dataclasses.replace(base or cls(), **parsed)

    @classmethod
    def from_file(cls, path, overrides: dict[str, str] | None = None) -> TrainingConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values = parse_key_values(text, path)
        cfg = cls.from_mapping(values)
        return cls.from_mapping(overrides or {}, cfg)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_key_values(text: str, path=None) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno, path)
        k, v = (x.strip() for x in s.split("=", 1))
        values[k] = v
    return values


@dataclass
class LossReport:
    epoch: int
    wgan_critic_estimate: float
    generator_adv_loss: float
    recon_loss: float
    total_loss: float

    def row(self) -> list[str]:
        return [str(self.epoch)] + [repr(float(v)) for v in (self.wgan_critic_estimate, self.generator_adv_loss,
                                                            self.recon_loss, self.total_loss)]


@dataclass
class Batch:
    inputs: ConditioningInputs
    target: np.ndarray  # (B, 64, N) normalized
    indices: list[tuple[str, int]]


def recon_loss(pred: Tensor, target: np.ndarray, norm: str = "l1") -> Tensor:
    """Batch mean of the per-block norm of ``pred - target``."""
    diff = pred - Tensor(target.astype(pred.data.dtype))
    if norm == "l1":
        per_block = nn.tensor_sum(nn.absolute(diff), axis=(1, 2))
    else:
        per_block = nn.sqrt(nn.tensor_sum(nn.square(diff), axis=(1, 2)))
    return nn.mean(per_block)


def _check_finite(value: float, what: str, batch: Batch) -> None:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what} ({value}) on batch {batch.indices}", batch.indices)


def critic_step(nets: Networks, batch: Batch, opt: OptimizerState, clip_bound: float) -> float:
    """One RMSProp ascent step on E[D(y)] - E[D(G(x))], then clipping.

    Returns the batch estimate measured before the update.
    """
    params = nets.critic_parameters()
    nn.zero_grad(params)
    with nn.no_grad():
        fake = nets.generate(batch.inputs).data
    real_score = nets.critic(Tensor(batch.target.astype(fake.dtype)), batch.inputs)
    fake_score = nets.critic(Tensor(fake), batch.inputs)
    estimate = nn.mean(real_score) - nn.mean(fake_score)
    _check_finite(estimate.item(), "critic estimate", batch)
    nn.backward(-estimate)
    nn.rmsprop_step(params, opt)
    nn.clip_params(params, clip_bound)
    return estimate.item()


def generator_step(nets: Networks, batch: Batch, opt: OptimizerState, lambda_recon: float,
                   norm: str = "l1") -> tuple[float, float, float]:
    """One RMSProp descent step on -E[D(G(x))] + lambda_recon * recon.

    Returns (adversarial, reconstruction, total) measured before the update.
    """
    params = nets.generator_parameters()
    nn.zero_grad(params)
    with nn.frozen(nets.critic_parameters()):
        fake = nets.generate(batch.inputs)
        adv = -nn.mean(nets.critic(fake, batch.inputs))
        rec = recon_loss(fake, batch.target, norm)
        total = adv + lambda_recon * rec
        adv_v, rec_v = adv.item(), rec.item()
        total_v = adv_v + lambda_recon * rec_v
        _check_finite(total.item(), "generator loss", batch)
        nn.backward(total)
    nn.rmsprop_step(params, opt)
    return adv_v, rec_v, total_v


def gan_loss_reference(d_real, d_fake) -> float:
    """Standard GAN value E[log D(y)] + E[log(1 - D(G(x)))] for probabilities in (0, 1).

    Reference only; training uses the Wasserstein objective.
    """
    real = np.asarray(d_real, dtype=np.float64)
    fake = np.asarray(d_fake, dtype=np.float64)
    for name, arr in (("D(y)", real), ("D(G(x))", fake)):
        if arr.size == 0 or np.any(~np.isfinite(arr)) or np.any(arr <= 0) or np.any(arr >= 1):
            raise ConfigError(f"{name} must be probabilities strictly inside (0, 1)")
    return float(np.mean(np.log(real)) + np.mean(np.log1p(-fake)))


@dataclass
class TrainerState:
    epoch: int = 0
    critic_updates: int = 0
    generator_updates: int = 0


class Trainer:
    """Owns both networks, their optimizers and the sampling RNG."""

    def __init__(self, dataset: Dataset, config: TrainingConfig, nets: Networks | None = None):
        self.dataset = dataset
        self.config = config
        m = dataset.manifest
        self.model_config = config.model_config(len(m.phonemes), len(m.singers), m.f0_min, m.f0_max)
        self.nets = nets or Networks.build(self.model_config, config.seed)
        self.gen_opt = OptimizerState(config.learning_rate, config.rms_decay, config.rms_epsilon)
        self.critic_opt = OptimizerState(config.learning_rate, config.rms_decay, config.rms_epsilon)
        self.rng = np.random.default_rng([config.seed, 4])
        self.state = TrainerState()
        self.history: list[LossReport] = []
        self.step_log: list[tuple[int, float, float, float]] = []
        n = config.block_size
        self._tracks = [t for t in dataset.train_tracks if t.n_frames >= n]
        if not self._tracks:
            raise UserError(f"no training track has at least block_size={n} frames")
        self._targets = [dataset.stats.normalize(t.features) for t in self._tracks]
        lengths = np.array([t.n_frames for t in self._tracks], dtype=np.float64)
        self._weights = lengths / lengths.sum()
        total = int(lengths.sum())
        self.steps_per_epoch = -(-total // (n * config.batch_size))

    def sample_batch(self) -> Batch:
        cfg, n = self.config, self.config.block_size
        items, targets, indices = [], [], []
        for _ in range(cfg.batch_size):
            ti = int(self.rng.choice(len(self._tracks), p=self._weights))
            track = self._tracks[ti]
            start = int(self.rng.integers(0, track.n_frames - n + 1))
            items.append(window_inputs(track.annotations, start, n, self.model_config.conditioning, self.rng))
            targets.append(self._targets[ti][:, start:start + n])
            indices.append((track.id, start))
        return Batch(ConditioningInputs.concat(items), np.stack(targets), indices)

    def train_step(self) -> tuple[float, float, float, float]:
        """critic_steps critic updates followed by one generator update."""
        cfg = self.config
        estimates = []
        before = self.state.critic_updates
        for _ in range(cfg.critic_steps):
            estimates.append(critic_step(self.nets, self.sample_batch(), self.critic_opt, cfg.clip_bound))
            self.state.critic_updates += 1
        if self.state.critic_updates - before != cfg.critic_steps:
            raise ContractError("critic schedule violated")
        adv, rec, total = generator_step(self.nets, self.sample_batch(), self.gen_opt, cfg.lambda_recon,
                                         cfg.recon_norm)
        self.state.generator_updates += 1
        est = float(np.mean(estimates))
        self.step_log.append((est, adv, rec, total))
        return est, adv, rec, total

    def run_epoch(self) -> LossReport:
        rows = np.array([self.train_step() for _ in range(self.steps_per_epoch)])
        self.state.epoch += 1
        est, adv, rec, _ = rows.mean(axis=0)
        report = LossReport(self.state.epoch, float(est), float(adv), float(rec),
                            float(adv) + self.config.lambda_recon * float(rec))
        self.history.append(report)
        return report


@dataclass
class TrainResult:
    history: list[LossReport]
    checkpoints: list[Path] = field(default_factory=list)
    latest: Path | None = None
    trainer: Trainer | None = None


def _write_csv(path: Path, history: list[LossReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for r in history:
            w.writerow(r.row())


def read_loss_csv(path) -> list[LossReport]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != LOSS_COLUMNS:
        raise ParseError(f"loss CSV must start with header {','.join(LOSS_COLUMNS)}", path=path)
    return [LossReport(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in rows[1:]]


def train(dataset: Dataset, config: TrainingConfig, out_dir, resume_from=None,
          epochs: int | None = None) -> TrainResult:
    """Train for ``config.epochs`` total epochs (or ``epochs`` when given),
    writing ``checkpoints/``, ``latest.ckpt`` and ``losses.csv`` under ``out_dir``.

    With ``resume_from`` the run continues from that checkpoint's epoch.
    """
    from .checkpoint import load_trainer, save_checkpoint

    out = Path(out_dir)
    try:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UserError(f"cannot create output directory {out}: {exc}") from exc
    target_epochs = config.epochs if epochs is None else epochs
    if resume_from is not None:
        trainer = load_trainer(resume_from, dataset, config)
        csv_path = out / "losses.csv"
        prior = read_loss_csv(csv_path) if csv_path.exists() else []
        trainer.history = [r for r in prior if r.epoch <= trainer.state.epoch]
    else:
        trainer = Trainer(dataset, config)
    (out / "config.txt").write_text(config.to_text())
    result = TrainResult(trainer.history, trainer=trainer)

    def snapshot():
        e = trainer.state.epoch
        latest = save_checkpoint(trainer, out / "latest.ckpt")
        result.latest = latest
        if e == 0 or e % config.checkpoint_every == 0 or e == target_epochs:
            path = out / "checkpoints" / f"epoch_{e:05d}.ckpt"
            save_checkpoint(trainer, path)
            result.checkpoints.append(path)

    if resume_from is None:
        snapshot()
    _write_csv(out / "losses.csv", trainer.history)
    while trainer.state.epoch < target_epochs:
        try:
            report = trainer.run_epoch()
        except NumericError as exc:
            dump = out / f"nonfinite_epoch{trainer.state.epoch + 1:05d}.json"
            dump.write_text(json.dumps({"epoch": trainer.state.epoch + 1, "message": str(exc),
                                        "batch_indices": exc.batch_indices}, indent=1))
            raise
        log.info("epoch %d critic=%.5g adv=%.5g recon=%.5g total=%.5g", report.epoch,
                 report.wgan_critic_estimate, report.generator_adv_loss, report.recon_loss, report.total_loss)
        with open(out / "losses.csv", "a", newline="") as fh:
            csv.writer(fh).writerow(report.row())
        snapshot()
    return result
