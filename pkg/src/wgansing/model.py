"""Generator (1-D conv U-Net) and conditional critic."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .conditioning import ConditioningBlock, ConditioningConfig, ConditioningInputs, Conditioner
from .errors import ConfigError, DimensionError
from .nn import ConvLayerSpec, Tensor

N_FEATURES = 64
N_HARMONIC = 60
N_APERIODIC = 4
DEPTH = 5
BASE_WIDTHS = (64, 128, 256, 512, 512)


def scaled_widths(width_multiplier: float, base=BASE_WIDTHS) -> tuple[int, ...]:
    return tuple(max(1, int(round(w * width_multiplier))) for w in base)


@dataclass(frozen=True)
class ModelConfig:
    conditioning: ConditioningConfig
    block_size: int = 128
    width_multiplier: float = 1.0
    leaky_slope: float = 0.2
    n_features: int = N_FEATURES
    precision: int = 64

    def __post_init__(self):
        if self.block_size <= 0 or self.block_size % 2 ** DEPTH:
            raise ConfigError(f"block_size must be a positive multiple of {2 ** DEPTH}, got {self.block_size}")
        if self.block_size < 2 ** (DEPTH + 1):
            # the bottleneck must keep 2 frames for linear upsampling
            raise ConfigError(f"block_size must be at least {2 ** (DEPTH + 1)}, got {self.block_size}")
        if self.width_multiplier <= 0:
            raise ConfigError("width_multiplier must be positive")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def widths(self) -> tuple[int, ...]:
        return scaled_widths(self.width_multiplier)

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


def generator_specs(cfg: ModelConfig) -> tuple[list[ConvLayerSpec], list[ConvLayerSpec]]:
    w = cfg.widths
    c_in = cfg.conditioning.out_channels
    enc, prev = [], c_in
    for width in w:
        enc.append(ConvLayerSpec(prev, width, 3, 2, "relu"))
        prev = width
    # decoder stage k consumes encoder activation DEPTH-1-k; the last stage
    # takes the generator input itself
    skips = list(reversed(w[:-1])) + [c_in]
    outs = list(reversed(w[:-1])) + [cfg.n_features]
    dec = []
    for k in range(DEPTH):
        act = "tanh" if k == DEPTH - 1 else "relu"
        dec.append(ConvLayerSpec(prev + skips[k], outs[k], 3, 1, act))
        prev = outs[k]
    return enc, dec


def critic_specs(cfg: ModelConfig) -> list[ConvLayerSpec]:
    prev = cfg.n_features + cfg.conditioning.raw_channels
    specs = []
    for width in cfg.widths:
        specs.append(ConvLayerSpec(prev, width, 3, 2, "leaky_relu", cfg.leaky_slope))
        prev = width
    return specs


def critic_head_size(cfg: ModelConfig) -> int:
    return cfg.widths[-1] * (cfg.block_size // 2 ** DEPTH)


class Generator:
    """Encoder of stride-2 convs, decoder of (linear x2 upsample -> conv) stages,
    with U-Net skip concatenations and a tanh output."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        enc, dec = generator_specs(cfg)
        self.encoder = [nn.Conv1d(s, rng, f"gen.enc{i}", cfg.dtype) for i, s in enumerate(enc)]
        self.decoder = [nn.Conv1d(s, rng, f"gen.dec{i}", cfg.dtype) for i, s in enumerate(dec)]

    @property
    def layers(self) -> list[nn.Conv1d]:
        return self.encoder + self.decoder

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, cond: ConditioningBlock, ablate_skips: frozenset[int] = frozenset()) -> Tensor:
        x = cond.concatenated
        if x.shape[-1] != self.cfg.block_size:
            raise DimensionError("time", f"conditioning has {x.shape[-1]} frames, "
                                         f"generator block size is {self.cfg.block_size}")
        acts = [x]
        h = x
        for layer in self.encoder:
            h = layer(h)
            acts.append(h)
        for k, layer in enumerate(self.decoder):
            skip_index = DEPTH - 1 - k
            skip = acts[skip_index]
            if skip_index in ablate_skips:
                skip = Tensor(np.zeros_like(skip.data))
            h = layer(nn.concat([nn.upsample_linear(h, 2), skip], axis=1))
        return h


class Critic:
    """Stride-2 LeakyReLU conv stack with a linear scalar head.

    Sees the feature block concatenated with the un-projected conditioning.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.layers = [nn.Conv1d(s, rng, f"critic.conv{i}", cfg.dtype) for i, s in enumerate(critic_specs(cfg))]
        n = critic_head_size(cfg)
        self.head_weight = Tensor(nn.init_uniform(rng, (n,), n, cfg.dtype), requires_grad=True,
                                  name="critic.head.weight")
        self.head_bias = Tensor(nn.init_uniform(rng, (1,), n, cfg.dtype), requires_grad=True,
                                name="critic.head.bias")

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()] + [self.head_weight, self.head_bias]

    def __call__(self, features: Tensor, cond: ConditioningInputs | ConditioningBlock) -> Tensor:
        """One unbounded score per batch element, shape (B,)."""
        inputs = cond.inputs if isinstance(cond, ConditioningBlock) else cond
        if features.data.ndim != 3:
            raise DimensionError("input", f"expected (batch, features, time), got {features.shape}")
        if features.shape[-1] != inputs.n_frames:
            raise DimensionError("time", f"feature block has {features.shape[-1]} frames, "
                                         f"conditioning has {inputs.n_frames}")
        if features.shape[-1] != self.cfg.block_size:
            raise DimensionError("time", f"critic expects {self.cfg.block_size} frames, got {features.shape[-1]}")
        if features.shape[0] != inputs.batch_size:
            raise DimensionError("batch", f"{features.shape[0]} feature blocks vs {inputs.batch_size} conditioning")
        h = nn.concat([features, Tensor(inputs.stack().astype(self.cfg.dtype))], axis=1)
        for layer in self.layers:
            h = layer(h)
        return nn.linear(nn.flatten(h), self.head_weight, self.head_bias)


@dataclass
class Networks:
    """Conditioner + generator (trained together) and the critic."""

    cfg: ModelConfig
    conditioner: Conditioner
    generator: Generator
    critic: Critic
    seed: int = field(default=0)

    @classmethod
    def build(cls, cfg: ModelConfig, seed: int = 0) -> Networks:
        return cls(cfg,
                   Conditioner(cfg.conditioning, np.random.default_rng([seed, 1]), cfg.dtype),
                   Generator(cfg, np.random.default_rng([seed, 2])),
                   Critic(cfg, np.random.default_rng([seed, 3])),
                   seed)

    def generator_parameters(self) -> list[Tensor]:
        return self.conditioner.parameters() + self.generator.parameters()

    def critic_parameters(self) -> list[Tensor]:
        return self.critic.parameters()

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for p in self.generator_parameters() + self.critic_parameters()]

    def generate(self, inputs: ConditioningInputs) -> Tensor:
        return self.generator(self.conditioner(inputs))

    def predict(self, inputs: ConditioningInputs) -> np.ndarray:
        """Normalized-domain feature blocks (B, 64, N), no graph recorded."""
        with nn.no_grad():
            return self.generate(inputs).data


def closed_form_param_count(cfg: ModelConfig) -> dict[str, int]:
    c = cfg.conditioning
    cond = ((c.n_phonemes + 1) * c.phoneme_channels + (2 + 1) * c.f0_channels
            + (c.n_singers + 1) * c.singer_channels)
    enc, dec = generator_specs(cfg)
    gen = sum(s.n_params for s in enc + dec)
    critic = sum(s.n_params for s in critic_specs(cfg)) + critic_head_size(cfg) + 1
    return {"conditioner": cond, "generator": gen, "critic": critic}


def parameter_checksum(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()

