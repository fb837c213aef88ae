import numpy as np
import pytest

from wgansing import nn
from wgansing.conditioning import ConditioningConfig, ConditioningInputs, window_inputs, FrameAnnotations
from wgansing.errors import ConfigError, DimensionError
from wgansing.model import ModelConfig, Networks, closed_form_param_count
from wgansing.nn import Tensor


def random_inputs(cfg: ModelConfig, batch: int, seed: int = 0) -> ConditioningInputs:
    r = np.random.default_rng(seed)
    n = cfg.block_size
    c = cfg.conditioning
    items = []
    for _ in range(batch):
        ann = FrameAnnotations(r.integers(0, c.n_phonemes, n), r.uniform(c.f0_min, c.f0_max, n),
                               int(r.integers(0, c.n_singers)))
        items.append(window_inputs(ann, 0, n, c, r))
    return ConditioningInputs.concat(items)


@pytest.fixture(scope="module")
def full_block_nets():
    cond = ConditioningConfig(n_phonemes=10, n_singers=2)
    return Networks.build(ModelConfig(cond, block_size=128, width_multiplier=0.125), seed=0)


def test_generator_output_shape_for_default_block(full_block_nets):
    out = full_block_nets.predict(random_inputs(full_block_nets.cfg, 2))
    assert out.shape == (2, 64, 128)


def test_generator_outputs_inside_tanh_range(full_block_nets):
    for seed in range(3):
        out = full_block_nets.predict(random_inputs(full_block_nets.cfg, 2, seed))
        assert np.all(np.abs(out) < 1.0)


def test_generator_bitwise_deterministic(full_block_nets):
    inp = random_inputs(full_block_nets.cfg, 2)
    assert full_block_nets.predict(inp).tobytes() == full_block_nets.predict(inp).tobytes()


def test_same_seed_builds_identical_networks(small_model_cfg):
    a, b = Networks.build(small_model_cfg, 3), Networks.build(small_model_cfg, 3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


def test_block_size_constraints(small_cond_cfg):
    with pytest.raises(ConfigError):
        ModelConfig(small_cond_cfg, block_size=100)
    with pytest.raises(ConfigError):
        ModelConfig(small_cond_cfg, block_size=32)


def test_critic_zero_params_scores_zero(small_nets):
    for p in small_nets.critic_parameters():
        p.data[...] = 0
    inp = random_inputs(small_nets.cfg, 3)
    y = Tensor(np.random.default_rng(0).uniform(-1, 1, (3, 64, 64)))
    np.testing.assert_array_equal(small_nets.critic(y, inp).data, 0)


def test_critic_finite_with_clipped_params(small_nets):
    nn.clip_params(small_nets.critic_parameters(), 0.01)
    inp = random_inputs(small_nets.cfg, 2)
    y = Tensor(np.random.default_rng(1).uniform(-1, 1, (2, 64, 64)))
    assert np.all(np.isfinite(small_nets.critic(y, inp).data))


@pytest.mark.parametrize("batch", [1, 2, 3, 4])
def test_critic_one_score_per_batch_element(small_nets, batch):
    inp = random_inputs(small_nets.cfg, batch)
    y = Tensor(np.zeros((batch, 64, 64)))
    assert small_nets.critic(y, inp).shape == (batch,)


def test_critic_time_mismatch(small_nets):
    inp = random_inputs(small_nets.cfg, 1)
    with pytest.raises(DimensionError) as exc:
        small_nets.critic(Tensor(np.zeros((1, 64, 128))), inp)
    assert exc.value.axis == "time"


def test_critic_head_is_linear(small_nets):
    inp = random_inputs(small_nets.cfg, 2)
    y = Tensor(np.random.default_rng(2).uniform(-1, 1, (2, 64, 64)))
    c = small_nets.critic
    c.head_bias.data[...] = 0
    s1 = c(y, inp).data
    c.head_weight.data *= 2
    np.testing.assert_allclose(c(y, inp).data, 2 * s1, rtol=1e-12)


@pytest.mark.parametrize("skip", [0, 1, 2, 3, 4])
def test_skip_connections_are_wired(small_nets, skip):
    inp = random_inputs(small_nets.cfg, 1)
    with nn.no_grad():
        base = small_nets.generator(small_nets.conditioner(inp)).data
        ablated = small_nets.generator(small_nets.conditioner(inp), ablate_skips=frozenset({skip})).data
    assert not np.allclose(base, ablated)


@pytest.mark.parametrize("wm", [0.125, 0.25, 1.0])
def test_parameter_count_matches_closed_form(small_cond_cfg, wm):
    cfg = ModelConfig(small_cond_cfg, block_size=64, width_multiplier=wm)
    nets = Networks.build(cfg)
    counts = closed_form_param_count(cfg)
    assert sum(p.data.size for p in nets.conditioner.parameters()) == counts["conditioner"]
    assert sum(p.data.size for p in nets.generator.parameters()) == counts["generator"]
    assert sum(p.data.size for p in nets.critic_parameters()) == counts["critic"]


def test_full_width_channel_progression(small_cond_cfg):
    cfg = ModelConfig(small_cond_cfg, width_multiplier=1.0)
    assert cfg.widths == (64, 128, 256, 512, 512)
    nets = Networks.build(ModelConfig(small_cond_cfg, block_size=64, width_multiplier=0.125))
    enc = [layer.spec for layer in nets.generator.encoder]
    assert all(s.stride == 2 and s.kernel_size == 3 and s.activation == "relu" for s in enc)
    dec = [layer.spec for layer in nets.generator.decoder]
    assert [s.activation for s in dec] == ["relu"] * 4 + ["tanh"]
    assert dec[-1].out_channels == 64
    assert all(layer.spec.activation == "leaky_relu" for layer in nets.critic.layers)


def test_float32_precision_switch(small_cond_cfg):
    cfg = ModelConfig(small_cond_cfg, block_size=64, width_multiplier=0.125, precision=32)
    nets = Networks.build(cfg)
    out = nets.predict(random_inputs(cfg, 1))
    assert out.dtype == np.float32
