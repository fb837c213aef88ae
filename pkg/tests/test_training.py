import math

import numpy as np
import pytest

from wgansing import nn
from wgansing.checkpoint import read_checkpoint
from wgansing.errors import ConfigError, NumericError
from wgansing.model import parameter_checksum
from wgansing.nn import OptimizerState, Tensor
from wgansing.training import (Trainer, TrainingConfig, critic_step, gan_loss_reference, generator_step,
                               read_loss_csv, recon_loss, train)

SMALL = dict(block_size=64, width_multiplier=0.125, batch_size=2, phoneme_channels=4, f0_channels=4,
             singer_channels=4, noise_channels=2, epochs=2)


@pytest.fixture
def cfg():
    return TrainingConfig(**SMALL)


@pytest.fixture
def trainer(tiny_dataset, cfg):
    return Trainer(tiny_dataset, cfg)


def test_default_training_constants():
    c = TrainingConfig()
    assert (c.lambda_recon, c.learning_rate, c.epochs, c.block_size) == (0.0005, 1e-4, 3000, 128)
    assert (c.clip_bound, c.critic_steps) == (0.01, 5)


@pytest.mark.parametrize("kw", [dict(block_size=48), dict(block_size=32), dict(learning_rate=0),
                                dict(recon_norm="l3"), dict(lambda_recon=-1), dict(precision=16)])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        TrainingConfig(**kw)


def test_config_text_roundtrip(tmp_path, cfg):
    p = tmp_path / "c.cfg"
    p.write_text(cfg.to_text())
    assert TrainingConfig.from_file(p) == cfg
    assert TrainingConfig.from_file(p, {"lambda_recon": "0"}).lambda_recon == 0.0


def test_config_unknown_key(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("lamda_recon = 1\n")
    with pytest.raises(ConfigError):
        TrainingConfig.from_file(p)


def test_critic_params_clipped_after_every_step(trainer):
    params = trainer.nets.critic_parameters()
    for p in params:
        p.data *= 100  # start far outside the box
    for _ in range(3):
        critic_step(trainer.nets, trainer.sample_batch(), trainer.critic_opt, 0.01)
        assert max(np.abs(p.data).max() for p in params) <= 0.01


def test_identical_real_and_fake_give_zero_estimate(trainer):
    batch = trainer.sample_batch()
    with nn.no_grad():
        batch.target = trainer.nets.generate(batch.inputs).data.copy()
    assert critic_step(trainer.nets, batch, trainer.critic_opt, 0.01) == pytest.approx(0.0, abs=1e-12)


def test_critic_estimate_rises_on_fixed_batch(trainer):
    nn.clip_params(trainer.nets.critic_parameters(), 0.01)
    batch = trainer.sample_batch()
    opt = OptimizerState(learning_rate=1e-5)
    values = [critic_step(trainer.nets, batch, opt, 0.01) for _ in range(50)]
    assert all(b >= a - 1e-6 for a, b in zip(values, values[1:]))
    assert values[-1] > values[0]


def test_updates_touch_only_their_own_network(trainer):
    nets = trainer.nets
    g0, c0 = parameter_checksum(nets.generator_parameters()), parameter_checksum(nets.critic_parameters())
    critic_step(nets, trainer.sample_batch(), trainer.critic_opt, 0.01)
    g1, c1 = parameter_checksum(nets.generator_parameters()), parameter_checksum(nets.critic_parameters())
    assert g1 == g0 and c1 != c0
    generator_step(nets, trainer.sample_batch(), trainer.gen_opt, 0.0005)
    assert parameter_checksum(nets.critic_parameters()) == c1
    assert parameter_checksum(nets.generator_parameters()) != g1


def test_schedule_counters(trainer):
    for _ in range(3):
        trainer.train_step()
    assert trainer.state.critic_updates == 15 and trainer.state.generator_updates == 3


def test_total_decomposition(trainer):
    rep = trainer.run_epoch()
    assert abs(rep.total_loss - (rep.generator_adv_loss + 0.0005 * rep.recon_loss)) <= 1e-9
    for est, adv, rec, total in trainer.step_log:
        assert abs(total - (adv + 0.0005 * rec)) <= 1e-9


def test_lambda_zero_total_is_adversarial(tiny_dataset, cfg):
    t = Trainer(tiny_dataset, cfg.replace(lambda_recon=0.0))
    est, adv, rec, total = t.train_step()
    assert total == adv and rec > 0


def test_recon_zero_for_perfect_prediction(rng):
    y = rng.uniform(-1, 1, (3, 64, 64))
    assert recon_loss(Tensor(y), y).item() == 0.0
    assert recon_loss(Tensor(y), y, "l2").item() == 0.0


def test_recon_is_block_norm(rng):
    pred, y = rng.uniform(-1, 1, (2, 64, 8)), rng.uniform(-1, 1, (2, 64, 8))
    l1 = np.mean([np.abs(pred[b] - y[b]).sum() for b in range(2)])
    l2 = np.mean([np.sqrt(((pred[b] - y[b]) ** 2).sum()) for b in range(2)])
    assert recon_loss(Tensor(pred), y).item() == pytest.approx(l1, rel=1e-12)
    assert recon_loss(Tensor(pred), y, "l2").item() == pytest.approx(l2, rel=1e-12)


def test_gan_reference_values():
    assert gan_loss_reference([0.5], [0.5]) == pytest.approx(-2 * math.log(2), abs=1e-12)
    assert gan_loss_reference([1 - 1e-12], [1e-12]) == pytest.approx(0.0, abs=1e-9)
    r, f = np.array([0.9, 0.7]), np.array([0.2, 0.4])
    assert gan_loss_reference(r, f) == pytest.approx(np.mean(np.log(r)) + np.mean(np.log(1 - f)), rel=1e-12)


@pytest.mark.parametrize("real, fake", [([0.0], [0.5]), ([0.5], [1.0]), ([1.2], [0.5]), ([], [0.5])])
def test_gan_reference_domain(real, fake):
    with pytest.raises(ConfigError):
        gan_loss_reference(real, fake)


def test_zero_epochs_writes_initial_checkpoint(tmp_path, tiny_dataset, cfg):
    res = train(tiny_dataset, cfg.replace(epochs=0), tmp_path)
    assert res.history == []
    assert [p.name for p in res.checkpoints] == ["epoch_00000.ckpt"]
    assert read_loss_csv(tmp_path / "losses.csv") == []
    assert read_checkpoint(res.latest).epoch == 0


def test_training_is_deterministic(tmp_path, tiny_dataset, cfg):
    train(tiny_dataset, cfg, tmp_path / "a")
    train(tiny_dataset, cfg, tmp_path / "b")
    assert (tmp_path / "a/losses.csv").read_bytes() == (tmp_path / "b/losses.csv").read_bytes()
    assert (tmp_path / "a/latest.ckpt").read_bytes() == (tmp_path / "b/latest.ckpt").read_bytes()


def test_resume_is_bitwise(tmp_path, tiny_dataset, cfg):
    cfg3 = cfg.replace(epochs=3)
    full = train(tiny_dataset, cfg3, tmp_path / "full")
    train(tiny_dataset, cfg3, tmp_path / "part", epochs=1)
    res = train(tiny_dataset, cfg3, tmp_path / "part", resume_from=tmp_path / "part/latest.ckpt")
    assert [r.row() for r in res.history] == [r.row() for r in full.history]
    assert (tmp_path / "part/latest.ckpt").read_bytes() == (tmp_path / "full/latest.ckpt").read_bytes()
    assert (tmp_path / "part/losses.csv").read_bytes() == (tmp_path / "full/losses.csv").read_bytes()


def test_resume_rejects_changed_config(tmp_path, tiny_dataset, cfg):
    train(tiny_dataset, cfg.replace(epochs=1), tmp_path)
    with pytest.raises(ConfigError):
        train(tiny_dataset, cfg.replace(lambda_recon=0.1), tmp_path, resume_from=tmp_path / "latest.ckpt")


def test_nonfinite_loss_raises_and_dumps(tmp_path, tiny_dataset, cfg, monkeypatch):
    real_step = critic_step

    def poisoned(nets, batch, opt, bound):
        batch.target[...] = np.nan
        return real_step(nets, batch, opt, bound)

    monkeypatch.setattr("wgansing.training.critic_step", poisoned)
    with pytest.raises(NumericError) as exc:
        train(tiny_dataset, cfg, tmp_path)
    assert exc.value.batch_indices
    assert (tmp_path / "nonfinite_epoch00001.json").exists()
