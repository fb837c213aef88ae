import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wgansing.conditioning import (ConditioningInputs, Conditioner, FrameAnnotations, assemble_block,
                                   encode_phonemes, encode_singer, f0_features, normalize_f0, transpose_f0,
                                   window_inputs)
from wgansing.errors import BoundsError, RangeError, VocabularyError


def test_one_hot_example():
    np.testing.assert_array_equal(encode_phonemes([0, 2], 3), [[1, 0], [0, 0], [0, 1]])


@given(st.lists(st.integers(0, 11), min_size=1, max_size=50))
def test_one_hot_columns_and_roundtrip(ids):
    oh = encode_phonemes(ids, 12)
    np.testing.assert_array_equal(oh.sum(axis=0), 1)
    np.testing.assert_array_equal(oh.argmax(axis=0), ids)


def test_out_of_vocabulary_names_frame():
    with pytest.raises(VocabularyError) as exc:
        encode_phonemes([0, 1, 7, 2], 5)
    assert exc.value.frame == 2
    assert "frame 2" in str(exc.value)


def test_singer_one_hot_broadcast():
    s = encode_singer(1, 3, 6)
    np.testing.assert_array_equal(s.sum(axis=0), 1)
    np.testing.assert_array_equal(s[1], 1)


def test_f0_endpoints_and_midpoint():
    lo, hi = 80.0, 640.0
    out = normalize_f0([lo, hi, math.sqrt(lo * hi)], lo, hi)[0]
    assert out[0] == pytest.approx(-1.0, abs=1e-12)
    assert out[1] == pytest.approx(1.0, abs=1e-12)
    assert out[2] == pytest.approx(0.0, abs=1e-12)


def test_f0_formula_hand_evaluated():
    # 2*(ln 220 - ln 50)/(ln 1000 - ln 50) - 1
    expected = 2 * (math.log(220) - math.log(50)) / (math.log(1000) - math.log(50)) - 1
    assert normalize_f0([220.0], 50.0, 1000.0)[0, 0] == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(-0.0108565, abs=1e-6)


def test_unvoiced_maps_to_minus_one_and_flag():
    feats = f0_features([0.0, 200.0], 50.0, 1000.0)
    assert feats[0, 0] == -1.0
    np.testing.assert_array_equal(feats[1], [1.0, 0.0])


def test_f0_out_of_range():
    with pytest.raises(RangeError):
        normalize_f0([30.0], 50.0, 1000.0)
    with pytest.raises(RangeError):
        normalize_f0([-5.0], 50.0, 1000.0)


@given(st.lists(st.floats(50.0, 1000.0), min_size=2, max_size=20, unique=True))
def test_f0_strictly_increasing_in_range(values):
    v = np.sort(np.array(values))
    out = normalize_f0(v, 50.0, 1000.0)[0]
    assert np.all(np.diff(out) >= 0)
    # strict where the inputs are separated by more than rounding
    far = np.diff(v) > 1e-9 * v[1:]
    assert np.all(np.diff(out)[far] > 0)
    assert np.all((out >= -1 - 1e-12) & (out <= 1 + 1e-12))


def test_transpose_octave():
    np.testing.assert_allclose(transpose_f0([0.0, 110.0, 220.0], 12), [0.0, 220.0, 440.0])
    np.testing.assert_allclose(transpose_f0([600.0], 12, 50.0, 1000.0), [1000.0])


def _ann(n=40, singer=1):
    r = np.random.default_rng(5)
    return FrameAnnotations(r.integers(0, 5, n), np.where(r.random(n) < 0.2, 0.0, r.uniform(100, 400, n)), singer)


def test_assemble_block_seeded_determinism(small_cond_cfg):
    cond = Conditioner(small_cond_cfg, np.random.default_rng(0))
    a = assemble_block(_ann(), 4, 32, cond, rng_seed=11)
    b = assemble_block(_ann(), 4, 32, cond, rng_seed=11)
    assert a.concatenated.data.tobytes() == b.concatenated.data.tobytes()
    assert np.all(np.abs(a.noise.data) <= 1.0)


def test_assemble_block_shapes_and_channel_count(small_cond_cfg):
    cond = Conditioner(small_cond_cfg, np.random.default_rng(0))
    blk = assemble_block(_ann(), 0, 32, cond, rng_seed=1)
    c = small_cond_cfg
    assert blk.concatenated.shape == (1, c.phoneme_channels + c.f0_channels + c.singer_channels
                                      + c.noise_channels, 32)
    assert blk.concatenated.shape[1] == 4 + 3 + 2 + 2
    for part in (blk.projected_phoneme, blk.projected_f0, blk.projected_singer, blk.noise):
        assert part.shape[-1] == 32
    # order: phoneme, f0, singer, noise
    np.testing.assert_array_equal(blk.concatenated.data[:, :4], blk.projected_phoneme.data)
    np.testing.assert_array_equal(blk.concatenated.data[:, -2:], blk.noise.data)


def test_singer_channels_constant_before_projection(small_cond_cfg):
    inp = window_inputs(_ann(), 3, 32, small_cond_cfg, np.random.default_rng(0))
    assert np.all(inp.singer == inp.singer[..., :1])


def test_changing_singer_changes_only_singer_part(small_cond_cfg):
    a = window_inputs(_ann(singer=0), 2, 32, small_cond_cfg, None)
    b = window_inputs(_ann(singer=2), 2, 32, small_cond_cfg, None)
    assert a.phonemes.tobytes() == b.phonemes.tobytes()
    assert a.f0.tobytes() == b.f0.tobytes()
    assert not np.array_equal(a.singer, b.singer)


def test_window_out_of_range(small_cond_cfg):
    cond = Conditioner(small_cond_cfg, np.random.default_rng(0))
    with pytest.raises(BoundsError):
        assemble_block(_ann(40), 20, 32, cond, rng_seed=0)
    with pytest.raises(BoundsError):
        assemble_block(_ann(40), -1, 32, cond, rng_seed=0)


def test_no_noise_gives_zero_channels(small_cond_cfg):
    inp = window_inputs(_ann(), 0, 32, small_cond_cfg, None)
    assert np.all(inp.noise == 0)


def test_concat_inputs_batch(small_cond_cfg):
    items = [window_inputs(_ann(), s, 32, small_cond_cfg, None) for s in (0, 4, 8)]
    batch = ConditioningInputs.concat(items)
    assert batch.batch_size == 3 and batch.starts == (0, 4, 8)
    assert batch.stack().shape == (3, small_cond_cfg.raw_channels, 32)


def test_padded_repeats_last_frame():
    ann = FrameAnnotations([1, 2, 3], [100.0, 0.0, 150.0], 0)
    p = ann.padded(5)
    np.testing.assert_array_equal(p.phoneme_ids, [1, 2, 3, 3, 3])
    np.testing.assert_array_equal(p.f0_hz, [100, 0, 150, 150, 150])
