from __future__ import annotations

import json
import math

import numpy as np
import pytest

from setpose.data import (
    FINGER_BONE_LENGTHS,
    GenConfig,
    HandAnnotation,
    SceneSample,
    augment,
    generate_dataset,
    generate_sample,
    hflip_sample,
    read_dataset,
    read_image,
    template_hand,
    write_dataset,
    write_image,
)
from setpose.errors import ConfigError, FormatError
from setpose.geometry import HandSide, N_JOINTS, uvd_to_xyz, xyz_to_uvd
from setpose.hand_model import DEFAULT_TOPOLOGY, hand_scale
from setpose.rng import PortableRng

TEMPLATE_MEAN_BONE = sum(sum(v) for v in FINGER_BONE_LENGTHS.values()) / 20.0  # 40.5


def small_cfg(**kw) -> GenConfig:
    return GenConfig(**{"seed": 123, "n_samples": 8, **kw})


# -- template ------------------------------------------------------------------

def test_template_constants_mean():
    # oracle: sum the 20 tabulated bone lengths and divide by 20
    assert TEMPLATE_MEAN_BONE == 40.5


def test_template_scale_matches_edge_sum_oracle():
    template = template_hand()
    # independent per-edge summation
    total = math.fsum(
        math.dist(template.joints[p], template.joints[c])
        for p, c in DEFAULT_TOPOLOGY.edges)
    oracle = total / 20.0
    assert abs(oracle - TEMPLATE_MEAN_BONE) < 1e-9
    assert abs(hand_scale(template) - oracle) < 1e-12


def test_template_repeatable_and_rooted():
    a = template_hand()
    b = template_hand()
    assert np.array_equal(a.joints, b.joints)
    assert np.array_equal(a.joints[0], np.zeros(3))


def test_template_mirror_preserves_scale():
    template = template_hand()
    mirrored = template.joints.copy()
    mirrored[:, 0] = -mirrored[:, 0]
    from setpose.geometry import JointSet3D
    assert hand_scale(JointSet3D(mirrored)) == hand_scale(template)


# -- generation ------------------------------------------------------------------

def test_generation_bitwise_deterministic():
    cfg = small_cfg()
    a = generate_dataset(cfg)
    b = generate_dataset(cfg)
    assert len(a) == len(b) == 8
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image)
        assert len(sa.hands) == len(sb.hands)
        for ha, hb in zip(sa.hands, sb.hands):
            assert ha.side == hb.side
            assert np.array_equal(ha.uvd.joints, hb.uvd.joints)
            assert np.array_equal(ha.xyz.joints, hb.xyz.joints)


def test_generation_order_independent_per_sample():
    cfg = small_cfg()
    full = generate_dataset(cfg)
    lone = generate_sample(cfg, 5)
    assert np.array_equal(full[5].image, lone.image)


def test_generated_hands_are_consistent_and_in_bounds():
    cfg = small_cfg(n_samples=40)
    for sample in generate_dataset(cfg):
        for hand in sample.hands:
            back = xyz_to_uvd(hand.xyz, sample.camera)
            rel = np.abs(back.joints - hand.uvd.joints) / np.maximum(
                np.abs(hand.uvd.joints), 1.0)
            assert rel.max() < 1e-9
            assert np.all(hand.uvd.d >= cfg.depth_range[0])
            assert np.all(hand.uvd.d <= cfg.depth_range[1])
            assert np.all(hand.uvd.u >= 0.0) and np.all(hand.uvd.u <= 32.0)
            assert np.all(hand.uvd.v >= 0.0) and np.all(hand.uvd.v <= 32.0)
        assert sample.image.dtype == np.float32
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0


def test_presence_rate():
    cfg = small_cfg(n_samples=500)
    present = sum(len(s.hands) for s in generate_dataset(cfg))
    # 1000 Bernoulli(0.9) draws: 900 +- 3*sqrt(1000*0.09) ~ [871, 929]
    assert 860 < present < 940


def test_side_channels_code_the_sides():
    cfg = small_cfg(n_samples=30)
    for sample in generate_dataset(cfg):
        sides = {h.side for h in sample.hands}
        left_energy = float(sample.image[:, :, 0].sum())
        right_energy = float(sample.image[:, :, 1].sum())
        assert (left_energy > 1.0) == (HandSide.LEFT in sides)
        assert (right_energy > 1.0) == (HandSide.RIGHT in sides)
        both = np.maximum(sample.image[:, :, 0], sample.image[:, :, 1])
        assert np.array_equal(sample.image[:, :, 2], both)


def test_monte_carlo_scale_mean():
    cfg = small_cfg(n_samples=1000, seed=77)
    scales = [hand_scale(h.xyz) for s in generate_dataset(cfg) for h in s.hands]
    n = len(scales)
    mean = math.fsum(scales) / n
    # jitter U(0.85, 1.15): E[scale] = 40.5, sd = 40.5*0.3/sqrt(12)
    sd = 40.5 * 0.3 / math.sqrt(12.0)
    assert abs(mean - TEMPLATE_MEAN_BONE) < 3.0 * sd / math.sqrt(n)


def test_scale_shifted_split_ratio():
    base = small_cfg(n_samples=400, seed=5)
    shifted = small_cfg(n_samples=400, seed=6, subject_scale_factor=1.3)
    mean = lambda ds: np.mean([hand_scale(h.xyz) for s in ds for h in s.hands])
    ratio = mean(generate_dataset(shifted)) / mean(generate_dataset(base))
    assert abs(ratio - 1.3) < 0.03 * 1.3


def test_distractor_flag_changes_image_only_visually():
    plain = small_cfg(seed=9)
    spiced = small_cfg(seed=9, distractor=True)
    a = generate_dataset(plain)
    b = generate_dataset(spiced)
    assert any(not np.array_equal(x.image, y.image) for x, y in zip(a, b))


def test_gen_config_validation():
    with pytest.raises(ConfigError):
        small_cfg(depth_range=(0.0, 100.0))
    with pytest.raises(ConfigError):
        small_cfg(scale_jitter=(1.2, 0.8))
    with pytest.raises(ConfigError):
        small_cfg(hand_presence_prob=1.5)
    with pytest.raises(ConfigError):
        GenConfig(image_size=(64, 64))  # default intrinsics are 32x32


def test_gen_config_dict_round_trip():
    cfg = small_cfg(subject_scale_factor=1.3, distractor=True)
    assert GenConfig.from_dict(cfg.to_dict()) == cfg


# -- augmentation ------------------------------------------------------------------

def sample_with_both_hands(seed: int = 3) -> SceneSample:
    cfg = small_cfg(seed=seed, n_samples=40, hand_presence_prob=1.0)
    for sample in generate_dataset(cfg):
        if len(sample.hands) == 2:
            return sample
    raise AssertionError("no two-hand sample found")


def test_hflip_swaps_sides_and_mirrors_columns_with_channel_swap():
    sample = sample_with_both_hands()
    flipped = hflip_sample(sample)
    assert {h.side for h in flipped.hands} == {HandSide.LEFT, HandSide.RIGHT}
    w = int(sample.camera.width)
    for c in range(w):
        assert np.array_equal(flipped.image[:, c, 0], sample.image[:, w - 1 - c, 1])
        assert np.array_equal(flipped.image[:, c, 1], sample.image[:, w - 1 - c, 0])
        assert np.array_equal(flipped.image[:, c, 2], sample.image[:, w - 1 - c, 2])
    by_side = {h.side: h for h in sample.hands}
    for hand in flipped.hands:
        src = by_side[hand.side.opposite]
        assert np.allclose(hand.uvd.u, sample.camera.width - src.uvd.u, rtol=0, atol=0)
        assert np.array_equal(hand.uvd.joints[:, 1:], src.uvd.joints[:, 1:])
        assert hand.xyz is None  # metric labels are invalidated by flipping


def test_hflip_double_flip_restores_image_and_uvd():
    sample = sample_with_both_hands(seed=8)
    twice = hflip_sample(hflip_sample(sample))
    assert np.array_equal(twice.image, sample.image)
    assert [h.side for h in twice.hands] == [h.side for h in sample.hands]
    for ha, hb in zip(twice.hands, sample.hands):
        assert np.abs(ha.uvd.u - hb.uvd.u).max() < 1e-9
        assert np.array_equal(ha.uvd.joints[:, 1:], hb.uvd.joints[:, 1:])


def test_augment_flip_rate():
    sample = sample_with_both_hands(seed=12)
    rng = PortableRng(1000)
    flips = sum(augment(sample, rng) is not sample for _ in range(400))
    assert 160 < flips < 240


# -- dataset I/O ------------------------------------------------------------------

def test_round_trip_bitwise(tmp_path):
    cfg = small_cfg(n_samples=10)
    samples = generate_dataset(cfg)
    write_dataset(samples, tmp_path / "ds", gen_config=cfg)
    loaded, meta = read_dataset(tmp_path / "ds")
    assert meta["format_version"] == 1
    assert meta["gen_config"]["subject_scale_factor"] == 1.0
    assert len(loaded) == 10
    for a, b in zip(samples, loaded):
        assert np.array_equal(a.image, b.image)
        assert len(a.hands) == len(b.hands)
        for ha, hb in zip(a.hands, b.hands):
            assert ha.side == hb.side
            assert np.array_equal(ha.uvd.joints, hb.uvd.joints)
            assert np.array_equal(ha.xyz.joints, hb.xyz.joints)
        assert a.camera == b.camera


def test_truncated_image_raises_named_format_error(tmp_path):
    cfg = small_cfg(n_samples=2)
    write_dataset(generate_dataset(cfg), tmp_path / "ds", gen_config=cfg)
    victim = tmp_path / "ds" / "images" / "000001.imgf"
    victim.write_bytes(victim.read_bytes()[:-10])
    with pytest.raises(FormatError) as err:
        read_dataset(tmp_path / "ds")
    assert "000001.imgf" in str(err.value)


def test_bad_image_magic(tmp_path):
    write_image(tmp_path / "x.imgf", np.zeros((4, 4, 3), dtype=np.float32))
    raw = (tmp_path / "x.imgf").read_bytes()
    (tmp_path / "x.imgf").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        read_image(tmp_path / "x.imgf")


def test_unknown_dataset_version_rejected_before_load(tmp_path):
    cfg = small_cfg(n_samples=2)
    write_dataset(generate_dataset(cfg), tmp_path / "ds", gen_config=cfg)
    meta = json.loads((tmp_path / "ds" / "meta.json").read_text())
    meta["format_version"] = 2
    (tmp_path / "ds" / "meta.json").write_text(json.dumps(meta))
    # also corrupt an image: proves samples are never touched
    (tmp_path / "ds" / "images" / "000000.imgf").write_bytes(b"junk")
    with pytest.raises(FormatError) as err:
        read_dataset(tmp_path / "ds")
    assert "meta.json" in str(err.value)
