import logging

import numpy as np
import pytest

from graftdepth.datagen import (
    DEFAULT_RIG, SceneConfig, generate_dataset, generate_scene, load_dataset, non_occluded_mask,
    save_dataset, save_sample,
)
from graftdepth.geometry import CameraRig, warp_array


def test_single_plane_is_pure_shift():
    # bf = 50, z = 10 -> d = 5
    s = generate_scene(SceneConfig(height=16, width=40, layer_count=0, ground=False, background_depth=10.0))
    assert (s.gt_disparity == 5).all()
    np.testing.assert_array_equal(s.right[:, :-5], s.left[:, 5:])


def test_two_layer_occlusion_footprint():
    s = generate_scene(SceneConfig(height=40, width=120, layer_count=1, ground=False, seed=4))
    gt = s.gt_disparity
    d_bg = s.meta["background_disparity"]
    (d_o,) = s.meta["object_disparities"]
    assert d_o > d_bg
    ys, xs = np.nonzero(gt == d_o)
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    # background pixels whose right-view match falls under the object's shifted footprint
    expect = np.zeros_like(gt, dtype=bool)
    X = np.arange(gt.shape[1])[None, :]
    rows = slice(y0, y1)
    under = (X - d_bg >= x0 - d_o) & (X - d_bg < x1 - d_o) & (X - d_bg >= 0)
    expect[rows] = under & (gt[rows] == d_bg)
    vis = non_occluded_mask(gt)
    inside = X - gt >= 0
    np.testing.assert_array_equal(~vis & inside, expect)
    # and the right image shows the object there, not the background
    yy, xx = np.nonzero(expect)
    xr = (xx - d_bg).astype(int)
    np.testing.assert_array_equal(s.right[yy, xr], s.left[yy, (xr + d_o).astype(int)])


def test_occluded_area_grows_with_disparity_gap():
    def occluded(d_obj):
        gt = np.full((10, 60), 2.0)
        gt[2:8, 25:40] = d_obj
        return (~non_occluded_mask(gt) & (np.arange(60)[None] - gt >= 0)).sum()
    areas = [occluded(d) for d in (3, 5, 8, 12)]
    assert areas == sorted(areas) and areas[0] < areas[-1]
    assert areas == [6 * (d - 2) for d in (3, 5, 8, 12)]


def test_same_seed_bit_identical():
    a = generate_dataset(2, seed=5, height=32, width=64)
    b = generate_dataset(2, seed=5, height=32, width=64)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.left, y.left)
        np.testing.assert_array_equal(x.right, y.right)
        np.testing.assert_array_equal(x.gt_disparity, y.gt_disparity)
    c = generate_dataset(1, seed=6, height=32, width=64)[0]
    assert not np.array_equal(c.left, a[0].left)


@pytest.mark.parametrize("texture", ["noise", "checker", "gradient-mix"])
def test_warp_consistency_and_ranges(texture):
    for s in generate_dataset(3, seed=7, height=48, width=128, texture=texture):
        assert s.left.shape == (48, 128, 3) and s.left.dtype == np.float32
        assert 0 <= s.left.min() and s.left.max() <= 1
        assert s.gt_disparity.min() >= 1 and s.gt_disparity.max() <= DEFAULT_RIG.bf / 2.0
        mask = non_occluded_mask(s.gt_disparity)
        assert np.abs(warp_array(s.right, s.gt_disparity) - s.left)[mask].mean() < 2 / 255


def test_texture_choice():
    fixed = generate_dataset(4, seed=8, height=32, width=64, texture="checker")
    assert [s.meta["texture"] for s in fixed] == ["checker"] * 4
    cycled = generate_dataset(4, seed=8, height=32, width=64)
    assert [s.meta["texture"] for s in cycled] == ["noise", "checker", "gradient-mix", "noise"]


def test_disparity_monotone_in_depth():
    s = generate_scene(SceneConfig(height=64, width=192, layer_count=5, seed=9))
    ds = sorted(set(s.meta["object_disparities"]))
    z = [DEFAULT_RIG.bf / d for d in ds]
    assert all(z1 > z2 for z1, z2 in zip(z, z[1:]))


def test_fractional_disparity_rendering():
    s = generate_scene(SceneConfig(height=32, width=96, integer_disparity=False, texture="gradient-mix", seed=10))
    assert (s.gt_disparity != np.round(s.gt_disparity)).any()
    mask = non_occluded_mask(s.gt_disparity)
    assert np.abs(warp_array(s.right, s.gt_disparity) - s.left)[mask].mean() < 4 / 255


def test_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(depth_range=(5, 2))
    with pytest.raises(ValueError):
        SceneConfig(texture="wood")
    with pytest.raises(ValueError, match="width"):
        generate_scene(SceneConfig(width=32, depth_range=(1.0, 50.0)), CameraRig(0.5, 100))


def test_io_round_trip(tmp_path):
    samples = generate_dataset(3, seed=11, height=32, width=64)
    save_dataset(samples, tmp_path)
    loaded = load_dataset(tmp_path)
    assert [s.sample_id for s in loaded] == ["00000", "00001", "00002"]
    for a, b in zip(samples, loaded):
        assert np.abs(a.left - b.left).max() <= 0.5 / 255 + 1e-6
        assert np.abs(a.right - b.right).max() <= 0.5 / 255 + 1e-6
        np.testing.assert_array_equal(a.gt_disparity, b.gt_disparity)
        assert b.rig == a.rig


def test_incomplete_samples_skipped(tmp_path, caplog):
    samples = generate_dataset(4, seed=12, height=32, width=64)
    save_dataset(samples, tmp_path)
    (tmp_path / "00002" / "right.png").unlink()
    (tmp_path / "hints").mkdir()
    with caplog.at_level(logging.WARNING):
        loaded = load_dataset(tmp_path)
    assert [s.sample_id for s in loaded] == ["00000", "00001", "00003"]
    assert "00002" in caplog.text


def test_empty_and_missing_root(tmp_path):
    assert load_dataset(tmp_path) == []
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")


def test_optional_gt_and_malformed_rig(tmp_path):
    s = generate_dataset(1, seed=13, height=32, width=64)[0]
    d = save_sample(s, tmp_path)
    (d / "gt_disp.epct").unlink()
    assert load_dataset(tmp_path)[0].gt_disparity is None
    (d / "rig.txt").write_text("0.5\n")
    with pytest.raises(ValueError, match="rig"):
        load_dataset(tmp_path)
    (d / "rig.txt").write_text("0.5\n-3\n")
    with pytest.raises(ValueError, match="rig"):
        load_dataset(tmp_path)
