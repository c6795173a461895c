from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graftdepth.datagen import generate_dataset, non_occluded_mask
from graftdepth.geometry import warp_array
from graftdepth.grafting import GraftConfig, graft, graft_batch, graft_stack, sample_config

from oracles import graft_literal


def _rows(h, c=2, w=3, offset=0):
    # every row carries a unique value so row provenance is readable
    return np.broadcast_to((np.arange(h) + offset)[None, :, None], (c, h, w)).astype(np.float32).copy()


def test_ratio_zero_returns_primary():
    a, b = _rows(10), _rows(10, offset=100)
    np.testing.assert_array_equal(graft(a, b, GraftConfig(0, True, (0,))), a)


def test_h10_r06_no_swap():
    a, b = _rows(10), _rows(10, offset=100)
    out = graft(a, b, GraftConfig(3, False, (0,)))
    np.testing.assert_array_equal(out[:, :6], a[:, :6])
    np.testing.assert_array_equal(out[:, 6:], b[:, 6:])


def test_h10_r06_swap():
    a, b = _rows(10), _rows(10, offset=100)
    out = graft(a, b, GraftConfig(3, True, (0,)))
    np.testing.assert_array_equal(out[:, :4], b[:, 6:])
    np.testing.assert_array_equal(out[:, 4:], a[:, :6])


def test_graft_rows_is_exact_ceil():
    for h in range(1, 400):
        for n in range(5):
            assert GraftConfig(n, False, (0,)).graft_rows(h) == -(-h * n // 5)
    # float ceil would say 7 here
    assert GraftConfig(3, False, (0,)).graft_rows(10) == 6


@settings(max_examples=200, deadline=None)
@given(h=st.integers(1, 40), w=st.integers(1, 6), n=st.integers(0, 4), coin=st.floats(0, 1, exclude_max=True),
       seed=st.integers(0, 2 ** 16))
def test_matches_literal_transcription(h, w, n, coin, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((3, h, w)), rng.random((3, h, w))
    cfg = GraftConfig(n, coin < 0.5, (0,))
    np.testing.assert_array_equal(graft(a, b, cfg), graft_literal(a, b, Fraction(n, 5), coin))


@settings(max_examples=100, deadline=None)
@given(h=st.integers(1, 30), n=st.integers(0, 4), swap=st.booleans())
def test_rows_come_whole_from_one_input(h, n, swap):
    a, b = _rows(h), _rows(h, offset=1000)
    out = graft(a, b, GraftConfig(n, swap, (0,)))
    keys = set(a[0, :, 0]) | set(b[0, :, 0])
    for r in range(h):
        row = out[:, r]
        assert (row == row[0, 0]).all() and row[0, 0] in keys
    other = graft(a, b, GraftConfig(n, not swap, (0,)))
    assert Counter(out[0, :, 0].tolist()) == Counter(other[0, :, 0].tolist())


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        graft(np.zeros((1, 4, 3)), np.zeros((1, 5, 3)), GraftConfig(1, False, (0,)))
    with pytest.raises(ValueError):
        GraftConfig(5, False, (0,))


def test_sample_config_frequencies_and_determinism():
    rng = np.random.default_rng(0)
    cfgs = [sample_config(rng, 4) for _ in range(10000)]
    freq = Counter(c.ratio_n for c in cfgs)
    for n in range(5):
        assert 0.18 <= freq[n] / 10000 <= 0.22
    assert 0.47 < np.mean([c.swap for c in cfgs]) < 0.53
    assert cfgs[0].partners == (1, 2, 3, 0)
    assert sample_config(np.random.default_rng(5), 3) == sample_config(np.random.default_rng(5), 3)
    assert sample_config(np.random.default_rng(1), 1).partners == (0,)
    with pytest.raises(ValueError):
        sample_config(rng, 0)


def test_batch_shares_config_across_categories():
    rng = np.random.default_rng(1)
    t, s = rng.random((3, 3, 10, 8)), rng.random((3, 3, 10, 8))
    h, m = rng.random((3, 1, 10, 8)), rng.random((3, 1, 10, 8)) > 0.5
    cfg = GraftConfig(2, True, (1, 2, 0))
    gt, gs, gh, gm = graft_batch(t, s, h, m, cfg)
    for i, j in enumerate(cfg.partners):
        np.testing.assert_array_equal(gt[i], graft(t[i], t[j], cfg))
        np.testing.assert_array_equal(gs[i], graft(s[i], s[j], cfg))
        np.testing.assert_array_equal(gh[i], graft(h[i], h[j], cfg))
        np.testing.assert_array_equal(gm[i], graft(m[i], m[j], cfg))
    assert gm.dtype == bool
    r0 = graft_batch(t, s, None, None, GraftConfig(0, True, (1, 2, 0)))
    np.testing.assert_array_equal(r0[0], t)
    assert r0[2] is None


def test_batch_size_checks():
    with pytest.raises(ValueError, match="batch"):
        graft_batch(np.zeros((2, 3, 4, 4)), np.zeros((3, 3, 4, 4)))
    with pytest.raises(ValueError):
        graft_stack(np.zeros((2, 1, 4, 4)), GraftConfig(1, False, (0, 1, 2)))


def test_pairwise_application_idempotent_on_bottom_block():
    rng = np.random.default_rng(2)
    stack = rng.random((2, 1, 10, 4))
    cfg = GraftConfig(2, False, (1, 0))
    once = graft_stack(stack, cfg)
    twice = graft_stack(once, cfg)
    g = cfg.graft_rows(10)
    np.testing.assert_array_equal(twice[:, :, g:], stack[:, :, g:])
    np.testing.assert_array_equal(twice[:, :, :g], stack[:, :, :g])


@pytest.mark.parametrize("n", range(5))
@pytest.mark.parametrize("swap", [False, True])
def test_epipolar_preservation(n, swap):
    samples = generate_dataset(3, seed=3, height=40, width=96)
    L = np.stack([s.left.transpose(2, 0, 1) for s in samples])
    R = np.stack([s.right.transpose(2, 0, 1) for s in samples])
    D = np.stack([s.gt_disparity[None] for s in samples])
    M = np.stack([non_occluded_mask(s.gt_disparity)[None] for s in samples])
    cfg = GraftConfig(n, swap, (1, 2, 0))
    gl, gr, gd, gm = graft_batch(L, R, D, M, cfg)
    for i in range(3):
        rec = warp_array(gr[i].transpose(1, 2, 0), gd[i, 0])
        err = np.abs(rec - gl[i].transpose(1, 2, 0))[gm[i, 0]]
        assert err.mean() < 2 / 255
