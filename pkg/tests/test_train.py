import csv
from dataclasses import replace

import numpy as np
import pytest

from graftdepth.autodiff import Tensor, backward
from graftdepth.datagen import generate_dataset
from graftdepth.grafting import GraftConfig, graft_batch
from graftdepth.losses import joint_loss, reconstruction_error
from graftdepth.network import FullScaleNet, ModelConfig, load_checkpoint
from graftdepth.sgm import compute_hint, save_hint
from graftdepth.train import (
    ABLATION_ROWS, Adam, AdamState, BatchSource, TrainConfig, ablation_row, adam_update, load_hints, train,
    train_step,
)

from oracles import adam_reference


def _params(*values):
    return [Tensor(np.array(v, dtype=np.float64), requires_grad=True, dtype=np.float64) for v in values]


def test_adam_matches_reference():
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((25, 4))
    (p,) = _params(np.zeros(4))
    state = AdamState.zeros_like([p])
    for g in grads:
        adam_update([p], [g.copy()], state, lr=0.01)
    for i in range(4):
        assert p.data[i] == pytest.approx(adam_reference(0.0, grads[:, i], 0.01, 0.9, 0.999, 1e-8), rel=1e-12)


def test_zero_gradient_keeps_params_moments_decay():
    (p,) = _params([1.0, -2.0])
    state = AdamState.zeros_like([p])
    adam_update([p], [np.array([0.5, 0.5])], state, lr=0.1)
    before = p.data.copy()
    m, v = state.m[0].copy(), state.v[0].copy()
    # one zero-gradient step still moves by the remaining momentum; isolate with a fresh state
    fresh = AdamState.zeros_like([p])
    adam_update([p], [np.zeros(2)], fresh, lr=0.1)
    np.testing.assert_array_equal(p.data, before)
    adam_update([p], [np.zeros(2)], state, lr=0.1)
    np.testing.assert_allclose(state.m[0], 0.9 * m)
    np.testing.assert_allclose(state.v[0], 0.999 * v)


def test_step_one_is_signed_lr():
    g = np.array([3.0, -1e-3, 250.0])
    (p,) = _params(np.zeros(3))
    adam_update([p], [g], AdamState.zeros_like([p]), lr=1e-3)
    # bias correction cancels (1 - beta) exactly: mhat = g, sqrt(vhat) = |g|
    np.testing.assert_allclose(p.data, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(p.data, -1e-3 * np.sign(g), rtol=1e-4)


def test_constant_gradient_tends_to_lr_sign():
    (p,) = _params([0.0, 0.0])
    state = AdamState.zeros_like([p])
    g = np.array([0.7, -4.0])
    prev = p.data.copy()
    for _ in range(2000):
        prev = p.data.copy()
        adam_update([p], [g], state, lr=1e-3)
    np.testing.assert_allclose(p.data - prev, -1e-3 * np.sign(g), rtol=1e-6)


def test_lr_zero_leaves_weights_bit_identical():
    model = FullScaleNet(ModelConfig(base_channels=4))
    params = model.parameters()
    before = [p.data.copy() for p in params]
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(1)
    for _ in range(5):
        adam_update(params, [rng.standard_normal(p.shape) for p in params], state, lr=0.0)
    for p, b in zip(params, before):
        np.testing.assert_array_equal(p.data, b)


def test_none_gradients_skip_parameter():
    a, b = _params([1.0], [2.0])
    adam_update([a, b], [None, np.array([1.0])], AdamState.zeros_like([a, b]), lr=0.1)
    assert a.data[0] == 1.0 and b.data[0] != 2.0


def test_adam_class_clears_grads():
    (p,) = _params([1.0, 1.0])
    opt = Adam([p], lr=0.1)
    backward((p * p).sum())
    assert opt.grad_norm() == pytest.approx(np.sqrt(8))
    opt.step()
    assert p.grad is None and opt.t == 1


@pytest.mark.parametrize("kw", [dict(lr=0.0), dict(lr=-1e-4), dict(batch_size=0), dict(label_mode="x"),
                                dict(steps=-1)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


@pytest.fixture(scope="module")
def tiny():
    samples = generate_dataset(6, seed=51, height=32, width=64)
    hints = [compute_hint(s.left, s.right) for s in samples]
    return samples, hints


def _cfg(tmp_path, **kw):
    base = dict(out_dir=str(tmp_path / "run"), steps=3, batch_size=2, base_channels=4, lr=1e-3, log_every=1)
    base.update(kw)
    return TrainConfig(**base)


def test_train_writes_log_and_checkpoint(tmp_path, tiny):
    samples, hints = tiny
    res = train(_cfg(tmp_path), samples, hints)
    assert len(res.records) == 3
    assert all(np.isfinite(r.loss) and r.grad_norm > 0 for r in res.records)
    rows = list(csv.DictReader(open(tmp_path / "run" / "log.csv")))
    assert [int(r["step"]) for r in rows] == [1, 2, 3]
    assert set(rows[0]) >= {"loss", "photometric", "distill", "hint", "grad_norm", "seconds"}
    model, step = load_checkpoint(res.checkpoint)
    assert step == 3
    for (_, a), (_, b) in zip(model.named_parameters(), res.model.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_same_seed_same_records(tmp_path, tiny, monkeypatch):
    samples, hints = tiny
    monkeypatch.setenv("EPC_DETERMINISTIC", "1")
    a = train(_cfg(tmp_path, steps=4), samples, hints, write_files=False)
    b = train(_cfg(tmp_path, steps=4), samples, hints, write_files=False)
    key = lambda r: (r.step, r.loss, r.photometric, r.distill, r.hint, r.grad_norm, r.graft_ratio, r.swap)
    assert [key(r) for r in a.records] == [key(r) for r in b.records]


def test_prefetch_preserves_batch_order(tmp_path, tiny):
    samples, hints = tiny
    a = train(_cfg(tmp_path, steps=4, prefetch=True), samples, hints, write_files=False)
    b = train(_cfg(tmp_path, steps=4, prefetch=False), samples, hints, write_files=False)
    assert [r.loss for r in a.records] == [r.loss for r in b.records]


def test_switches_zero_terms(tmp_path, tiny):
    samples, hints = tiny
    res = train(_cfg(tmp_path, self_distill=False, hints=False, grafting=False), samples, None, write_files=False)
    assert all(r.distill == 0 and r.hint == 0 and r.graft_ratio == 0 for r in res.records)
    assert len(res.model.keep) == 10
    res = train(_cfg(tmp_path, encoder_scales=False), samples, hints, write_files=False)
    assert res.model.keep == ("d0", "d1", "d2", "d3", "d4")


def test_sd_off_matches_loss_without_labels(tiny):
    samples, hints = tiny
    source = BatchSource(samples[:2], hints[:2])
    batch = (source.left, source.right, source.hint, source.hint_valid)
    cfg = TrainConfig(self_distill=False, base_channels=4)

    def grads(use_step):
        model = FullScaleNet(ModelConfig(base_channels=4, seed=2))
        params = model.parameters()
        if use_step:
            opt = Adam(params, lr=1.0)
            opt.step = lambda: None  # keep the gradients for inspection
            train_step(model, opt, batch, cfg)
            return [p.grad for p in params]
        T, S = Tensor(batch[0]), Tensor(batch[1])
        scales = model(T).items()
        e_hint = reconstruction_error(T, S, Tensor(batch[2])).data
        lb = joint_loss(scales, T, S, None, Tensor(batch[2]), batch[3], e_hint=e_hint)
        g = backward(lb.total, accumulate=False)
        return [g.of(p) for p in params]

    for a, b in zip(grads(True), grads(False)):
        np.testing.assert_array_equal(a, b)


def test_ratio_zero_grafting_is_noop(tiny):
    samples, hints = tiny
    src = BatchSource(samples, hints)
    cats = (src.left[:3], src.right[:3], src.hint[:3], src.hint_valid[:3])
    out = graft_batch(*cats, cfg=GraftConfig(0, True, (1, 2, 0)))
    for a, b in zip(out, cats):
        np.testing.assert_array_equal(a, b)


def test_nan_loss_aborts(tmp_path, tiny):
    samples, _ = tiny
    bad = [replace(s, left=np.full_like(s.left, np.nan)) for s in samples]
    with pytest.raises(FloatingPointError, match="step 1"):
        train(_cfg(tmp_path, hints=False), bad, None, write_files=False)


def test_missing_hint_cache_rejected(tmp_path, tiny):
    samples, hints = tiny
    with pytest.raises(FileNotFoundError, match="hints"):
        load_hints(tmp_path, samples)
    for s, h in zip(samples, hints):
        save_hint(h, tmp_path, s.sample_id)
    loaded = load_hints(tmp_path, samples)
    np.testing.assert_array_equal(loaded[0].disparity, hints[0].disparity)


def test_batch_source_checks(tiny):
    samples, _ = tiny
    with pytest.raises(ValueError):
        BatchSource([])
    other = generate_dataset(1, seed=3, height=32, width=32)
    with pytest.raises(ValueError, match="shape"):
        BatchSource(samples + other)


def test_ablation_rows():
    assert ablation_row("baseline") == dict(grafting=False, self_distill=False, encoder_scales=False, hints=False)
    assert ablation_row("full") == dict.fromkeys(ABLATION_ROWS["full"], True)
    assert ablation_row("+SD") == dict(grafting=False, self_distill=True, encoder_scales=False, hints=False)
    assert ablation_row("HR+DG") == dict(grafting=True, self_distill=False, encoder_scales=False, hints=True)
    with pytest.raises(ValueError):
        ablation_row("+XX")
