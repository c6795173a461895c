"""Self-supervised training loop, Adam, step logging and the ablation driver."""
from __future__ import annotations

import contextlib
import csv
import logging
import os
import queue
import threading
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import Tensor, backward, no_grad
from .datagen import StereoSample
from .grafting import graft_batch, sample_config
from .losses import LossWeights, joint_loss, reconstruction_error
from .metrics import EvalOptions, evaluate_model
from .network import FullScaleNet, ModelConfig, save_checkpoint
from .sgm import has_hint, load_hint
from .spp import build_labels

log = logging.getLogger(__name__)


def deterministic_mode() -> bool:
    return os.environ.get("EPC_DETERMINISTIC", "") == "1"


@dataclass
class TrainConfig:
    data_root: str = "data/train"
    out_dir: str = "runs/default"
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    base_channels: int = 8
    seed: int = 0
    grafting: bool = True
    self_distill: bool = True
    encoder_scales: bool = True
    hints: bool = True
    label_mode: str = "separate"
    log_every: int = 10
    checkpoint_every: int = 0  # 0: only the final checkpoint
    prefetch: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.label_mode not in ("separate", "combined"):
            raise ValueError(f"unknown label_mode {self.label_mode!r}")

    @classmethod
    def field_types(cls) -> dict:
        defaults = cls()
        return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


@dataclass
class StepRecord:
    step: int
    loss: float
    photometric: float
    distill: float
    hint: float
    grad_norm: float
    graft_ratio: float
    swap: int
    seconds: float


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_update(params, grads, state: AdamState, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    """One bias-corrected Adam step in place; ``None`` gradients leave a parameter (and its moments) alone."""
    state.t += 1
    c1 = 1 - beta1 ** state.t
    c2 = 1 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
    return state


class Adam:
    """Adam with bias correction; consumes and clears ``.grad`` on its parameters."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.zeros_like(self.params)

    @property
    def t(self) -> int:
        return self.state.t

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64)))
                                 for p in self.params if p.grad is not None)))

    def step(self) -> None:
        adam_update(self.params, [p.grad for p in self.params], self.state, self.lr, self.beta1, self.beta2, self.eps)
        for p in self.params:
            p.grad = None


def _chw(img):
    return np.asarray(img, dtype=np.float32).transpose(2, 0, 1)


class BatchSource:
    """Stacked arrays for the whole training set plus a seeded batch sampler."""

    def __init__(self, samples, hints=None):
        if not samples:
            raise ValueError("training set is empty")
        shapes = {s.left.shape for s in samples}
        if len(shapes) != 1:
            raise ValueError(f"training images differ in shape: {sorted(shapes)}")
        self.left = np.stack([_chw(s.left) for s in samples])
        self.right = np.stack([_chw(s.right) for s in samples])
        self.hint = self.hint_valid = None
        if hints is not None:
            self.hint = np.stack([h.disparity for h in hints])[:, None].astype(np.float32)
            self.hint_valid = np.stack([h.valid for h in hints])[:, None]

    def __len__(self):
        return self.left.shape[0]

    def draw(self, rng, batch_size, grafting):
        idx = rng.choice(len(self), size=batch_size, replace=batch_size > len(self))
        cfg = sample_config(rng, batch_size) if grafting else None
        h = None if self.hint is None else self.hint[idx]
        hv = None if self.hint_valid is None else self.hint_valid[idx]
        return graft_batch(self.left[idx], self.right[idx], h, hv, cfg), cfg


def _prefetched(source, rng, cfg, steps):
    """Yield batches in order; a worker thread prepares up to two ahead."""
    if not cfg.prefetch or deterministic_mode():
        for _ in range(steps):
            yield source.draw(rng, cfg.batch_size, cfg.grafting)
        return
    q: queue.Queue = queue.Queue(maxsize=2)
    stop = threading.Event()

    def work():
        for _ in range(steps):
            if stop.is_set():
                return
            q.put(source.draw(rng, cfg.batch_size, cfg.grafting))

    t = threading.Thread(target=work, daemon=True)
    t.start()
    try:
        for _ in range(steps):
            yield q.get()
    finally:
        stop.set()
        while t.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                t.join(0.01)


def _blas_limits():
    if not deterministic_mode():
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # single-threaded BLAS builds need nothing
        return contextlib.nullcontext()
    return threadpool_limits(1)


def train_step(model, opt, batch, cfg: TrainConfig, weights: LossWeights = LossWeights()):
    """One optimization step; returns the LossBreakdown."""
    tgt, src, hint, hint_valid = batch
    T, S = Tensor(tgt), Tensor(src)
    out = model(T)
    scales = out.items()
    errors = {name: reconstruction_error(T, S, d, weights) for name, d in scales}
    labels = build_labels(T, S, scales, weights, cfg.label_mode, error_maps=errors) if cfg.self_distill else None
    hint_t = e_hint = None
    if cfg.hints and hint is not None:
        hint_t = Tensor(hint)
        with no_grad():
            e_hint = reconstruction_error(T, S, hint_t, weights).data
    lb = joint_loss(scales, T, S, labels, hint=hint_t, hint_valid=hint_valid if hint_t is not None else None,
                    weights=weights, error_maps=errors, e_hint=e_hint)
    if not np.isfinite(lb.total.item()):
        raise FloatingPointError(f"non-finite loss {lb.total.item()}")
    backward(lb.total)
    lb.grad_norm = opt.grad_norm()
    opt.step()
    return lb


def load_hints(root, samples):
    missing = [s.sample_id for s in samples if not has_hint(root, s.sample_id)]
    if missing:
        raise FileNotFoundError(f"{len(missing)} samples lack cached hints (first: {missing[0]}); "
                                f"run the 'hints' command first")
    return [load_hint(root, s.sample_id) for s in samples]


@dataclass
class TrainResult:
    model: FullScaleNet
    records: list
    checkpoint: Path | None


def train(cfg: TrainConfig, samples: list[StereoSample] | None = None, hints=None,
          write_files: bool = True, progress=None) -> TrainResult:
    """Train a fresh model. ``samples``/``hints`` default to loading ``cfg.data_root``."""
    if samples is None:
        from .datagen import load_dataset
        samples = load_dataset(cfg.data_root)
    if cfg.hints and hints is None:
        hints = load_hints(cfg.data_root, samples)
    source = BatchSource(samples, hints if cfg.hints else None)
    model = FullScaleNet(ModelConfig(base_channels=cfg.base_channels, use_encoder_scales=cfg.encoder_scales,
                                     seed=cfg.seed))
    opt = Adam(model.parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    out_dir = Path(cfg.out_dir)
    records: list[StepRecord] = []
    writer = fh = None
    if write_files:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "log.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow([f.name for f in fields(StepRecord)])
    ckpt = None
    try:
        with _blas_limits():
            for step, (batch, gcfg) in enumerate(_prefetched(source, rng, cfg, cfg.steps), start=1):
                t0 = time.perf_counter()
                try:
                    lb = train_step(model, opt, batch, cfg)
                except FloatingPointError as exc:
                    raise FloatingPointError(f"training diverged at step {step}: {exc}") from None
                n = len(lb.photometric)
                rec = StepRecord(step, lb.total.item(), sum(lb.photometric.values()) / n,
                                 sum(lb.distill.values()) / n, sum(lb.hint.values()) / n, lb.grad_norm,
                                 gcfg.ratio if gcfg else 0.0, int(gcfg.swap) if gcfg else 0,
                                 time.perf_counter() - t0)
                records.append(rec)
                if writer and (step % cfg.log_every == 0 or step == cfg.steps):
                    writer.writerow([getattr(rec, f.name) for f in fields(StepRecord)])
                    fh.flush()
                if progress:
                    progress(rec)
                if write_files and cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < cfg.steps:
                    save_checkpoint(model, out_dir / f"step_{step:06d}", step, _extra(cfg))
        if write_files:
            ckpt = save_checkpoint(model, out_dir / "final", cfg.steps, _extra(cfg))
    finally:
        if fh:
            fh.close()
    return TrainResult(model, records, ckpt)


def _extra(cfg: TrainConfig) -> dict:
    return {k: v for k, v in asdict(cfg).items() if k not in ("data_root", "out_dir")}


# -- ablation ---------------------------------------------------------------------

SWITCHES = ("grafting", "self_distill", "encoder_scales", "hints")
SHORT_NAMES = {"DG": "grafting", "SD": "self_distill", "FS": "encoder_scales", "HR": "hints"}
_OFF = dict.fromkeys(SWITCHES, False)
ABLATION_ROWS = {
    "baseline": dict(_OFF),
    "+DG": {**_OFF, "grafting": True},
    "+SD": {**_OFF, "self_distill": True},
    "+FS": {**_OFF, "encoder_scales": True},
    "HR": {**_OFF, "hints": True},
    "full": dict.fromkeys(SWITCHES, True),
}


def ablation_row(name: str) -> dict:
    """Switches for ``baseline``, ``full``, ``+DG``/``+SD``/``+FS``/``HR``, or ``HR+DG`` style combinations."""
    if name in ABLATION_ROWS:
        return dict(ABLATION_ROWS[name])
    row = dict(_OFF)
    for part in name.replace("+", " ").split():
        if part not in SHORT_NAMES:
            raise ValueError(f"unknown ablation row {name!r}")
        row[SHORT_NAMES[part]] = True
    return row


def run_ablation(base: TrainConfig, rows: dict, seeds, train_samples, eval_samples, hints=None,
                 opts: EvalOptions = EvalOptions()) -> dict:
    """abs_rel (and full metrics) per row per seed."""
    results = {}
    for name, switches in rows.items():
        unknown = set(switches) - set(SWITCHES)
        if unknown:
            raise ValueError(f"unknown ablation switches {sorted(unknown)}")
        per_seed = []
        for seed in seeds:
            cfg = TrainConfig(**{**asdict(base), **switches, "seed": seed})
            res = train(cfg, train_samples, hints, write_files=False)
            metrics, _ = evaluate_model(res.model, eval_samples, opts)
            per_seed.append(metrics)
            log.info("ablation %s seed %d: abs_rel %.4f", name, seed, metrics.abs_rel)
        results[name] = per_seed
    return results
