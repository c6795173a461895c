"""Full-scale encoder-decoder with disparity heads on every encoder and decoder level."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat, conv2d, no_grad, resize_bilinear, resize_nearest, upsample_nearest
from .autodiff import serialize

LEVELS = 5
# fixed input normalization (ImageNet-style grey statistics)
INPUT_MEAN, INPUT_STD = 0.45, 0.225
DECODER_SCALES = tuple(f"d{k}" for k in range(LEVELS))
ENCODER_SCALES = tuple(f"e{k}" for k in range(LEVELS))
ALL_SCALES = DECODER_SCALES + ENCODER_SCALES


@dataclass
class ModelConfig:
    base_channels: int = 16
    levels: int = LEVELS
    disp_max_fraction: float = 0.3
    use_encoder_scales: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.levels != LEVELS:
            raise ValueError(f"only {LEVELS} levels are supported")
        if not 0 < self.disp_max_fraction < 1:
            raise ValueError("disp_max_fraction must lie in (0, 1)")

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * 2 ** k for k in range(self.levels)]


class _MacCounter:
    active = False
    total = 0


class Module:
    """Tiny parameter container: attributes that are Tensors or Modules are registered."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, dict):
                for key in sorted(value):
                    if isinstance(value[key], Module):
                        yield from value[key].named_parameters(f"{prefix}{name}.{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Conv(Module):
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, k: int = 3, stride: int = 1,
                 bias_init: float = 0.0):
        fan_in = cin * k * k
        bound = np.sqrt(3.0 / fan_in)
        self.weight = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)), requires_grad=True)
        self.bias = Tensor(np.full(cout, bias_init), requires_grad=True)
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
        if _MacCounter.active:
            o, c, kh, kw = self.weight.shape
            _MacCounter.total += int(np.prod(out.shape)) * c * kh * kw
        return out


class ResBlock(Module):
    """x -> ELU(x + conv(ELU(conv(x))))."""

    def __init__(self, rng, c: int):
        self.conv1 = Conv(rng, c, c)
        self.conv2 = Conv(rng, c, c)

    def __call__(self, x: Tensor) -> Tensor:
        return (x + self.conv2(self.conv1(x).elu())).elu()


class ResUBlock(Module):
    """Simplified residual U-block: conv in, one internal half-resolution level, residual add."""

    def __init__(self, rng, cin: int, c: int):
        self.conv_in = Conv(rng, cin, c)
        self.conv_mid = Conv(rng, c, c)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv_in(x).elu()
        hh, ww = h.shape[-2:]
        down = resize_bilinear(h, ((hh + 1) // 2, (ww + 1) // 2))
        mid = self.conv_mid(down).elu()
        return h + resize_nearest(mid, (hh, ww))


class Head(Module):
    """3x3 conv -> sigmoid -> scaled to pixels of the full-resolution image."""

    def __init__(self, rng, c: int):
        self.conv = Conv(rng, c, 1, bias_init=-2.0)

    def __call__(self, x: Tensor, cap: float) -> Tensor:
        return self.conv(x).sigmoid() * cap


@dataclass
class FullScaleDisparities:
    """Full-resolution disparity per head plus the native-resolution maps."""

    decoder: list = field(default_factory=list)
    encoder: list = field(default_factory=list)
    native: dict = field(default_factory=dict)
    names_decoder: list = field(default_factory=list)
    names_encoder: list = field(default_factory=list)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(zip(self.names_decoder, self.decoder)) + list(zip(self.names_encoder, self.encoder))

    def __getitem__(self, name: str) -> Tensor:
        return dict(self.items())[name]

    def __len__(self) -> int:
        return len(self.decoder) + len(self.encoder)

    def __contains__(self, name: str) -> bool:
        return name in self.names_decoder or name in self.names_encoder


def _requirements(keep) -> tuple[int, int, set, set]:
    """Deepest encoder stage, shallowest decoder level, bridges and heads needed for ``keep``."""
    enc_depth = -1
    dec_low = LEVELS
    bridges, heads = set(), set()
    for name in keep:
        k = int(name[1:])
        heads.add(name)
        if name[0] == "d":
            enc_depth = LEVELS - 1
            dec_low = min(dec_low, k)
        else:
            enc_depth = max(enc_depth, k)
            bridges.add(k)
    return enc_depth, dec_low, bridges, heads


class FullScaleNet(Module):
    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        rng = np.random.default_rng(self.config.seed)
        w = self.config.widths
        self.stem = Conv(rng, 3, w[0])
        self.down = {k: Conv(rng, w[k - 1], w[k], stride=2) for k in range(1, LEVELS)}
        self.enc = {k: ResBlock(rng, w[k]) for k in range(LEVELS)}
        self.bridge = {k: ResBlock(rng, w[k]) for k in range(LEVELS)}
        self.upconv = {k: Conv(rng, w[k + 1], w[k]) for k in range(LEVELS - 1)}
        self.dec = {k: ResUBlock(rng, w[k] if k == LEVELS - 1 else 2 * w[k], w[k]) for k in range(LEVELS)}
        self.heads = {name: Head(rng, w[int(name[1:])]) for name in ALL_SCALES}
        self.keep = tuple(ALL_SCALES if self.config.use_encoder_scales else DECODER_SCALES)
        if not self.config.use_encoder_scales:
            self._drop(self.keep)

    # -- pruning --------------------------------------------------------------

    def _drop(self, keep) -> None:
        enc_depth, dec_low, bridges, heads = _requirements(keep)
        self.down = {k: m for k, m in self.down.items() if k <= enc_depth}
        self.enc = {k: m for k, m in self.enc.items() if k <= enc_depth}
        self.bridge = {k: m for k, m in self.bridge.items() if k in bridges}
        self.upconv = {k: m for k, m in self.upconv.items() if k >= dec_low}
        self.dec = {k: m for k, m in self.dec.items() if k >= dec_low}
        self.heads = {k: m for k, m in self.heads.items() if k in heads}
        self.keep = tuple(n for n in ALL_SCALES if n in heads)

    # -- forward --------------------------------------------------------------

    def __call__(self, image: Tensor) -> FullScaleDisparities:
        return self.forward(image)

    def forward(self, image: Tensor) -> FullScaleDisparities:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected N x 3 x H x W input, got {image.shape}")
        n, _, H, W = image.shape
        step = 2 ** (LEVELS - 1)
        if H % step or W % step:
            raise ValueError(f"input {H}x{W} must be divisible by {step}")
        cap = self.config.disp_max_fraction * W
        enc_depth, dec_low, bridges, heads = _requirements(self.keep)

        feats = []
        x = self.stem((image - INPUT_MEAN) * (1.0 / INPUT_STD)).elu()
        for k in range(enc_depth + 1):
            if k > 0:
                x = self.down[k](x).elu()
            x = self.enc[k](x)
            feats.append(x)

        out = FullScaleDisparities()
        native = {}
        dec = None
        for k in range(LEVELS - 1, dec_low - 1, -1):
            if k == LEVELS - 1:
                dec = self.dec[k](feats[k])
            else:
                up = self.upconv[k](upsample_nearest(dec, 2)).elu()
                dec = self.dec[k](concat([up, feats[k]], axis=1))
            name = f"d{k}"
            if name in heads:
                native[name] = self.heads[name](dec, cap)
        for k in sorted(bridges):
            name = f"e{k}"
            native[name] = self.heads[name](self.bridge[k](feats[k]), cap)

        for name in ALL_SCALES:
            if name not in native:
                continue
            full = resize_bilinear(native[name], (H, W))
            if name[0] == "d":
                out.names_decoder.append(name)
                out.decoder.append(full)
            else:
                out.names_encoder.append(name)
                out.encoder.append(full)
        out.native = native
        return out

    def summary(self, height: int = 64, width: int = 192) -> dict:
        """Parameter count and multiply-accumulate count of the convolutions for one image."""
        _MacCounter.active, _MacCounter.total = True, 0
        try:
            with no_grad():
                self.forward(Tensor(np.zeros((1, 3, height, width))))
            macs = _MacCounter.total
        finally:
            _MacCounter.active = False
        return {"parameters": self.num_parameters(), "macs": macs, "heads": list(self.keep)}


def prune_for_inference(model: FullScaleNet, keep) -> FullScaleNet:
    """A model sharing ``model``'s weights that computes only what the kept heads need."""
    keep = tuple(keep)
    if not keep:
        raise ValueError("keep must name at least one head")
    unknown = set(keep) - set(model.keep)
    if unknown:
        raise ValueError(f"heads not available in this model: {sorted(unknown)}")
    pruned = FullScaleNet.__new__(FullScaleNet)
    pruned.__dict__.update({k: (dict(v) if isinstance(v, dict) else v) for k, v in vars(model).items()})
    pruned._drop(keep)
    return pruned


# -- checkpoints ---------------------------------------------------------------

MANIFEST = "manifest.txt"


def save_checkpoint(model: FullScaleNet, directory, step: int = 0, extra: dict | None = None) -> Path:
    """Write one EPCT file per parameter plus a text manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"step = {step}"]
    for key, value in asdict(model.config).items():
        lines.append(f"config.{key} = {value}")
    for key, value in (extra or {}).items():
        lines.append(f"extra.{key} = {value}")
    lines.append(f"heads = {','.join(model.keep)}")
    for name, p in model.named_parameters():
        fname = name.replace(".", "_") + ".epct"
        serialize.save(directory / fname, p.data)
        lines.append(f"param {name} = {fname}")
    tmp = directory / (MANIFEST + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, directory / MANIFEST)
    return directory


def read_manifest(directory) -> dict:
    info = {"params": {}, "config": {}, "extra": {}}
    for line in (Path(directory) / MANIFEST).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        if key.startswith("param "):
            info["params"][key[6:]] = value
        elif key.startswith("config."):
            info["config"][key[7:]] = value
        elif key.startswith("extra."):
            info["extra"][key[6:]] = value
        else:
            info[key] = value
    return info


def _parse_config(raw: dict) -> ModelConfig:
    typed = {}
    for name, default in asdict(ModelConfig()).items():
        if name not in raw:
            continue
        if isinstance(default, bool):
            typed[name] = raw[name] == "True"
        else:
            typed[name] = type(default)(raw[name])
    return ModelConfig(**typed)


def load_checkpoint(directory) -> tuple[FullScaleNet, int]:
    directory = Path(directory)
    info = read_manifest(directory)
    model = FullScaleNet(_parse_config(info["config"]))
    heads = tuple(h for h in info.get("heads", "").split(",") if h)
    if heads and heads != model.keep:
        unknown = set(heads) - set(model.keep)
        if unknown:
            raise ValueError(f"checkpoint lists unknown heads: {sorted(unknown)}")
        model._drop(heads)
    params = dict(model.named_parameters())
    missing = set(params) - set(info["params"])
    if missing:
        raise ValueError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    for name, fname in info["params"].items():
        if name not in params:
            continue
        arr = serialize.load(directory / fname)
        if arr.shape != params[name].shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != model {params[name].shape}")
        params[name].data = arr
    return model, int(info.get("step", 0))
