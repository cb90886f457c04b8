"""Toy dual-branch encoder feeding a shared decoder through per-stage fusion."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

import numpy as np

from ..fusion import PadBlockParams, init_pad_block, pad_block_forward
from ..tensor import (
    Parameter,
    ShapeError,
    Tensor,
    apply_op,
    binary,
    conv1x1,
    glorot_uniform,
    leaky_relu,
)

__all__ = [
    "ModelConfig",
    "ModelOutput",
    "PadNet",
    "conv3x3_s2",
    "upsample_nearest",
    "encoder_param_count",
    "FUSIONS",
]

STRIDES = (4, 8, 16, 32)
AUX_STAGE = 2


@dataclass
class ModelConfig:
    base_channels: int = 8
    stages: int = 4
    num_classes: int = 3
    psc_depth: int = 2
    psc_reduction: int = 4
    asf_radius_init: float = 0.1
    asf_tau: float = 10.0
    loss_weights: tuple[float, float] = (0.4, 0.1)
    seed: int = 42
    fusion: str = "pad"
    decoder_width: int | None = None
    zero_asf: bool = False
    raw_sum_loss: bool = False

    def __post_init__(self):
        if self.stages != 4:
            raise ValueError("the encoder has exactly four stages")
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}; choose from {sorted(FUSIONS)}")
        self.loss_weights = tuple(float(w) for w in self.loss_weights)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * 2**i for i in range(self.stages))

    @property
    def width(self) -> int:
        return self.decoder_width or 2 * self.base_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d


# ---------------------------------------------------------------------------
# ops implemented on top of the tape


def conv3x3_s2(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution, stride 2, zero padding 1, on ``[..., C, H, W]``."""
    cout, cin, kh, kw = weight.shape
    if (kh, kw) != (3, 3) or x.shape[-3] != cin:
        raise ShapeError(f"conv3x3_s2: weight {weight.shape} incompatible with input {x.shape}")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"conv3x3_s2: spatial size {h}x{w} must be even")
    ho, wo = h // 2, w // 2
    lead = x.shape[:-3]
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xp = np.pad(x.data, pad)
    cols = np.stack(
        [xp[..., ky : ky + 2 * ho : 2, kx : kx + 2 * wo : 2] for ky in range(3) for kx in range(3)],
        axis=-3,
    )  # [..., cin, 9, ho, wo]
    cols_r = cols.reshape(*lead, cin * 9, ho * wo)
    wm = weight.data.reshape(cout, cin * 9)
    out = (np.matmul(wm, cols_r) + bias.data[:, None]).reshape(*lead, cout, ho, wo)
    lead_axes = tuple(range(len(lead)))

    def vjp(g):
        gr = g.reshape(*lead, cout, ho * wo)
        gw = np.matmul(gr, np.swapaxes(cols_r, -1, -2))
        gb = gr.sum(axis=-1)
        if lead_axes:
            gw = gw.sum(axis=lead_axes)
            gb = gb.sum(axis=lead_axes)
        gcols = np.matmul(wm.T, gr).reshape(*lead, cin, 9, ho, wo)
        gxp = np.zeros(xp.shape)
        k = 0
        for ky in range(3):
            for kx in range(3):
                gxp[..., ky : ky + 2 * ho : 2, kx : kx + 2 * wo : 2] += gcols[..., k, :, :]
                k += 1
        return gxp[..., 1:-1, 1:-1], gw.reshape(weight.shape), gb

    return apply_op("conv3x3_s2", out, (x, weight, bias), vjp)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    data = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    h, w = x.shape[-2:]

    def vjp(g):
        blocks = g.reshape(g.shape[:-2] + (h, factor, w, factor))
        return (blocks.sum(axis=(-3, -1)),)

    return apply_op("upsample_nearest", data, (x,), vjp)


def encoder_param_count(in_channels: int, base_channels: int) -> int:
    c = [base_channels * 2**i for i in range(4)]
    n = 9 * in_channels * c[0] + c[0] + 9 * c[0] * c[0] + c[0]
    for i in range(1, 4):
        n += 9 * c[i - 1] * c[i] + c[i]
    return n


# ---------------------------------------------------------------------------


def _add_fusion(x_rgb: Tensor, x_sar: Tensor, block) -> tuple[Tensor, None, None]:
    return binary("add", x_rgb, x_sar), None, None


def _pad_fusion(x_rgb: Tensor, x_sar: Tensor, block: PadBlockParams):
    return pad_block_forward(x_rgb, x_sar, block)


# Swappable stage fusion callables: (x_rgb, x_sar, block params) -> (fused, A, A').
FUSIONS: dict[str, Callable] = {"pad": _pad_fusion, "add": _add_fusion}


@dataclass
class ModelOutput:
    logits: Tensor
    aux_logits: Tensor
    amp_pairs: list[tuple[Tensor, Tensor]] = field(default_factory=list)
    features: dict[str, list[Tensor]] = field(default_factory=dict)


class PadNet:
    """Dual encoder (RGB, SAR), one fusion block per stage, shared decoder."""

    def __init__(self, config: ModelConfig, rgb_channels: int = 3, sar_channels: int = 1):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self._params: dict[str, Parameter] = {}
        self.encoders = {
            "rgb": self._init_encoder(rng, "rgb", rgb_channels),
            "sar": self._init_encoder(rng, "sar", sar_channels),
        }
        self.blocks: list[PadBlockParams | None] = []
        for t, c in enumerate(config.channels):
            if config.fusion == "pad":
                block = init_pad_block(
                    rng,
                    c,
                    stage_index=t,
                    psc_depth=config.psc_depth,
                    psc_reduction=config.psc_reduction,
                    radius_init=config.asf_radius_init,
                    tau=config.asf_tau,
                    prefix=f"stage{t}",
                    zero_asf=config.zero_asf,
                )
                for p in block.parameters():
                    self._register(p)
                self.blocks.append(block)
            else:
                self.blocks.append(None)
        d, k = config.width, config.num_classes
        self.proj = [self._dense(rng, d, c, f"decoder.proj{t}") for t, c in enumerate(config.channels)]
        self.head = self._dense(rng, k, d, "decoder.head")
        self.aux_head = self._dense(rng, k, config.channels[AUX_STAGE], "decoder.aux_head")

    # -- construction helpers
    def _register(self, p: Parameter) -> Parameter:
        if p.name in self._params:
            raise ValueError(f"duplicate parameter name {p.name}")
        self._params[p.name] = p
        return p

    def _dense(self, rng, cout: int, cin: int, name: str):
        w = self._register(Parameter(glorot_uniform(rng, (cout, cin), cin, cout), f"{name}.weight"))
        b = self._register(Parameter(np.zeros(cout), f"{name}.bias"))
        return w, b

    def _conv(self, rng, cout: int, cin: int, name: str):
        fan_in, fan_out = cin * 9, cout * 9
        w = Parameter(glorot_uniform(rng, (cout, cin, 3, 3), fan_in, fan_out), f"{name}.weight")
        return self._register(w), self._register(Parameter(np.zeros(cout), f"{name}.bias"))

    def _init_encoder(self, rng, branch: str, cin: int):
        c = self.config.channels
        layers = [self._conv(rng, c[0], cin, f"enc_{branch}.stem"), self._conv(rng, c[0], c[0], f"enc_{branch}.stage0")]
        for i in range(1, 4):
            layers.append(self._conv(rng, c[i], c[i - 1], f"enc_{branch}.stage{i}"))
        return layers

    # -- parameters
    def parameters(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def param_count(self) -> int:
        return sum(p.size for p in self._params.values())

    def state(self) -> list[tuple[str, np.ndarray]]:
        return [(n, p.data) for n, p in self._params.items()]

    def load_state(self, records) -> None:
        records = dict(records)
        missing = set(self._params) - set(records)
        extra = set(records) - set(self._params)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for n, p in self._params.items():
            p.assign(records[n])

    # -- forward
    def encode(self, img: Tensor, branch: str) -> list[Tensor]:
        h, w = img.shape[-2:]
        if h % 32 or w % 32:
            raise ShapeError(f"input size {h}x{w} must be divisible by 32")
        layers = self.encoders[branch]
        x = leaky_relu(conv3x3_s2(img, *layers[0]))
        feats = []
        for wb in layers[1:]:
            x = leaky_relu(conv3x3_s2(x, *wb))
            feats.append(x)
        return feats

    def decode(self, fused: list[Tensor], out_hw: tuple[int, int]) -> tuple[Tensor, Tensor]:
        if len(fused) != 4:
            raise ShapeError(f"decoder expects 4 stages, got {len(fused)}")
        for t, (f, c) in enumerate(zip(fused, self.config.channels)):
            if f.shape[-3] != c:
                raise ShapeError(f"stage {t}: expected {c} channels, got {f.shape[-3]}")
        acc = None
        for t, f in enumerate(fused):
            up = upsample_nearest(conv1x1(f, *self.proj[t]), 2**t)
            acc = up if acc is None else acc + up
        logits = conv1x1(acc, *self.head)
        fh = out_hw[0] // acc.shape[-2]
        logits = upsample_nearest(logits, fh)
        aux = conv1x1(fused[AUX_STAGE], *self.aux_head)
        aux = upsample_nearest(aux, out_hw[0] // aux.shape[-2])
        return logits, aux

    def forward(self, rgb: Tensor, sar: Tensor) -> ModelOutput:
        f_rgb = self.encode(rgb, "rgb")
        f_sar = self.encode(sar, "sar")
        fuse = FUSIONS[self.config.fusion]
        fused, pairs = [], []
        for t in range(4):
            out, a, a2 = fuse(f_rgb[t], f_sar[t], self.blocks[t])
            fused.append(out)
            if a is not None:
                pairs.append((a, a2))
        logits, aux = self.decode(fused, rgb.shape[-2:])
        return ModelOutput(logits, aux, pairs, {"rgb": f_rgb, "sar": f_sar, "fused": fused})

    __call__ = forward
