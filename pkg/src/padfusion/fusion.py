"""PAD fusion stage: spatial gating followed by spectral correction.

One stage runs ``SCF -> FD -> (PSC on phase, ASF on amplitude) -> FR``.
PSC and ASF touch disjoint halves of the decoupled spectrum, so their order
does not matter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .spectral import AmpPhase, fd, fr, radial_distance
from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    concat_channels,
    conv1x1,
    expand,
    glorot_uniform,
    leaky_relu,
    mlp2,
    sigmoid,
)

__all__ = [
    "ScfParams",
    "PscParams",
    "AsfParams",
    "PadBlockParams",
    "DEFAULT_TAU",
    "DEFAULT_RADIUS_INIT",
    "init_scf",
    "init_psc",
    "init_asf",
    "init_pad_block",
    "scf_forward",
    "psc_forward",
    "phase_correction_mask",
    "radial_dist",
    "high_frequency_mask",
    "asf_forward",
    "pad_block_forward",
    "pad_block_param_count",
]

DEFAULT_TAU = 10.0
DEFAULT_RADIUS_INIT = 0.1


def _zeros(shape, name: str) -> Parameter:
    return Parameter(np.zeros(shape), name)


def _dense(rng, cout: int, cin: int, name: str, zero: bool = False):
    w = np.zeros((cout, cin)) if zero else glorot_uniform(rng, (cout, cin), cin, cout)
    return Parameter(w, f"{name}.weight"), _zeros((cout,), f"{name}.bias")


@dataclass
class ScfParams:
    att_weight: Parameter
    att_bias: Parameter
    fuse_weight: Parameter
    fuse_bias: Parameter

    def parameters(self) -> Iterator[Parameter]:
        yield from (self.att_weight, self.att_bias, self.fuse_weight, self.fuse_bias)


@dataclass
class PscParams:
    stack: list[tuple[Parameter, Parameter]]
    final: tuple[Parameter, Parameter]
    reduction: int

    @property
    def depth(self) -> int:
        return len(self.stack)

    def parameters(self) -> Iterator[Parameter]:
        for w, b in self.stack:
            yield w
            yield b
        yield from self.final


@dataclass
class AsfParams:
    radius_raw: Parameter
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    fuse_weight: Parameter
    fuse_bias: Parameter
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @property
    def radius(self) -> float:
        return 1.0 / (1.0 + math.exp(-self.radius_raw.item()))

    def parameters(self) -> Iterator[Parameter]:
        yield from (self.radius_raw, self.w1, self.b1, self.w2, self.b2, self.fuse_weight, self.fuse_bias)


@dataclass
class PadBlockParams:
    scf: ScfParams
    psc: PscParams
    asf: AsfParams
    stage_index: int = 0
    channels: int = field(init=False)

    def __post_init__(self):
        self.channels = self.scf.fuse_weight.shape[0]

    def parameters(self) -> Iterator[Parameter]:
        yield from self.scf.parameters()
        yield from self.psc.parameters()
        yield from self.asf.parameters()


def init_scf(rng, channels: int, prefix: str = "scf", gate_channels: int = 1) -> ScfParams:
    if gate_channels not in (1, channels):
        raise ValueError("gate must have 1 or C channels")
    aw, ab = _dense(rng, gate_channels, 2 * channels, f"{prefix}.att")
    fw, fb = _dense(rng, channels, 2 * channels, f"{prefix}.fuse")
    return ScfParams(aw, ab, fw, fb)


def init_psc(rng, channels: int, depth: int = 2, reduction: int = 4, prefix: str = "psc") -> PscParams:
    if depth < 1:
        raise ValueError("PSC depth must be at least 1")
    if reduction < 1 or channels % reduction:
        raise ShapeError(f"reduction {reduction} must divide channel count {channels}")
    hidden = channels // reduction
    stack = []
    cin = channels
    for k in range(depth):
        stack.append(_dense(rng, hidden, cin, f"{prefix}.conv{k + 1}"))
        cin = hidden
    final = _dense(rng, 1, hidden, f"{prefix}.final")
    return PscParams(stack, final, reduction)


def init_asf(
    rng,
    channels: int,
    radius_init: float = DEFAULT_RADIUS_INIT,
    tau: float = DEFAULT_TAU,
    prefix: str = "asf",
    zero: bool = False,
) -> AsfParams:
    """ASF weights; ``zero=True`` makes the block a pure residual identity."""
    w1, b1 = _dense(rng, channels, channels, f"{prefix}.mlp1", zero)
    w2, b2 = _dense(rng, channels, channels, f"{prefix}.mlp2", zero)
    fw, fb = _dense(rng, channels, 2 * channels, f"{prefix}.fuse", zero)
    radius = Parameter(np.array(float(radius_init)), f"{prefix}.radius_raw")
    return AsfParams(radius, w1, b1, w2, b2, fw, fb, tau)


def init_pad_block(
    rng,
    channels: int,
    stage_index: int = 0,
    psc_depth: int = 2,
    psc_reduction: int = 4,
    radius_init: float = DEFAULT_RADIUS_INIT,
    tau: float = DEFAULT_TAU,
    prefix: str | None = None,
    zero_asf: bool = False,
    gate_channels: int = 1,
) -> PadBlockParams:
    prefix = f"stage{stage_index}" if prefix is None else prefix
    return PadBlockParams(
        scf=init_scf(rng, channels, f"{prefix}.scf", gate_channels),
        psc=init_psc(rng, channels, psc_depth, psc_reduction, f"{prefix}.psc"),
        asf=init_asf(rng, channels, radius_init, tau, f"{prefix}.asf", zero_asf),
        stage_index=stage_index,
    )


def pad_block_param_count(
    channels: int, psc_depth: int = 2, psc_reduction: int = 4, gate_channels: int = 1
) -> int:
    c, g = channels, gate_channels
    hidden = c // psc_reduction
    scf = g * 2 * c + g + 2 * c * c + c
    psc = (c * hidden + hidden) + (psc_depth - 1) * (hidden * hidden + hidden) + hidden + 1
    asf = 1 + 2 * (c * c + c) + 2 * c * c + c
    return scf + psc + asf


# ---------------------------------------------------------------------------


def _gate_like(gate: Tensor, like: Tensor) -> Tensor:
    return gate if gate.shape == like.shape else expand(gate, like.shape)


def scf_forward(x1: Tensor, x2: Tensor, p: ScfParams) -> Tensor:
    """Sigmoid-gated blend of two feature maps followed by a 1x1 fuse."""
    if x1.shape != x2.shape:
        raise ShapeError(f"scf: feature shapes {x1.shape} and {x2.shape} differ")
    s = sigmoid(conv1x1(concat_channels(x1, x2), p.att_weight, p.att_bias))
    s = _gate_like(s, x1)
    x1g = s * x1
    x2g = (1.0 - s) * x2
    return conv1x1(concat_channels(x1g, x2g), p.fuse_weight, p.fuse_bias)


def phase_correction_mask(phase: Tensor, p: PscParams) -> Tensor:
    """Single-channel PCM in (0, 1) from a stack of 1x1 convs."""
    if phase.shape[-3] != p.stack[0][0].shape[1]:
        raise ShapeError(f"psc: expected {p.stack[0][0].shape[1]} channels, got {phase.shape[-3]}")
    h = phase
    for w, b in p.stack:
        h = leaky_relu(conv1x1(h, w, b))
    return sigmoid(conv1x1(h, *p.final))


def psc_forward(phase: Tensor, p: PscParams) -> Tensor:
    """P' = P * (1 + PCM), with the mask shared across channels."""
    pcm = phase_correction_mask(phase, p)
    return phase * (1.0 + expand(pcm, phase.shape))


def radial_dist(height: int, half_width: int) -> Tensor:
    return Tensor(radial_distance(height, half_width)[None])


def high_frequency_mask(height: int, half_width: int, p: AsfParams) -> Tensor:
    """sigmoid((Dist - sigmoid(r)) * tau), shape ``[1, H, Wh]``."""
    dist = radial_dist(height, half_width)
    r = expand(sigmoid(p.radius_raw), dist.shape)
    return sigmoid((dist - r) * p.tau)


def asf_forward(amp: Tensor, p: AsfParams) -> Tensor:
    """Residual amplitude fusion with a soft, trainable high-pass mask."""
    c, h, wh = amp.shape[-3:]
    if p.w1.shape[1] != c:
        raise ShapeError(f"asf: expected {p.w1.shape[1]} channels, got {c}")
    mask = expand(high_frequency_mask(h, wh, p), amp.shape)
    a_hi = mlp2(amp * mask, p.w1, p.b1, p.w2, p.b2)
    delta = conv1x1(concat_channels(amp, a_hi), p.fuse_weight, p.fuse_bias)
    return amp + delta


def pad_block_forward(x_rgb: Tensor, x_sar: Tensor, p: PadBlockParams) -> tuple[Tensor, Tensor, Tensor]:
    """Fuse one stage; returns ``(fused, amp_before, amp_after)``.

    Single-pixel stages (the 1/32 level of a small input) are accepted; their
    spectrum is the lone DC bin.
    """
    x = scf_forward(x_rgb, x_sar, p.scf)
    ap = fd(x, allow_degenerate=True)
    amp_after = asf_forward(ap.amp, p.asf)
    phase_after = psc_forward(ap.phase, p.psc)
    fused = fr(AmpPhase(amp_after, phase_after, ap.full_width), warn=False)
    return fused, ap.amp, amp_after
