"""The NAF base block, its three hardware-friendly alternatives, and conv-BN folding."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from .module import BatchNorm2d, Conv2d, LayerNorm2d, Module, Sequential


class BlockKind(enum.IntEnum):
    ALT0 = 0  # unmodified NAF block
    ALT1 = 1  # NAF without layer norm
    ALT2 = 2  # NAF without channel attention
    ALT3 = 3  # conv -> BN -> ReLU with residual

    @property
    def label(self) -> str:
        return f"Alt{int(self)}"

    @classmethod
    def parse(cls, text: str) -> "BlockKind":
        m = re.fullmatch(r"(?:alt(?:ernative)?-?)?([0-3])", text.strip().lower())
        if not m:
            raise ValueError(f"unknown block kind {text!r}")
        return cls(int(m.group(1)))


@dataclass(frozen=True, order=True)
class CandidateSpec:
    kind: BlockKind
    count: int

    def __post_init__(self):
        if not isinstance(self.count, (int, np.integer)) or self.count < 1:
            raise ValueError(f"block count must be a positive int, got {self.count!r}")
        object.__setattr__(self, "kind", BlockKind(self.kind))

    @property
    def id(self) -> str:
        return f"{self.count}x{self.kind.label}"

    def __str__(self) -> str:
        return self.id

    @classmethod
    def parse(cls, text: str) -> "CandidateSpec":
        m = re.fullmatch(r"\s*(\d+)\s*x\s*(\S+)\s*", text, flags=re.IGNORECASE)
        if not m:
            raise ValueError(f"candidate must look like '2xAlt3', got {text!r}")
        return cls(BlockKind.parse(m.group(2)), int(m.group(1)))


class NAFBlock(Module):
    """NAF block; ``use_ln``/``use_sca`` switch off layer norm / channel attention.

    LN -> 1x1 expand -> 3x3 depthwise -> SimpleGate -> channel attention -> 1x1,
    residual; then LN -> 1x1 expand -> SimpleGate -> 1x1, residual.
    """

    def __init__(self, c: int, use_ln: bool = True, use_sca: bool = True, dw_expand: int = 2,
                 ffn_expand: int = 2, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        dw = c * dw_expand
        ffn = c * ffn_expand
        if dw % 2 or ffn % 2:
            raise ValueError(f"SimpleGate needs an even channel count, got {dw} and {ffn} for width {c}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c = c
        self.use_ln = use_ln
        self.use_sca = use_sca
        if use_ln:
            self.norm1 = LayerNorm2d(c)
            self.norm2 = LayerNorm2d(c)
        self.conv1 = Conv2d(c, dw, 1, rng=rng)
        self.conv2 = Conv2d(dw, dw, 3, padding=1, groups=dw, rng=rng)
        if use_sca:
            self.sca = Conv2d(dw // 2, dw // 2, 1, rng=rng)
        self.conv3 = Conv2d(dw // 2, c, 1, rng=rng)
        self.conv4 = Conv2d(c, ffn, 1, rng=rng)
        self.conv5 = Conv2d(ffn // 2, c, 1, rng=rng)

    def identity_init(self) -> None:
        self.conv3.zero_()
        self.conv5.zero_()

    def forward(self, inp: Tensor) -> Tensor:
        if inp.shape[1] != self.c:
            raise ValueError(f"block width is {self.c} but input has {inp.shape[1]} channels")
        x = self.norm1(inp) if self.use_ln else inp
        x = ops.simple_gate(self.conv2(self.conv1(x)))
        if self.use_sca:
            x = ops.mul(x, self.sca(ops.global_avg_pool(x)))
        y = ops.add(inp, self.conv3(x))
        x = self.norm2(y) if self.use_ln else y
        x = self.conv5(ops.simple_gate(self.conv4(x)))
        return ops.add(y, x)


class ConvBNReLUBlock(Module):
    """x + ReLU(BN(Conv3x3(x))); depthwise conv unless ``depthwise=False``."""

    def __init__(self, c: int, depthwise: bool = True, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.c = c
        self.conv = Conv2d(c, c, 3, padding=1, groups=c if depthwise else 1, rng=rng)
        self.bn = BatchNorm2d(c)

    def identity_init(self) -> None:
        self.bn.weight.data[...] = 0.0
        self.bn.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.c:
            raise ValueError(f"block width is {self.c} but input has {x.shape[1]} channels")
        return ops.add(x, ops.relu(self.bn(self.conv(x))))

    def folded(self) -> "FoldedConvReLUBlock":
        if self.training:
            raise RuntimeError("fold only in eval mode: BN must use fixed statistics")
        w, b = fold_conv_bn(
            (self.conv.weight.data, None if self.conv.bias is None else self.conv.bias.data),
            (self.bn.weight.data, self.bn.bias.data, self.bn.running_mean, self.bn.running_var, self.bn.eps),
        )
        return FoldedConvReLUBlock(w, b, self.conv.groups)


class FoldedConvReLUBlock(Module):
    """Inference form of :class:`ConvBNReLUBlock` with BN absorbed into the conv."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, groups: int) -> None:
        super().__init__()
        self.weight = Tensor(weight)
        self.bias = Tensor(bias)
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(x, ops.relu(ops.conv2d(x, self.weight, self.bias, 1, 1, self.groups)))


def fold_conv_bn(conv_params, bn_params):
    """Absorb inference-mode batch norm into the preceding convolution.

    conv_params: (weight[C_out, ...], bias[C_out] or None)
    bn_params: (gamma, beta, running_mean, running_var, eps)
    Returns (weight, bias) of a single conv equal to conv -> BN.
    """
    weight, bias = conv_params
    gamma, beta, mean, var, eps = bn_params
    weight = np.asarray(weight, dtype=np.float64)
    denom = np.asarray(var, dtype=np.float64) + eps
    if np.any(denom <= 0):
        raise ValueError("running_var + eps must be positive to fold")
    scale = np.asarray(gamma, dtype=np.float64) / np.sqrt(denom)
    b = np.zeros(weight.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
    folded_w = weight * scale.reshape(-1, *([1] * (weight.ndim - 1)))
    folded_b = (b - np.asarray(mean, dtype=np.float64)) * scale + np.asarray(beta, dtype=np.float64)
    return folded_w, folded_b


def make_block(kind: BlockKind, c: int, rng: np.random.Generator, alt3_depthwise: bool = True) -> Module:
    kind = BlockKind(kind)
    if kind is BlockKind.ALT0:
        return NAFBlock(c, rng=rng)
    if kind is BlockKind.ALT1:
        return NAFBlock(c, use_ln=False, rng=rng)
    if kind is BlockKind.ALT2:
        return NAFBlock(c, use_sca=False, rng=rng)
    return ConvBNReLUBlock(c, depthwise=alt3_depthwise, rng=rng)


def make_candidate(spec: CandidateSpec, c: int, rng: np.random.Generator, alt3_depthwise: bool = True,
                   identity: bool = True) -> Sequential:
    blocks = [make_block(spec.kind, c, rng, alt3_depthwise) for _ in range(spec.count)]
    if identity:
        for b in blocks:
            b.identity_init()
    return Sequential(*blocks)

