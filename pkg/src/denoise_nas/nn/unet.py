"""U-Net assembly: (encoders)-middle-(decoders) with a global residual."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..autodiff import Tensor, ops
from .blocks import BlockKind, CandidateSpec, make_candidate
from .module import Conv2d, Module

StageFactory = Callable[[str, int, np.random.Generator], Module]


@dataclass
class UNetConfig:
    """Network layout.

    ``enc_counts`` lists Enc1..EncD; ``dec_counts`` lists decoders in the
    order they run (DecD first, Dec1 last), so the full-scale default reads
    (2-2-4-8)-12-(2-2-2-2). ``stages`` overrides the block choice of any
    stage; stages not listed use ``count`` NAF blocks.
    """

    width: int = 8
    in_channels: int = 3
    enc_counts: tuple[int, ...] = (2, 2, 4, 8)
    mid_count: int = 12
    dec_counts: tuple[int, ...] = (2, 2, 2, 2)
    stages: dict[str, CandidateSpec] = field(default_factory=dict)
    alt3_depthwise: bool = True

    def __post_init__(self):
        self.enc_counts = tuple(int(c) for c in self.enc_counts)
        self.dec_counts = tuple(int(c) for c in self.dec_counts)
        if self.width < 1 or self.in_channels < 1:
            raise ValueError("width and in_channels must be positive")
        if len(self.enc_counts) != len(self.dec_counts):
            raise ValueError(f"{len(self.enc_counts)} encoders but {len(self.dec_counts)} decoders")
        if any(c < 1 for c in (*self.enc_counts, *self.dec_counts, self.mid_count)):
            raise ValueError("every stage needs at least one block")
        # pixel-shuffle upsampling halves channels of a 2c-wide conv output
        if self.depth and self.width % 2:
            raise ValueError(f"width must be even for pixel-shuffle upsampling, got {self.width}")
        unknown = set(self.stages) - set(self.stage_ids)
        if unknown:
            raise ValueError(f"unknown stage ids {sorted(unknown)}; valid: {self.stage_ids}")
        self.stages = {k: v if isinstance(v, CandidateSpec) else CandidateSpec.parse(str(v))
                       for k, v in self.stages.items()}

    @property
    def depth(self) -> int:
        return len(self.enc_counts)

    @property
    def stage_ids(self) -> list[str]:
        d = self.depth
        return [f"Enc{i}" for i in range(1, d + 1)] + ["Mid"] + [f"Dec{i}" for i in range(d, 0, -1)]

    def base_count(self, stage: str) -> int:
        if stage == "Mid":
            return self.mid_count
        level = int(stage[3:])
        if stage.startswith("Enc"):
            return self.enc_counts[level - 1]
        return self.dec_counts[self.depth - level]

    def stage_width(self, stage: str) -> int:
        if stage == "Mid":
            return self.width * 2 ** self.depth
        return self.width * 2 ** (int(stage[3:]) - 1)

    def stage_scale(self, stage: str) -> int:
        """Downsampling factor of the stage's feature map relative to the input."""
        return self.stage_width(stage) // self.width

    def spec_for(self, stage: str) -> CandidateSpec:
        if stage in self.stages:
            return self.stages[stage]
        return CandidateSpec(BlockKind.ALT0, self.base_count(stage))

    def with_stages(self, stages: dict[str, CandidateSpec]) -> "UNetConfig":
        merged = dict(self.stages)
        merged.update(stages)
        return UNetConfig(self.width, self.in_channels, self.enc_counts, self.mid_count, self.dec_counts,
                          merged, self.alt3_depthwise)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "in_channels": self.in_channels,
            "enc_counts": list(self.enc_counts),
            "mid_count": self.mid_count,
            "dec_counts": list(self.dec_counts),
            "stages": {k: self.spec_for(k).id for k in self.stage_ids},
            "alt3_depthwise": self.alt3_depthwise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        d = dict(d)
        stages = {k: CandidateSpec.parse(v) for k, v in d.pop("stages", {}).items()}
        return cls(stages=stages, **d)


def reference_base_config(width: int = 64) -> UNetConfig:
    return UNetConfig(width=width)


class UNet(Module):
    """Stem conv, encoder stages with stride-2 downsampling, middle stage,
    pixel-shuffle decoders with additive skips, head conv, and input residual.

    Stage modules come from ``stage_factory(stage_id, width, rng)``; a stage
    whose forward takes a mixture weight vector receives ``alphas[stage_id]``.
    """

    def __init__(self, config: UNetConfig, stage_factory: StageFactory | None = None, seed: int = 0,
                 identity_init: bool = True) -> None:
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        if stage_factory is None:
            stage_factory = discrete_stage_factory(config)
        w = config.width
        self.intro = Conv2d(config.in_channels, w, 3, padding=1, rng=rng)
        self.stage_order = config.stage_ids
        chan = w
        for i in range(1, config.depth + 1):
            self.add_module(f"Enc{i}", stage_factory(f"Enc{i}", chan, rng))
            self.add_module(f"down{i}", Conv2d(chan, 2 * chan, 2, stride=2, rng=rng))
            chan *= 2
        self.add_module("Mid", stage_factory("Mid", chan, rng))
        for i in range(config.depth, 0, -1):
            self.add_module(f"up{i}", Conv2d(chan, 2 * chan, 1, bias=False, rng=rng))
            chan //= 2
            self.add_module(f"Dec{i}", stage_factory(f"Dec{i}", chan, rng))
        self.ending = Conv2d(w, config.in_channels, 3, padding=1, rng=rng)
        if identity_init:
            self.ending.zero_()

    def stage(self, stage_id: str) -> Module:
        return self._children[stage_id]

    def _run_stage(self, stage_id: str, x: Tensor, alphas) -> Tensor:
        mod = self._children[stage_id]
        if getattr(mod, "is_mixed", False):
            if alphas is None or stage_id not in alphas:
                raise ValueError(f"mixed stage {stage_id} needs mixture weights")
            return mod(x, alphas[stage_id])
        return mod(x)

    def forward(self, inp: Tensor, alphas: dict[str, Tensor] | None = None) -> Tensor:
        n, c, h, w = inp.shape
        f = 2 ** self.config.depth
        if c != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {c}")
        if h % f or w % f:
            raise ValueError(f"spatial size {h}x{w} must be divisible by {f}")
        x = self.intro(inp)
        skips = []
        for i in range(1, self.config.depth + 1):
            x = self._run_stage(f"Enc{i}", x, alphas)
            skips.append(x)
            x = self._children[f"down{i}"](x)
        x = self._run_stage("Mid", x, alphas)
        for i in range(self.config.depth, 0, -1):
            x = ops.pixel_shuffle(self._children[f"up{i}"](x), 2)
            x = ops.add(x, skips[i - 1])
            x = self._run_stage(f"Dec{i}", x, alphas)
        return ops.add(self.ending(x), inp)


def discrete_stage_factory(config: UNetConfig, identity: bool = True) -> StageFactory:
    def factory(stage_id: str, width: int, rng: np.random.Generator) -> Module:
        return make_candidate(config.spec_for(stage_id), width, rng, config.alt3_depthwise, identity)

    return factory


def build_unet(config: UNetConfig, seed: int = 0, identity_init: bool = True) -> UNet:
    """Discrete U-Net for ``config``; identity_init makes it the identity map."""
    return UNet(config, discrete_stage_factory(config, identity_init), seed=seed, identity_init=identity_init)
