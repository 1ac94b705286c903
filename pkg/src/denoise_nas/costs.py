"""Analytic MAC/parameter counts, penalty tables, and Pareto fronts.

MACs follow the usual conv formula C_out * C_in/groups * k^2 * H_out * W_out
(bias excluded). Elementwise and pooling work counts one MAC-equivalent per
element touched; layer norm is four such passes (mean, variance, normalize,
affine). Pixel shuffle is pure data movement and costs nothing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
import yaml

from .nn.blocks import BlockKind, CandidateSpec
from .nn.unet import UNetConfig

if TYPE_CHECKING:
    from .search.space import StageRoster

LAYER_NORM_PASSES = 4


@dataclass(frozen=True)
class OpCost:
    macs: int = 0
    params: int = 0
    foldable: bool = False

    def __post_init__(self):
        if self.macs < 0 or self.params < 0:
            raise ValueError("costs must be nonnegative")

    def __add__(self, other: "OpCost") -> "OpCost":
        return OpCost(self.macs + other.macs, self.params + other.params, self.foldable and other.foldable)

    def __mul__(self, n: int) -> "OpCost":
        return OpCost(self.macs * n, self.params * n, self.foldable)

    __rmul__ = __mul__

    @property
    def gmacs(self) -> float:
        return self.macs / 1e9


def conv_cost(cin: int, cout: int, k: int, h_out: int, w_out: int, groups: int = 1, bias: bool = True) -> OpCost:
    weights = cout * (cin // groups) * k * k
    return OpCost(weights * h_out * w_out, weights + (cout if bias else 0))


def eltwise_cost(numel: int, passes: int = 1) -> OpCost:
    return OpCost(numel * passes, 0)


def layer_norm_cost(c: int, h: int, w: int) -> OpCost:
    return OpCost(LAYER_NORM_PASSES * c * h * w, 2 * c)


def batch_norm_cost(c: int, h: int, w: int) -> OpCost:
    return OpCost(c * h * w, 2 * c)


def naf_block_cost(c: int, h: int, w: int, use_ln: bool = True, use_sca: bool = True,
                   dw_expand: int = 2, ffn_expand: int = 2) -> OpCost:
    hw = h * w
    dw, ffn = c * dw_expand, c * ffn_expand
    total = OpCost()
    if use_ln:
        total += layer_norm_cost(c, h, w)
    total += conv_cost(c, dw, 1, h, w)
    total += conv_cost(dw, dw, 3, h, w, groups=dw)
    total += eltwise_cost(dw // 2 * hw)  # SimpleGate product
    if use_sca:
        total += eltwise_cost(dw // 2 * hw)  # global average pool
        total += conv_cost(dw // 2, dw // 2, 1, 1, 1)
        total += eltwise_cost(dw // 2 * hw)  # channel scaling
    total += conv_cost(dw // 2, c, 1, h, w)
    total += eltwise_cost(c * hw)  # residual
    if use_ln:
        total += layer_norm_cost(c, h, w)
    total += conv_cost(c, ffn, 1, h, w)
    total += eltwise_cost(ffn // 2 * hw)
    total += conv_cost(ffn // 2, c, 1, h, w)
    total += eltwise_cost(c * hw)
    return total


def conv_bn_relu_cost(c: int, h: int, w: int, depthwise: bool = True, folded: bool = True) -> OpCost:
    """Alt3 block; folding drops the BN pass but keeps the conv MACs."""
    conv = conv_cost(c, c, 3, h, w, groups=c if depthwise else 1)
    bn = OpCost(0, 2 * c) if folded else batch_norm_cost(c, h, w)
    total = conv + bn + eltwise_cost(c * h * w) + eltwise_cost(c * h * w)  # ReLU, residual
    return OpCost(total.macs, total.params, foldable=True)


def block_cost(kind: BlockKind, c: int, h: int, w: int, alt3_depthwise: bool = True,
               folded: bool = True) -> OpCost:
    kind = BlockKind(kind)
    if kind is BlockKind.ALT0:
        return naf_block_cost(c, h, w)
    if kind is BlockKind.ALT1:
        return naf_block_cost(c, h, w, use_ln=False)
    if kind is BlockKind.ALT2:
        return naf_block_cost(c, h, w, use_sca=False)
    return conv_bn_relu_cost(c, h, w, depthwise=alt3_depthwise, folded=folded)


def candidate_cost(spec: CandidateSpec, c: int, h: int, w: int, alt3_depthwise: bool = True,
                   folded: bool = True) -> OpCost:
    return block_cost(spec.kind, c, h, w, alt3_depthwise, folded) * spec.count


def stage_resolution(config: UNetConfig, stage: str, resolution: tuple[int, int]) -> tuple[int, int]:
    s = config.stage_scale(stage)
    return resolution[0] // s, resolution[1] // s


def network_cost(config: UNetConfig, resolution: tuple[int, int], folded: bool = True) -> OpCost:
    """Whole U-Net: stem, stages, samplers, skips, head and global residual."""
    H, W = resolution
    f = 2 ** config.depth
    if H % f or W % f:
        raise ValueError(f"resolution {H}x{W} must be divisible by {f}")
    cin, w0 = config.in_channels, config.width
    total = conv_cost(cin, w0, 3, H, W)
    for stage in config.stage_ids:
        c = config.stage_width(stage)
        h, w = stage_resolution(config, stage, resolution)
        total += candidate_cost(config.spec_for(stage), c, h, w, config.alt3_depthwise, folded)
        if stage.startswith("Enc"):
            total += conv_cost(c, 2 * c, 2, h // 2, w // 2)
        elif stage.startswith("Dec"):
            # 1x1 expansion at the coarser level, then pixel shuffle and skip add
            total += conv_cost(2 * c, 4 * c, 1, h // 2, w // 2, bias=False)
            total += eltwise_cost(c * h * w)
    total += conv_cost(w0, cin, 3, H, W)
    total += eltwise_cost(cin * H * W)
    return OpCost(total.macs, total.params)


def mac_count(target, width: int | None = None, resolution: tuple[int, int] = (256, 256),
              alt3_depthwise: bool = True, folded: bool = True) -> OpCost:
    """Cost of a block kind, a candidate, or a whole network config."""
    if isinstance(target, UNetConfig):
        return network_cost(target, resolution, folded)
    if width is None:
        raise ValueError("width is required for a single block or candidate")
    h, w = resolution
    if h < 1 or w < 1 or width < 1:
        raise ValueError("dimensions must be positive")
    if isinstance(target, CandidateSpec):
        return candidate_cost(target, width, h, w, alt3_depthwise, folded)
    return block_cost(BlockKind(target), width, h, w, alt3_depthwise, folded)


# ----------------------------------------------------------------- penalty table


def candidate_key(stage: str, spec: CandidateSpec | str) -> str:
    return f"{stage}/{spec if isinstance(spec, str) else spec.id}"


@dataclass
class CostEntry:
    stage: str
    candidate: CandidateSpec
    macs: int
    params: int
    latency_ms: float | None
    penalty: float


@dataclass
class CostTable:
    """Normalized penalties per searchable stage, in roster order."""

    stages: dict[str, list[CostEntry]] = field(default_factory=dict)
    width: int = 0
    resolution: tuple[int, int] = (0, 0)
    eta: float = 1.0

    def penalties(self, stage: str) -> np.ndarray:
        if stage not in self.stages:
            raise KeyError(f"no cost entries for stage {stage}")
        return np.array([e.penalty for e in self.stages[stage]])

    def entry(self, stage: str, spec: CandidateSpec | str) -> CostEntry:
        key = spec if isinstance(spec, str) else spec.id
        for e in self.stages.get(stage, []):
            if e.candidate.id == key:
                return e
        raise KeyError(f"no cost entry for stage {stage}, candidate {key}")

    def rows(self) -> list[dict]:
        return [
            {"stage": e.stage, "candidate": e.candidate.id, "macs": e.macs, "params": e.params,
             "latency_ms": e.latency_ms, "penalty": e.penalty}
            for entries in self.stages.values() for e in entries
        ]


def load_latency_table(path: str | Path) -> dict[str, float]:
    """Read a latency file.

    Accepted layouts (JSON or YAML)::

        {"unit": "ms", "latency": {"Enc1/1xAlt3": 0.8, ...}}
        {"Enc1/1xAlt3": 0.8, ...}
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"latency table {path} does not exist")
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: latency table must be a mapping")
    if "latency" in doc:
        unit = doc.get("unit", "ms")
        if unit != "ms":
            raise ValueError(f"{path}: unsupported unit {unit!r}; use ms")
        doc = doc["latency"]
    table = {}
    for key, value in doc.items():
        if "/" not in str(key):
            raise ValueError(f"{path}: key {key!r} must look like 'Enc1/2xAlt3'")
        stage, cand = str(key).split("/", 1)
        ms = float(value)
        if not math.isfinite(ms) or ms < 0:
            raise ValueError(f"{path}: latency for {key} must be a nonnegative number")
        table[candidate_key(stage, CandidateSpec.parse(cand))] = ms
    return table


def build_cost_table(rosters: Sequence[StageRoster], config: UNetConfig, resolution: tuple[int, int],
                     latency: dict[str, float] | None = None, eta: float = 1.0) -> CostTable:
    """Penalty = eta * macs/max_macs + (1 - eta) * latency/max_latency per stage."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if eta < 1.0 and latency is None:
        raise ValueError("eta < 1 needs a latency table")
    table = CostTable(width=config.width, resolution=tuple(resolution), eta=eta)
    for roster in rosters:
        if not roster.searchable:
            continue
        c = config.stage_width(roster.stage)
        h, w = stage_resolution(config, roster.stage, resolution)
        costs = [candidate_cost(spec, c, h, w, config.alt3_depthwise) for spec in roster.candidates]
        macs = np.array([oc.macs for oc in costs], dtype=np.float64)
        lat = None
        if latency is not None:
            lat = []
            for spec in roster.candidates:
                key = candidate_key(roster.stage, spec)
                if key not in latency:
                    if eta < 1.0:
                        raise KeyError(f"latency table has no entry for {key}")
                    lat.append(math.nan)
                else:
                    lat.append(latency[key])
            lat = np.array(lat)
        pen = eta * macs / macs.max()
        if eta < 1.0:
            if lat.max() <= 0:
                raise ValueError(f"stage {roster.stage}: all latencies are zero")
            pen = pen + (1.0 - eta) * lat / lat.max()
        table.stages[roster.stage] = [
            CostEntry(roster.stage, spec, int(oc.macs), int(oc.params),
                      None if lat is None or math.isnan(lat[i]) else float(lat[i]), float(pen[i]))
            for i, (spec, oc) in enumerate(zip(roster.candidates, costs))
        ]
    return table


# ----------------------------------------------------------------- Pareto front


@dataclass(frozen=True)
class ParetoPoint:
    quality: float  # PSNR in dB, higher is better
    cost: float  # GMACs, lower is better
    label: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.quality) and math.isfinite(self.cost)):
            raise ValueError(f"point {self.label!r} has non-finite values")

    def dominates(self, other: "ParetoPoint") -> bool:
        return (self.quality >= other.quality and self.cost <= other.cost
                and (self.quality > other.quality or self.cost < other.cost))


def pareto_front(points: Iterable[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated points sorted by cost (then quality descending, label)."""
    pts = sorted(points, key=lambda p: (p.cost, -p.quality, p.label))
    if not pts:
        raise ValueError("pareto_front needs at least one point")
    front = []
    best_cheaper = -math.inf  # best quality among strictly cheaper points
    i = 0
    while i < len(pts):
        j = i
        while j < len(pts) and pts[j].cost == pts[i].cost:
            j += 1
        group = pts[i:j]
        top = group[0].quality
        for p in group:
            if p.quality == top and best_cheaper < p.quality:
                front.append(p)
        best_cheaper = max(best_cheaper, top)
        i = j
    return front


# ----------------------------------------------------------------- report


def report(run, table: CostTable | None, base: UNetConfig, resolution: tuple[int, int],
           width: int | None = None, points: Sequence[ParetoPoint] | None = None) -> dict:
    """Cost/quality summary of a derived architecture against the base network.

    ``run`` needs ``derived`` (a UNetConfig) and ``trace`` (with ``L_P``).
    Costs are evaluated at ``width`` (default: the base width).
    """
    derived = run.derived
    if derived is None:
        raise ValueError("run has no derived architecture")
    w = width or base.width
    base_w = UNetConfig(w, base.in_channels, base.enc_counts, base.mid_count, base.dec_counts,
                        dict(base.stages), base.alt3_depthwise)
    der_w = UNetConfig(w, derived.in_channels, derived.enc_counts, derived.mid_count, derived.dec_counts,
                       dict(derived.stages), derived.alt3_depthwise)
    bc = network_cost(base_w, resolution)
    dc = network_cost(der_w, resolution)
    doc = {
        "resolution": list(resolution),
        "width": w,
        "base": {"stages": base_w.to_dict()["stages"], "gmacs": bc.gmacs, "params": bc.params},
        "derived": {"stages": der_w.to_dict()["stages"], "gmacs": dc.gmacs, "params": dc.params},
        "param_delta_pct": 100.0 * (dc.params - bc.params) / bc.params,
        "mac_ratio": dc.macs / bc.macs,
        "penalty_trace": [float(v) for v in run.trace.get("L_P", [])],
    }
    if table is not None:
        doc["derived_penalty"] = {
            stage: table.entry(stage, der_w.spec_for(stage)).penalty
            for stage in table.stages
            if der_w.spec_for(stage).id in {e.candidate.id for e in table.stages[stage]}
        }
    if points:
        front = pareto_front(points)
        doc["pareto"] = [
            {"label": p.label, "quality": p.quality, "cost": p.cost, "on_front": p in front}
            for p in sorted(points, key=lambda p: (p.cost, -p.quality, p.label))
        ]
    return doc


def dumps_report(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
