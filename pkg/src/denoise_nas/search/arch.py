"""Architecture parameters, mixed stages and the supernet."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..autodiff import Tensor, ops
from ..nn.blocks import make_candidate
from ..nn.module import Module
from ..nn.unet import UNet, UNetConfig, discrete_stage_factory
from .space import StageRoster


class ArchState:
    """Logits phi per searchable stage; encodings alpha = softmax(phi / T)."""

    def __init__(self, rosters: Sequence[StageRoster], phi: dict[str, np.ndarray] | None = None,
                 temperature: float = 1.0) -> None:
        if not temperature > 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.rosters = [r for r in rosters if r.searchable]
        self.temperature = temperature
        self.phi: dict[str, Tensor] = {}
        for r in self.rosters:
            init = np.zeros(len(r)) if phi is None else np.asarray(phi[r.stage], dtype=np.float64)
            if init.shape != (len(r),):
                raise ValueError(f"{r.stage}: phi has shape {init.shape}, roster has {len(r)} candidates")
            self.phi[r.stage] = Tensor(init.copy(), requires_grad=True, name=f"phi.{r.stage}")

    @classmethod
    def from_alphas(cls, rosters: Sequence[StageRoster], alphas: dict[str, Sequence[float]],
                    temperature: float = 1.0) -> "ArchState":
        """State whose encodings equal ``alphas`` renormalized to sum 1."""
        phi = {}
        for r in rosters:
            if not r.searchable:
                continue
            if r.stage not in alphas:
                raise KeyError(f"no encodings given for stage {r.stage}")
            a = np.asarray(alphas[r.stage], dtype=np.float64)
            if a.shape != (len(r),):
                raise ValueError(f"{r.stage}: {a.size} encodings for {len(r)} candidates")
            if np.any(a < 0) or a.sum() <= 0:
                raise ValueError(f"{r.stage}: encodings must be nonnegative with positive sum")
            phi[r.stage] = temperature * np.log(np.maximum(a, np.finfo(np.float64).tiny))
        return cls(rosters, phi, temperature)

    @property
    def stages(self) -> list[str]:
        return [r.stage for r in self.rosters]

    def roster(self, stage: str) -> StageRoster:
        for r in self.rosters:
            if r.stage == stage:
                return r
        raise KeyError(stage)

    def parameters(self) -> list[Tensor]:
        return list(self.phi.values())

    def alphas(self) -> dict[str, Tensor]:
        return {s: ops.softmax(p, self.temperature) for s, p in self.phi.items()}

    def alpha_values(self) -> dict[str, np.ndarray]:
        out = {}
        for s, p in self.phi.items():
            z = p.data / self.temperature
            e = np.exp(z - z.max())
            out[s] = e / e.sum()
        return out

    def phi_values(self) -> dict[str, np.ndarray]:
        return {s: p.data.copy() for s, p in self.phi.items()}


def mixed_stage_forward(x: Tensor, candidates: Sequence[Module], alpha: Tensor) -> Tensor:
    """sum_i alpha_i * f_i(x) over the stage's candidates."""
    if len(candidates) != alpha.shape[0]:
        raise ValueError(f"{len(candidates)} candidates but {alpha.shape[0]} encodings")
    return ops.mix([c(x) for c in candidates], alpha)


class MixedStage(Module):
    is_mixed = True

    def __init__(self, roster: StageRoster, width: int, rng: np.random.Generator,
                 alt3_depthwise: bool = True) -> None:
        super().__init__()
        self.roster = roster
        for spec in roster.candidates:
            self.add_module(spec.id, make_candidate(spec, width, rng, alt3_depthwise))

    @property
    def candidates(self) -> list[Module]:
        return [self._children[spec.id] for spec in self.roster.candidates]

    def forward(self, x: Tensor, alpha: Tensor) -> Tensor:
        return mixed_stage_forward(x, self.candidates, alpha)


def build_supernet(config: UNetConfig, rosters: Sequence[StageRoster], seed: int = 0) -> UNet:
    """U-Net whose searchable stages mix independently parameterized candidates."""
    by_stage = {r.stage: r for r in rosters}
    discrete = discrete_stage_factory(config)

    def factory(stage_id: str, width: int, rng: np.random.Generator) -> Module:
        r = by_stage.get(stage_id)
        if r is not None and r.searchable:
            return MixedStage(r, width, rng, config.alt3_depthwise)
        return discrete(stage_id, width, rng)

    return UNet(config, factory, seed=seed)


def inherit_weights(supernet: UNet, derived: UNetConfig) -> dict[str, np.ndarray]:
    """State dict for a discrete net built from ``derived``, copied from the
    supernet's selected candidate in each mixed stage."""
    out = {}
    mixed = {sid: supernet.stage(sid) for sid in supernet.stage_order
             if getattr(supernet.stage(sid), "is_mixed", False)}
    for name, arr in supernet.state_dict().items():
        stage, _, rest = name.partition(".")
        if stage in mixed:
            cand, _, tail = rest.partition(".")
            if cand != derived.spec_for(stage).id:
                continue
            out[f"{stage}.{tail}"] = arr.copy()
        else:
            out[name] = arr.copy()
    return out
