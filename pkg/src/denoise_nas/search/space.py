"""Per-stage candidate rosters of the hardware-aware search space."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..nn.blocks import BlockKind, CandidateSpec
from ..nn.unet import UNetConfig

# Row order of the candidate roster: Alt3 first, then Alt0, Alt1, Alt2.
KIND_ORDER = (BlockKind.ALT3, BlockKind.ALT0, BlockKind.ALT1, BlockKind.ALT2)
MIN_ALT3_LIMIT = 4


@dataclass
class StageRoster:
    stage: str
    candidates: list[CandidateSpec] = field(default_factory=list)
    searchable: bool = True

    def __post_init__(self):
        ids = [c.id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{self.stage}: duplicate candidates in roster {ids}")
        if self.searchable and not self.candidates:
            raise ValueError(f"{self.stage}: searchable stage needs at least one candidate")

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.candidates]

    def index(self, spec: CandidateSpec | str) -> int:
        key = spec if isinstance(spec, str) else spec.id
        return self.ids.index(key)


def stage_limits(base_count: int) -> dict[BlockKind, int]:
    """Largest count per kind: Alt3 up to max(4, base), NAF variants up to base."""
    return {
        BlockKind.ALT3: max(MIN_ALT3_LIMIT, base_count),
        BlockKind.ALT0: base_count,
        BlockKind.ALT1: base_count,
        BlockKind.ALT2: base_count,
    }


def default_roster(config: UNetConfig, stage: str, max_count: int | None = None) -> StageRoster:
    limits = stage_limits(config.base_count(stage))
    cands = []
    for kind in KIND_ORDER:
        top = limits[kind] if max_count is None else min(limits[kind], max_count)
        cands.extend(CandidateSpec(kind, n) for n in range(1, top + 1))
    return StageRoster(stage, cands, searchable=True)


def default_rosters(config: UNetConfig, max_count: int | None = None,
                    searchable: list[str] | None = None,
                    overrides: dict[str, list[str]] | None = None) -> list[StageRoster]:
    """Rosters for every stage in network order.

    ``searchable`` restricts which stages are searched (default: all but Mid);
    ``overrides`` replaces a stage's candidate list with explicit ids.
    """
    overrides = overrides or {}
    unknown = (set(overrides) | set(searchable or [])) - set(config.stage_ids)
    if unknown:
        raise ValueError(f"unknown stage ids {sorted(unknown)}")
    rosters = []
    for stage in config.stage_ids:
        wanted = stage != "Mid" if searchable is None else stage in searchable
        if stage in overrides:
            rosters.append(StageRoster(stage, [CandidateSpec.parse(s) for s in overrides[stage]], searchable=True))
        elif wanted:
            rosters.append(default_roster(config, stage, max_count))
        else:
            rosters.append(StageRoster(stage, [config.spec_for(stage)], searchable=False))
    return rosters


def searchable(rosters: list[StageRoster]) -> list[StageRoster]:
    return [r for r in rosters if r.searchable]
