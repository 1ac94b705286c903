"""Desk-scale experiments shared by ``scripts/`` and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .config import RunConfig
from .costs import build_cost_table, network_cost
from .data import make_dataset
from .nn.blocks import BlockKind
from .nn.unet import UNetConfig
from .search import default_rosters, finetune, train_supernet
from .search.engine import SearchRun, mean_normalized_entropy


@dataclass
class ToyResult:
    run: SearchRun
    derived: UNetConfig
    baseline: UNetConfig
    noisy_psnr: float
    derived_psnr: float
    derived_before_psnr: float
    baseline_psnr: float
    derived_ssim: float
    baseline_ssim: float
    final_entropy: float
    derived_gmacs: float
    baseline_gmacs: float
    seconds: dict

    def summary(self) -> dict:
        return {
            "derived": {s: self.derived.spec_for(s).id for s in self.derived.stage_ids},
            "baseline": {s: self.baseline.spec_for(s).id for s in self.baseline.stage_ids},
            "noisy_psnr": self.noisy_psnr,
            "derived_psnr": self.derived_psnr,
            "derived_before_psnr": self.derived_before_psnr,
            "baseline_psnr": self.baseline_psnr,
            "derived_ssim": self.derived_ssim,
            "baseline_ssim": self.baseline_ssim,
            "gain_over_noisy_db": self.derived_psnr - self.noisy_psnr,
            "margin_over_baseline_db": self.derived_psnr - self.baseline_psnr,
            "final_mean_normalized_entropy": self.final_entropy,
            "derived_gmacs": self.derived_gmacs,
            "baseline_gmacs": self.baseline_gmacs,
            "seconds": self.seconds,
        }


def all_alt3(config: UNetConfig, rosters) -> UNetConfig:
    """Largest Alt3 candidate of each searchable stage."""
    stages = {}
    for r in rosters:
        if r.searchable:
            alt3 = [c for c in r.candidates if c.kind is BlockKind.ALT3]
            stages[r.stage] = max(alt3, key=lambda c: c.count)
    return config.with_stages(stages)


def toy_search(cfg: RunConfig) -> ToyResult:
    """Search, derive and fine-tune; then fine-tune an all-Alt3 network
    from scratch with the same data and step budget."""
    t0 = time.perf_counter()
    ss = cfg.search_space
    rosters = default_rosters(cfg.network, ss.max_count, ss.searchable, ss.overrides)
    table = build_cost_table(rosters, cfg.network, cfg.costs.resolution)
    data = make_dataset(cfg.data)
    run = train_supernet(cfg.network, rosters, data, table, cfg.train)
    t1 = time.perf_counter()
    tuned = finetune(run.derived, run.supernet, data, cfg.finetune)
    t2 = time.perf_counter()
    baseline = all_alt3(cfg.network, rosters)
    base_tuned = finetune(baseline, None, data, cfg.finetune)
    t3 = time.perf_counter()
    res = (cfg.data.patch_size, cfg.data.patch_size)
    return ToyResult(
        run=run,
        derived=run.derived,
        baseline=baseline,
        noisy_psnr=tuned.after["noisy_psnr"],
        derived_psnr=tuned.after["psnr"],
        derived_before_psnr=tuned.before["psnr"],
        baseline_psnr=base_tuned.after["psnr"],
        derived_ssim=tuned.after["ssim"],
        baseline_ssim=base_tuned.after["ssim"],
        final_entropy=mean_normalized_entropy(run.final_alphas()),
        derived_gmacs=network_cost(run.derived, res).gmacs,
        baseline_gmacs=network_cost(baseline, res).gmacs,
        seconds={"search": t1 - t0, "finetune": t2 - t1, "baseline": t3 - t2, "total": t3 - t0},
    )
