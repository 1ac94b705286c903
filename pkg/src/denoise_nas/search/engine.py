"""Composite search loss, supernet training, derivation and fine-tuning."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..autodiff import Adam, Tensor, default_dtype, no_grad, ops
from ..costs import CostTable, build_cost_table
from ..data import Dataset, psnr, ssim
from ..nn.unet import UNet, UNetConfig, build_unet
from .arch import ArchState, build_supernet, inherit_weights
from .space import StageRoster

log = logging.getLogger(__name__)


class SearchDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    steps_per_epoch: int | None = None  # None: one pass over the training split
    batch_size: int = 8
    lr_weights: float = 1e-3
    lr_arch: float = 5e-2
    beta: float = 0.1
    lambda_start: float = 0.01
    lambda_end: float = 1.0
    temperature: float = 1.0
    normalized_entropy: bool = True
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive")
        if not (self.lr_weights > 0 and self.lr_arch > 0):
            raise ValueError("learning rates must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0 <= self.lambda_start <= self.lambda_end:
            raise ValueError("need 0 <= lambda_start <= lambda_end")
        if self.lambda_start == 0 and self.lambda_end > 0:
            raise ValueError("an exponential schedule needs lambda_start > 0 unless both are 0")
        if self.epochs < 2 and self.lambda_start != self.lambda_end:
            raise ValueError("a varying lambda schedule needs at least 2 epochs")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")


@dataclass
class FinetuneConfig:
    epochs: int = 10
    steps_per_epoch: int | None = None
    batch_size: int = 8
    lr: float = 1e-3
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")


# ----------------------------------------------------------------- losses


def training_loss(pred: Tensor, gt) -> Tensor:
    """Mean squared error."""
    return ops.mse_loss(pred, gt)


def penalty_loss(alphas: dict[str, Tensor], costs: CostTable) -> Tensor:
    """sum over stages of sum_i alpha_i * penalty_i."""
    total = None
    for stage, a in alphas.items():
        if stage not in costs.stages:
            raise KeyError(f"cost table has no entries for stage {stage}")
        pen = costs.penalties(stage)
        if pen.shape != a.shape:
            missing = len(a.data) - len(pen)
            raise KeyError(f"cost table for stage {stage} has {len(pen)} entries for {len(a.data)} "
                           f"candidates ({missing} missing)")
        term = ops.dot(a, pen.astype(a.dtype))
        total = term if total is None else ops.add(total, term)
    return total


def entropy_loss(alphas: dict[str, Tensor], normalized: bool = True) -> Tensor:
    """sum over stages of -sum_i alpha_i log alpha_i, divided by log K when normalized."""
    total = None
    for a in alphas.values():
        k = a.shape[0]
        h = ops.mul(ops.sum(ops.xlogx(a)), -1.0)
        if normalized:
            if k < 2:
                h = ops.mul(h, 0.0)
            else:
                h = ops.mul(h, 1.0 / math.log(k))
        total = h if total is None else ops.add(total, h)
    return total


def lambda_schedule(epoch: int, config: TrainConfig) -> float:
    """lambda_start * (lambda_end / lambda_start) ** (epoch / (E - 1))."""
    E = config.epochs
    if not 0 <= epoch < E:
        raise ValueError(f"epoch {epoch} outside [0, {E})")
    if config.lambda_start == config.lambda_end:
        return float(config.lambda_start)
    if E < 2:
        raise ValueError("a varying lambda schedule needs at least 2 epochs")
    ratio = config.lambda_end / config.lambda_start
    return float(config.lambda_start * ratio ** (epoch / (E - 1)))


def total_loss(l_t, l_p, l_er, beta: float, lam: float):
    """L = L_T + beta * L_P + lambda * L_ER."""
    return l_t + beta * l_p + lam * l_er


# ----------------------------------------------------------------- derivation


def derive_architecture(arch: ArchState | dict[str, Sequence[float]], rosters: Sequence[StageRoster],
                        base: UNetConfig, costs: CostTable | None = None) -> UNetConfig:
    """Highest-encoding candidate per searchable stage.

    Exact ties go to the lower-penalty candidate, then the lower roster index.
    Without a cost table, penalties come from the analytic model at 256x256.
    """
    alphas = arch.alpha_values() if isinstance(arch, ArchState) else {
        k: np.asarray(v, dtype=np.float64) for k, v in arch.items()}
    searchable = [r for r in rosters if r.searchable]
    if costs is None:
        costs = build_cost_table(searchable, base, (256, 256))
    chosen = {}
    for r in searchable:
        if r.stage not in alphas:
            raise KeyError(f"no encodings for stage {r.stage}")
        a = alphas[r.stage]
        if len(a) != len(r):
            raise ValueError(f"{r.stage}: {len(a)} encodings for {len(r)} candidates")
        top = np.max(a)
        tied = [i for i in range(len(r)) if a[i] == top]
        pen = costs.penalties(r.stage)
        best = min(tied, key=lambda i: (pen[i], i))
        chosen[r.stage] = r.candidates[best]
    return base.with_stages(chosen)


# ----------------------------------------------------------------- search run


@dataclass
class SearchRun:
    config: TrainConfig
    net_config: UNetConfig
    rosters: list[StageRoster]
    trace: dict[str, list[float]] = field(default_factory=dict)
    alpha_history: list[dict[str, list[float]]] = field(default_factory=list)
    final_phi: dict[str, list[float]] = field(default_factory=dict)
    derived: UNetConfig | None = None
    wall_clock_s: float = 0.0
    supernet: UNet | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """Deterministic document; wall-clock metadata is left out."""
        return {
            "format": "denoise-nas-search-run",
            "version": 1,
            "train_config": asdict(self.config),
            "network": self.net_config.to_dict(),
            "rosters": [{"stage": r.stage, "searchable": r.searchable, "candidates": r.ids}
                        for r in self.rosters],
            "trace": self.trace,
            "alpha_history": self.alpha_history,
            "final_phi": self.final_phi,
            "derived": None if self.derived is None else self.derived.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchRun":
        from ..nn.blocks import CandidateSpec

        if doc.get("format") != "denoise-nas-search-run":
            raise ValueError("not a search-run document")
        if not doc.get("alpha_history"):
            raise ValueError("search run has no alpha history")
        rosters = [StageRoster(r["stage"], [CandidateSpec.parse(c) for c in r["candidates"]], r["searchable"])
                   for r in doc["rosters"]]
        return cls(
            config=TrainConfig(**doc["train_config"]),
            net_config=UNetConfig.from_dict(doc["network"]),
            rosters=rosters,
            trace={k: list(v) for k, v in doc["trace"].items()},
            alpha_history=doc["alpha_history"],
            final_phi=doc.get("final_phi", {}),
            derived=None if doc.get("derived") is None else UNetConfig.from_dict(doc["derived"]),
        )

    def final_alphas(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(v) for k, v in self.alpha_history[-1].items()}


def _steps(cfg, n_train: int) -> int:
    return cfg.steps_per_epoch or max(1, math.ceil(n_train / cfg.batch_size))


def _epoch_batches(data: Dataset, batch_size: int, seed: int, epoch: int, steps: int, dtype):
    """``steps`` batches, cycling through reshuffled passes as needed."""
    out, sub = [], 0
    while len(out) < steps:
        for b in data.batches("train", batch_size, seed, epoch * 1000 + sub, dtype=dtype):
            out.append(b)
            if len(out) == steps:
                break
        sub += 1
    return out


def train_supernet(net_config: UNetConfig, rosters: Sequence[StageRoster], data: Dataset,
                   costs: CostTable, config: TrainConfig, use_training_loss: bool = True) -> SearchRun:
    """Single-level joint minimization of L over weights and architecture logits.

    Each step evaluates the supernet on one minibatch, forms
    L = L_T + beta * L_P + lambda(epoch) * L_ER, and steps separate Adam
    optimizers for the weights and the logits. With ``use_training_loss``
    off, only the architecture terms drive the logits (penalty-only search).
    """
    start = time.perf_counter()
    rosters = list(rosters)
    with default_dtype(config.dtype):
        supernet = build_supernet(net_config, rosters, seed=config.seed)
        arch = ArchState(rosters, temperature=config.temperature)
    supernet.train()
    opt_w = Adam(supernet.parameters(), lr=config.lr_weights)
    opt_a = Adam(arch.parameters(), lr=config.lr_arch)
    dtype = np.dtype(config.dtype)
    trace = {k: [] for k in ("lambda", "L_T", "L_P", "L_ER", "L")}
    history = []
    steps = _steps(config, len(data.train))
    with default_dtype(config.dtype):
        for epoch in range(config.epochs):
            lam = lambda_schedule(epoch, config)
            sums = dict.fromkeys(("L_T", "L_P", "L_ER", "L"), 0.0)
            for step, (noisy, clean) in enumerate(_epoch_batches(data, config.batch_size, config.seed,
                                                                 epoch, steps, dtype)):
                alphas = arch.alphas()
                l_p = penalty_loss(alphas, costs)
                l_er = entropy_loss(alphas, config.normalized_entropy)
                if use_training_loss:
                    pred = supernet(Tensor(noisy), alphas)
                    l_t = training_loss(pred, clean)
                    if not np.isfinite(l_t.data):
                        raise SearchDiverged(f"training loss became {float(l_t.data)} at epoch {epoch}, "
                                             f"step {step} (lambda={lam:.4g})")
                else:
                    l_t = Tensor(0.0)
                loss = total_loss(l_t, l_p, l_er, config.beta, lam)
                opt_w.zero_grad()
                opt_a.zero_grad()
                loss.backward()
                if use_training_loss:
                    opt_w.step()
                opt_a.step()
                sums["L_T"] += float(l_t.data)
                sums["L_P"] += float(l_p.data)
                sums["L_ER"] += float(l_er.data)
                sums["L"] += float(loss.data)
            trace["lambda"].append(lam)
            for k, v in sums.items():
                trace[k].append(v / steps)
            history.append({s: [float(v) for v in a] for s, a in arch.alpha_values().items()})
            log.info("epoch %d  lambda=%.4g  L_T=%.5f  L_P=%.4f  L_ER=%.4f", epoch, lam,
                     trace["L_T"][-1], trace["L_P"][-1], trace["L_ER"][-1])
    derived = derive_architecture(arch, rosters, net_config, costs)
    return SearchRun(
        config=config,
        net_config=net_config,
        rosters=rosters,
        trace=trace,
        alpha_history=history,
        final_phi={s: [float(v) for v in p] for s, p in arch.phi_values().items()},
        derived=derived,
        wall_clock_s=time.perf_counter() - start,
        supernet=supernet,
    )


def mean_normalized_entropy(alphas: dict[str, np.ndarray]) -> float:
    vals = []
    for a in alphas.values():
        a = np.asarray(a, dtype=np.float64)
        if len(a) < 2:
            vals.append(0.0)
            continue
        nz = a[a > 0]
        vals.append(float(-(nz * np.log(nz)).sum() / math.log(len(a))))
    return float(np.mean(vals))


# ----------------------------------------------------------------- fine-tuning / evaluation


def evaluate(net: UNet, pairs, dtype="float64") -> dict[str, float]:
    """Mean PSNR/SSIM of the network output and of the noisy input over ``pairs``."""
    was_training = net.training
    net.eval()
    out_psnr, out_ssim, in_psnr = [], [], []
    with no_grad(), default_dtype(dtype):
        for p in pairs:
            pred = net(Tensor(p.noisy[None].astype(dtype))).data[0]
            pred = np.clip(pred, 0.0, 1.0)
            out_psnr.append(psnr(pred, p.clean))
            out_ssim.append(ssim(pred, p.clean))
            in_psnr.append(psnr(p.noisy, p.clean))
    net.train(was_training)
    return {"psnr": float(np.mean(out_psnr)), "ssim": float(np.mean(out_ssim)),
            "noisy_psnr": float(np.mean(in_psnr))}


@dataclass
class FinetuneResult:
    network: UNet
    before: dict[str, float]
    after: dict[str, float]
    trace: list[float]

    def metrics(self) -> dict:
        return {"before": self.before, "after": self.after, "loss_trace": self.trace}


def discrete_from_supernet(derived: UNetConfig, supernet: UNet, dtype="float32") -> UNet:
    with default_dtype(dtype):
        net = build_unet(derived, identity_init=False)
    net.load_state_dict(inherit_weights(supernet, derived))
    return net


def train_network(net: UNet, data: Dataset, config: FinetuneConfig) -> list[float]:
    """Minimize L_T alone; returns the per-epoch mean loss."""
    net.train()
    opt = Adam(net.parameters(), lr=config.lr)
    dtype = np.dtype(config.dtype)
    steps = _steps(config, len(data.train))
    trace = []
    with default_dtype(config.dtype):
        for epoch in range(config.epochs):
            total = 0.0
            for step, (noisy, clean) in enumerate(_epoch_batches(data, config.batch_size, config.seed,
                                                                 epoch, steps, dtype)):
                loss = training_loss(net(Tensor(noisy)), clean)
                if not np.isfinite(loss.data):
                    raise SearchDiverged(f"fine-tuning loss became {float(loss.data)} at epoch {epoch}, step {step}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.data)
            trace.append(total / steps)
            log.info("finetune epoch %d  L_T=%.5f", epoch, trace[-1])
    return trace


def finetune(derived: UNetConfig, supernet: UNet | None, data: Dataset, config: FinetuneConfig) -> FinetuneResult:
    """Discrete net initialized from the selected supernet candidates (or
    freshly if ``supernet`` is None), trained with L_T only."""
    if supernet is not None:
        net = discrete_from_supernet(derived, supernet, config.dtype)
    else:
        with default_dtype(config.dtype):
            net = build_unet(derived, seed=config.seed)
    before = evaluate(net, data.heldout)
    trace = train_network(net, data, config)
    after = evaluate(net, data.heldout)
    return FinetuneResult(net, before, after, trace)
