"""End-to-end optimization loop.

One iteration: render a training view, L1+SSIM loss, full adjoint,
Adam step. Leaves accumulate the norm of their view-space positional
gradient; on every growth tick that cumulative signal classifies each
leaf into one of three clone depths (leaf only / leaf+internal / whole
path), with deeper cases shut off one by one as the schedule passes
t0 < t1 < t2. Undersized or transparent leaves are pruned on their own
schedule: every 100 iterations while growth runs, every 1000 after t2.

Iteration constants (t0/t1/t2, total, warmup) scale together by
``iters_scale``; the growth/prune intervals are fixed by contract.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field
from enum import IntEnum

from scipy.special import expit as sigmoid
from scipy.special import logit

from .bootstrap import build_initial_forest, synth_points
from .decoder import Decoders, decode_cov_batch, quaternions_to_rotations
from .errors import TrainAbort
from .forest import (Forest, LeafNode, clone_leaf, clone_leaf_and_internal,
                     clone_path, gather_features_all, remove_leaves_and_compact)
from .metrics import psnr
from .modelfile import save_model
from .renderer import render_backward, render_forward
from .ssim import ssim_backward, ssim_forward

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GAMMA_SHRINK = 1.6  # both twins' gamma_s divide by this on every clone


@dataclass
class TrainConfig:
    # growth thresholds on cumulative gradient, non-increasing
    t0_threshold: float = 1e-3
    t1_threshold: float = 2.5e-4
    t2_threshold: float = 2e-4
    # schedule, in unscaled iterations
    t0: int = 5_000
    t1: int = 10_000
    t2: int = 15_000
    total_iters: int = 30_000
    warmup: int = 500
    iters_scale: float = 1.0
    growth_interval: int = 100
    prune_interval: int = 100
    prune_interval_late: int = 1_000
    # prune thresholds on decoded opacity / scale coefficient
    prune_alpha: float = 1e-2
    prune_scale: float = 5e-4
    loss_lambda: float = 0.2
    # per-group learning rates; positions decay exponentially to lr_mu_final
    lr_mu: float = 1.6e-4
    lr_mu_final: float = 1.6e-6
    lr_alpha: float = 5e-2
    lr_log_gamma: float = 5e-3
    lr_features: float = 2.5e-3
    lr_mlp: float = 1e-3
    # model shape and bootstrap
    d_r: int = 24
    d_i: int = 16
    k: int = 64
    n_points: int = 5_000
    init_lo: tuple = (-0.5, -0.5, -0.5)
    init_hi: tuple = (0.5, 0.5, 0.5)
    hidden_dim: int = 64
    cg_mode: str = "mean"            # "mean" or "sum" over visible views
    opacity_reset_interval: int = 0  # 0 disables the periodic opacity clamp
    log_interval: int = 100

    def __post_init__(self):
        if not (self.t0_threshold >= self.t1_threshold >= self.t2_threshold):
            raise ValueError("growth thresholds must be non-increasing")
        if min(self.growth_interval, self.prune_interval,
               self.prune_interval_late) < 1:
            raise ValueError("intervals must be >= 1")
        if self.cg_mode not in ("mean", "sum"):
            raise ValueError(f"unknown cg_mode {self.cg_mode!r}")

    def scaled(self, n: int) -> int:
        # milestones shrink by the desk-scale ratio, but never to 0;
        # an explicit zero (``--iters 0``) stays zero
        return max(1, int(round(n * self.iters_scale))) if n > 0 else 0

    @property
    def stop_iters(self) -> tuple[int, int, int]:
        return self.scaled(self.t0), self.scaled(self.t1), self.scaled(self.t2)

    @property
    def total(self) -> int:
        return self.scaled(self.total_iters)

    @property
    def warmup_iters(self) -> int:
        return self.scaled(self.warmup)

    @property
    def dims(self) -> tuple[int, int]:
        return self.d_r, self.d_i


def loss(rendered: np.ndarray, target: np.ndarray,
         lam: float) -> tuple[float, np.ndarray]:
    """(1-lam) L1 + lam (1 - SSIM) and its exact image gradient."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch {rendered.shape} vs {target.shape}")
    diff = rendered - target
    l1 = float(np.abs(diff).mean())
    ssim_val, cache = ssim_forward(rendered, target)
    value = (1.0 - lam) * l1 + lam * (1.0 - ssim_val)
    d_image = (1.0 - lam) * np.sign(diff) / diff.size \
        + ssim_backward(cache, -lam)
    return value, d_image


class GrowthCase(IntEnum):
    CASE0 = 0   # clone the leaf
    CASE1 = 1   # clone leaf + internal
    CASE2 = 2   # clone the whole path


def classify_growth(cg: float, iteration: int,
                    cfg: TrainConfig) -> GrowthCase | None:
    """Threshold classification, then schedule demotion.

    CG = T0 lands in case 2 (its bound is inclusive); past each stop
    iteration the affected case demotes one level rather than vanishing,
    and past t2 nothing grows at all.
    """
    s0, s1, s2 = cfg.stop_iters
    if iteration >= s2 or cg <= cfg.t2_threshold:
        return None
    if cg >= cfg.t0_threshold:
        case = 2
    elif cg > cfg.t1_threshold:
        case = 1
    else:
        case = 0
    if iteration >= s0:
        case = min(case, 1)
    if iteration >= s1:
        case = min(case, 0)
    return GrowthCase(case)


@dataclass
class CgAccumulator:
    """Per-leaf positional-gradient tallies, index-aligned with the leaves."""

    sums: np.ndarray
    counts: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "CgAccumulator":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64))

    def __len__(self) -> int:
        return self.sums.shape[0]

    def add(self, norms: np.ndarray, seen: np.ndarray) -> None:
        self.sums[seen] += norms[seen]
        self.counts[seen] += 1

    def values(self, mode: str = "mean") -> np.ndarray:
        if mode == "sum":
            return self.sums.copy()
        return self.sums / np.maximum(self.counts, 1)

    def extend(self, n_new: int) -> None:
        self.sums = np.append(self.sums, np.zeros(n_new))
        self.counts = np.append(self.counts, np.zeros(n_new, dtype=np.int64))

    def reset(self) -> None:
        self.sums[:] = 0.0
        self.counts[:] = 0

    def remap(self, leaf_map: np.ndarray) -> None:
        keep = leaf_map >= 0
        self.sums = self.sums[keep]
        self.counts = self.counts[keep]


_ROW_KEYS = {"leaf_mu": "leaf", "leaf_log_gamma": "leaf",
             "leaf_alpha_raw": "leaf", "internal_f": "internal",
             "root_f": "root"}


def _group_of(key: str) -> str:
    if key in ("leaf_mu",):
        return "mu"
    if key == "leaf_log_gamma":
        return "log_gamma"
    if key == "leaf_alpha_raw":
        return "alpha"
    if key in ("internal_f", "root_f"):
        return "features"
    return "mlp"


def params_of(forest: Forest, decoders: Decoders) -> dict[str, np.ndarray]:
    """Live references to every trainable array, keyed like the gradients."""
    params = {
        "leaf_mu": forest.leaf_mu,
        "leaf_log_gamma": forest.leaf_log_gamma,
        "leaf_alpha_raw": forest.leaf_alpha_raw,
        "internal_f": forest.internal_f,
        "root_f": forest.root_f,
    }
    for prefix, mlp in (("cov", decoders.cov), ("rgb", decoders.rgb)):
        for i in range(len(mlp.weights)):
            params[f"{prefix}.w{i}"] = mlp.weights[i]
            params[f"{prefix}.b{i}"] = mlp.biases[i]
    return params


@dataclass
class OptState:
    """Adam moments, extended with zeros on growth and cut down on prune."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "OptState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lrs: dict[str, float]) -> None:
        self.step_count += 1
        bc1 = 1.0 - ADAM_BETA1**self.step_count
        bc2 = 1.0 - ADAM_BETA2**self.step_count
        for key, p in params.items():
            g = grads[key]
            m, v = self.m[key], self.v[key]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lrs[_group_of(key)] * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)

    def extend_rows(self, key: str, n_new: int) -> None:
        if n_new == 0:
            return
        pad = np.zeros((n_new,) + self.m[key].shape[1:])
        self.m[key] = np.concatenate([self.m[key], pad])
        self.v[key] = np.concatenate([self.v[key], pad.copy()])

    def remap_rows(self, key: str, index_map: np.ndarray) -> None:
        keep = index_map >= 0
        self.m[key] = self.m[key][keep]
        self.v[key] = self.v[key][keep]

    def zero_key(self, key: str) -> None:
        self.m[key][:] = 0.0
        self.v[key][:] = 0.0

    def aligned_with(self, params: dict[str, np.ndarray]) -> bool:
        return (set(params) == set(self.m)
                and all(params[k].shape == self.m[k].shape == self.v[k].shape
                        for k in params))


@dataclass
class GrowthReport:
    iteration: int
    case0: int
    case1: int
    case2: int

    @property
    def total(self) -> int:
        return self.case0 + self.case1 + self.case2


@dataclass
class PruneReport:
    iteration: int
    removed_leaves: int
    removed_internals: int
    removed_roots: int
    remap: object = field(repr=False, default=None)


def grow(forest: Forest, cg_acc: CgAccumulator, iteration: int,
         cfg: TrainConfig, decoders: Decoders, rng: np.random.Generator,
         opt: OptState | None = None) -> GrowthReport:
    """Clone every leaf whose cumulative gradient clears a threshold.

    Clone positions are drawn from the source's decoded Gaussian (its
    shape as of entry, before this call shrinks anything); source and
    clone both have gamma_s divided by 1.6, split-style. The CG
    accumulator is reset for all leaves afterwards.
    """
    cg = cg_acc.values(cfg.cg_mode)
    n_leaves0, n_internals0 = forest.n_leaves, forest.n_internals
    n_roots0 = forest.n_roots
    counts = [0, 0, 0]
    if n_leaves0:
        f = gather_features_all(forest)
        gamma = np.exp(forest.leaf_log_gamma)
        s, q, _ = decode_cov_batch(f, gamma, decoders.cov)
        rot = quaternions_to_rotations(q)
        shrink = np.log(GAMMA_SHRINK)
        for idx in range(n_leaves0):
            case = classify_growth(float(cg[idx]), iteration, cfg)
            if case is None:
                continue
            counts[case] += 1
            offset = rot[idx] @ (s[idx] * rng.standard_normal(3))
            attrs = LeafNode(mu=forest.leaf_mu[idx] + offset,
                             log_gamma_s=float(forest.leaf_log_gamma[idx]),
                             alpha_raw=float(forest.leaf_alpha_raw[idx]),
                             parent=0)
            if case == GrowthCase.CASE0:
                new_leaf = clone_leaf(forest, idx, attrs)
            elif case == GrowthCase.CASE1:
                new_leaf, _ = clone_leaf_and_internal(forest, idx, attrs)
            else:
                new_leaf, _, _ = clone_path(forest, idx, attrs)
            forest.leaf_log_gamma[idx] -= shrink
            forest.leaf_log_gamma[new_leaf] -= shrink

    cg_acc.extend(forest.n_leaves - n_leaves0)
    cg_acc.reset()
    if opt is not None:
        n_new = {"leaf": forest.n_leaves - n_leaves0,
                 "internal": forest.n_internals - n_internals0,
                 "root": forest.n_roots - n_roots0}
        for key, row in _ROW_KEYS.items():
            opt.extend_rows(key, n_new[row])
    return GrowthReport(iteration, *counts)


def prune(forest: Forest, opt: OptState | None, cfg: TrainConfig,
          cg_acc: CgAccumulator | None = None,
          iteration: int = 0) -> PruneReport:
    """Drop leaves below the opacity/scale floors, cascading upward."""
    n0 = (forest.n_leaves, forest.n_internals, forest.n_roots)
    doomed = np.flatnonzero(
        (sigmoid(forest.leaf_alpha_raw) < cfg.prune_alpha)
        | (np.exp(forest.leaf_log_gamma) < cfg.prune_scale))
    remap = remove_leaves_and_compact(forest, doomed)
    if opt is not None:
        for key, row in _ROW_KEYS.items():
            opt.remap_rows(key, getattr(remap, row))
    if cg_acc is not None:
        cg_acc.remap(remap.leaf)
    return PruneReport(iteration, n0[0] - forest.n_leaves,
                       n0[1] - forest.n_internals, n0[2] - forest.n_roots,
                       remap=remap)


@dataclass
class TrainLog:
    """Line-delimited training trace: metric rows plus grow/prune events."""

    entries: list = field(default_factory=list)

    def metric_rows(self):
        return [e for e in self.entries if e["event"] == "metrics"]

    def events(self, kind: str):
        return [e for e in self.entries if e["event"] == kind]

    def to_jsonl(self, path) -> None:
        import json
        with open(path, "w") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry) + "\n")


def _lr_mu_at(cfg: TrainConfig, iteration: int) -> float:
    total = max(cfg.total, 1)
    return cfg.lr_mu * (cfg.lr_mu_final / cfg.lr_mu) ** (iteration / total)


def _lrs_at(cfg: TrainConfig, iteration: int) -> dict[str, float]:
    return {"mu": _lr_mu_at(cfg, iteration), "alpha": cfg.lr_alpha,
            "log_gamma": cfg.lr_log_gamma, "features": cfg.lr_features,
            "mlp": cfg.lr_mlp}


def _prune_due(iteration: int, s2: int, cfg: TrainConfig) -> bool:
    # intervals keep their printed cadence at any desk scale; only the
    # milestone that switches them moves
    if iteration < s2:
        return iteration % cfg.prune_interval == 0
    return iteration % cfg.prune_interval_late == 0


def train(dataset, cfg: TrainConfig, seed,
          forest: Forest | None = None,
          decoders: Decoders | None = None
          ) -> tuple[Forest, Decoders, TrainLog]:
    """Optimize a forest against a posed-image dataset.

    When no initial state is passed in, the forest is bootstrapped from
    synthetic points inside ``cfg.init_lo/hi``. Aborts with a diagnostic
    snapshot on a non-finite loss.
    """
    if not dataset.train_idx:
        raise ValueError("dataset has no training views")
    seq = np.random.SeedSequence(seed)
    s_points, s_forest, s_mlp, s_views, s_grow = seq.spawn(5)
    if forest is None:
        cloud = synth_points(cfg.n_points, (cfg.init_lo, cfg.init_hi), s_points)
        forest = build_initial_forest(cloud, cfg.k, cfg.dims, s_forest)
    if decoders is None:
        decoders = Decoders.init_random(np.random.default_rng(s_mlp),
                                        cfg.d_r + cfg.d_i,
                                        hidden_dim=cfg.hidden_dim)

    opt = OptState.for_params(params_of(forest, decoders))
    cg_acc = CgAccumulator.zeros(forest.n_leaves)
    rng_views = np.random.default_rng(s_views)
    rng_grow = np.random.default_rng(s_grow)
    log = TrainLog()

    s0, s1, s2 = cfg.stop_iters
    total = cfg.total
    train_ids = list(dataset.train_idx)
    epoch_order: list[int] = []

    for iteration in range(1, total + 1):
        if not epoch_order:
            epoch_order = [train_ids[j]
                           for j in rng_views.permutation(len(train_ids))]
        view = epoch_order.pop()
        cam, target = dataset.cameras[view], dataset.images[view]

        out, tape = render_forward(forest, decoders, cam, dataset.background)
        loss_val, d_image = loss(out.image, target, cfg.loss_lambda)
        if not np.isfinite(loss_val):
            raise TrainAbort(
                f"non-finite loss at iteration {iteration}",
                snapshot={"iteration": iteration, "loss": float(loss_val),
                          "view": int(view), "n_leaves": forest.n_leaves,
                          "n_internals": forest.n_internals,
                          "n_roots": forest.n_roots})
        grads, norms, seen = render_backward(tape, d_image)
        cg_acc.add(norms, seen)
        opt.step(params_of(forest, decoders), grads, _lrs_at(cfg, iteration))

        if (iteration % cfg.growth_interval == 0
                and cfg.warmup_iters <= iteration < s2):
            report = grow(forest, cg_acc, iteration, cfg, decoders,
                          rng_grow, opt)
            log.entries.append({
                "event": "grow", "iteration": iteration,
                "case0": report.case0, "case1": report.case1,
                "case2": report.case2})
            assert opt.aligned_with(params_of(forest, decoders))
            assert len(cg_acc) == forest.n_leaves and cg_acc.sums.sum() == 0.0

        if _prune_due(iteration, s2, cfg):
            report = prune(forest, opt, cfg, cg_acc, iteration)
            log.entries.append({
                "event": "prune", "iteration": iteration,
                "removed_leaves": report.removed_leaves,
                "removed_internals": report.removed_internals,
                "removed_roots": report.removed_roots})
            assert opt.aligned_with(params_of(forest, decoders))
            assert len(cg_acc) == forest.n_leaves

        if (cfg.opacity_reset_interval
                and iteration % cfg.opacity_reset_interval == 0):
            ceiling = float(logit(0.01))
            np.minimum(forest.leaf_alpha_raw, ceiling,
                       out=forest.leaf_alpha_raw)
            opt.zero_key("leaf_alpha_raw")

        if iteration % cfg.log_interval == 0 or iteration == total:
            log.entries.append({
                "event": "metrics", "iteration": iteration,
                "loss": float(loss_val),
                "psnr": float(psnr(out.image, target)),
                "n_roots": forest.n_roots,
                "n_internals": forest.n_internals,
                "n_leaves": forest.n_leaves,
                "model_bytes": len(save_model(forest, decoders)),
                "lr_mu": _lr_mu_at(cfg, iteration)})

    return forest, decoders, log
