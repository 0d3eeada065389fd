"""Initial forest construction: points -> clusters -> 3-layer forest.

Leaves sit on the input points; K-means groups them under K internal
nodes, each linked one-to-one with a root. Scale coefficients start at
the mean distance to the 3 nearest neighbors, opacity at 0.1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logit

from .forest import POINTER_DTYPE, Forest

INIT_ALPHA = 0.1
FEATURE_INIT_RANGE = 0.1


@dataclass
class PointCloud:
    positions: np.ndarray               # (N, 3)
    colors: np.ndarray | None = None    # (N, 3) in [0,1], diagnostics only

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.positions.shape[0] < 1:
            raise ValueError("point cloud is empty")
        if not np.isfinite(self.positions).all():
            raise ValueError("point cloud contains non-finite positions")


def synth_points(n: int, bounds, seed) -> PointCloud:
    """n i.i.d. uniform points in an axis-aligned box (lo, hi)."""
    if n < 1:
        raise ValueError("need n >= 1 points")
    lo, hi = (np.asarray(b, dtype=np.float64).reshape(3) for b in bounds)
    if not (hi > lo).all():
        raise ValueError("degenerate bounds")
    rng = np.random.default_rng(seed)
    return PointCloud(positions=rng.uniform(lo, hi, size=(n, 3)))


def _plusplus_seed(positions: np.ndarray, k: int, rng: np.random.Generator):
    n = positions.shape[0]
    centers = np.empty((k, 3))
    centers[0] = positions[rng.integers(n)]
    d2 = np.sum((positions - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)  # all points coincide with a center
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = positions[idx]
        d2 = np.minimum(d2, np.sum((positions - centers[j]) ** 2, axis=1))
    return centers


def kmeans(positions: np.ndarray, k: int, max_iters: int = 25,
           seed=0) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeding then Lloyd to fixpoint; ties go to the lowest center."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = positions.shape[0]
    if k > n:
        raise ValueError(f"K={k} exceeds point count {n}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(seed)
    centers = _plusplus_seed(positions, k, rng)

    assignments = None
    for _ in range(max_iters):
        d2 = np.sum((positions[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
        if assignments is not None and np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for j in range(k):
            members = assignments == j
            if members.any():
                centers[j] = positions[members].mean(axis=0)
            else:
                # re-seed an empty cluster from the point farthest from its center
                far = int(np.argmax(d2[np.arange(n), assignments]))
                centers[j] = positions[far]
                assignments[far] = j
    return assignments.astype(np.int64), centers


def _initial_log_gamma(positions: np.ndarray) -> np.ndarray:
    """log of mean 3-NN distance; isolated clouds fall back to box scale."""
    n = positions.shape[0]
    if n >= 2:
        tree = cKDTree(positions)
        kq = min(3, n - 1)
        dist, _ = tree.query(positions, k=kq + 1)  # first column is self
        mean_nn = dist[:, 1:].mean(axis=1)
    else:
        mean_nn = np.zeros(1)
    fallback = np.linalg.norm(positions.max(axis=0) - positions.min(axis=0)) * 0.1
    if fallback <= 0.0:
        fallback = 0.1
    mean_nn = np.where(mean_nn > 0.0, mean_nn, fallback)
    return np.log(mean_nn)


def build_initial_forest(cloud: PointCloud, k: int, dims: tuple[int, int],
                         seed) -> Forest:
    """K singly-linked root-internal pairs with clustered leaves underneath."""
    d_r, d_i = dims
    positions = cloud.positions
    n = positions.shape[0]
    seq = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    rng_km, rng_feat = (np.random.default_rng(s) for s in seq.spawn(2))
    assignments, _ = kmeans(positions, k, seed=rng_km)

    return Forest(
        root_f=rng_feat.uniform(-FEATURE_INIT_RANGE, FEATURE_INIT_RANGE, (k, d_r)),
        internal_f=rng_feat.uniform(-FEATURE_INIT_RANGE, FEATURE_INIT_RANGE, (k, d_i)),
        internal_parent=np.arange(k, dtype=POINTER_DTYPE),
        leaf_mu=positions.copy(),
        leaf_log_gamma=_initial_log_gamma(positions),
        leaf_alpha_raw=np.full(n, float(logit(INIT_ALPHA))),
        leaf_parent=assignments.astype(POINTER_DTYPE),
    )
