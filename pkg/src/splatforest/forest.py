"""Three-layer node arena for hybrid Gaussian splats.

A scene is a forest of depth-3 trees stored as three struct-of-array
layers. Leaves carry the explicit per-Gaussian attributes (position,
scale coefficient, opacity logit) plus a pointer to their parent
internal node; internal and root nodes carry shared latent feature
vectors. Tracing parent pointers upward from a leaf yields the unique
path that fully determines one Gaussian.

Arrays are append-only between compactions: clone operations append,
and only :func:`remove_leaves_and_compact` invalidates indices (it
returns the remap callers need to relocate any per-node side state).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import StructureError

POINTER_DTYPE = np.uint32


class Layer(IntEnum):
    ROOT = 0
    INTERNAL = 1
    LEAF = 2


@dataclass(frozen=True)
class NodeId:
    layer: Layer
    index: int


@dataclass
class LeafNode:
    """Explicit attributes of one Gaussian, plus its parent pointer."""

    mu: np.ndarray          # (3,) world position
    log_gamma_s: float      # log of the scaling coefficient, kept in log space for positivity
    alpha_raw: float        # pre-sigmoid opacity logit
    parent: int = 0         # index into the internal layer


@dataclass
class InternalNode:
    f: np.ndarray           # (D_I,) latent features
    parent: int = 0         # index into the root layer


@dataclass
class RootNode:
    f: np.ndarray           # (D_R,) latent features


@dataclass
class Forest:
    """Struct-of-arrays storage for the three layers.

    Invariant maintained by every public operation: parent pointers are
    always in range (leaf -> internal, internal -> root). Childless
    internal/root nodes may exist transiently between a clone batch and
    the next compaction; compaction removes them.
    """

    root_f: np.ndarray          # (N_R, D_R) float64
    internal_f: np.ndarray      # (N_I, D_I) float64
    internal_parent: np.ndarray  # (N_I,) uint32 -> root index
    leaf_mu: np.ndarray         # (N_L, 3) float64
    leaf_log_gamma: np.ndarray  # (N_L,) float64
    leaf_alpha_raw: np.ndarray  # (N_L,) float64
    leaf_parent: np.ndarray     # (N_L,) uint32 -> internal index

    @property
    def dims(self) -> tuple[int, int]:
        """(D_R, D_I) feature dimensions."""
        return self.root_f.shape[1], self.internal_f.shape[1]

    @property
    def n_roots(self) -> int:
        return self.root_f.shape[0]

    @property
    def n_internals(self) -> int:
        return self.internal_f.shape[0]

    @property
    def n_leaves(self) -> int:
        return self.leaf_mu.shape[0]

    def copy(self) -> "Forest":
        return Forest(
            self.root_f.copy(), self.internal_f.copy(), self.internal_parent.copy(),
            self.leaf_mu.copy(), self.leaf_log_gamma.copy(),
            self.leaf_alpha_raw.copy(), self.leaf_parent.copy(),
        )


def empty_forest(d_r: int, d_i: int) -> Forest:
    return Forest(
        root_f=np.zeros((0, d_r)),
        internal_f=np.zeros((0, d_i)),
        internal_parent=np.zeros(0, dtype=POINTER_DTYPE),
        leaf_mu=np.zeros((0, 3)),
        leaf_log_gamma=np.zeros(0),
        leaf_alpha_raw=np.zeros(0),
        leaf_parent=np.zeros(0, dtype=POINTER_DTYPE),
    )


def _check_leaf(forest: Forest, leaf: NodeId | int) -> int:
    if isinstance(leaf, NodeId):
        if leaf.layer != Layer.LEAF:
            raise StructureError(f"expected a leaf id, got layer {leaf.layer!r}")
        idx = leaf.index
    else:
        idx = int(leaf)
    if not 0 <= idx < forest.n_leaves:
        raise StructureError(f"leaf index {idx} out of range [0, {forest.n_leaves})")
    return idx


def path_of(forest: Forest, leaf: NodeId | int) -> tuple[LeafNode, InternalNode, RootNode]:
    """Trace parent pointers upward from a leaf.

    Returns value copies of the three nodes on the unique leaf-to-root
    path; pure, never mutates.
    """
    idx = _check_leaf(forest, leaf)
    p_i = int(forest.leaf_parent[idx])
    p_r = int(forest.internal_parent[p_i])
    return (
        LeafNode(
            mu=forest.leaf_mu[idx].copy(),
            log_gamma_s=float(forest.leaf_log_gamma[idx]),
            alpha_raw=float(forest.leaf_alpha_raw[idx]),
            parent=p_i,
        ),
        InternalNode(f=forest.internal_f[p_i].copy(), parent=p_r),
        RootNode(f=forest.root_f[p_r].copy()),
    )


def gather_features(forest: Forest, leaf: NodeId | int) -> np.ndarray:
    """Concatenate the latent features along a leaf's path: internal first, then root."""
    idx = _check_leaf(forest, leaf)
    p_i = int(forest.leaf_parent[idx])
    p_r = int(forest.internal_parent[p_i])
    return np.concatenate([forest.internal_f[p_i], forest.root_f[p_r]])


def gather_features_all(forest: Forest) -> np.ndarray:
    """(N_L, D_I + D_R) feature matrix, row i for leaf i."""
    if forest.n_leaves == 0:
        d_r, d_i = forest.dims
        return np.zeros((0, d_i + d_r))
    p_i = forest.leaf_parent.astype(np.int64)
    p_r = forest.internal_parent.astype(np.int64)[p_i]
    return np.concatenate([forest.internal_f[p_i], forest.root_f[p_r]], axis=1)


def _append_leaf(forest: Forest, attrs: LeafNode, parent: int) -> int:
    mu = np.asarray(attrs.mu, dtype=np.float64).reshape(3)
    forest.leaf_mu = np.concatenate([forest.leaf_mu, mu[None, :]])
    forest.leaf_log_gamma = np.append(forest.leaf_log_gamma, float(attrs.log_gamma_s))
    forest.leaf_alpha_raw = np.append(forest.leaf_alpha_raw, float(attrs.alpha_raw))
    forest.leaf_parent = np.append(
        forest.leaf_parent, POINTER_DTYPE(parent)
    ).astype(POINTER_DTYPE)
    return forest.n_leaves - 1


def clone_leaf(forest: Forest, leaf: NodeId | int, new_attrs: LeafNode) -> int:
    """Clone a single leaf under its existing parent (growth case 0).

    ``new_attrs.parent`` is ignored: the clone links to the source
    leaf's parent internal node.
    """
    idx = _check_leaf(forest, leaf)
    return _append_leaf(forest, new_attrs, int(forest.leaf_parent[idx]))


def clone_leaf_and_internal(
    forest: Forest, leaf: NodeId | int, new_attrs: LeafNode
) -> tuple[int, int]:
    """Clone leaf plus its parent internal node (growth case 1).

    The new internal node copies the source internal's features and
    root pointer. Both the source leaf and the clone are repointed to
    it; other children of the source internal are untouched.
    """
    idx = _check_leaf(forest, leaf)
    src_internal = int(forest.leaf_parent[idx])
    forest.internal_f = np.concatenate(
        [forest.internal_f, forest.internal_f[src_internal][None, :].copy()]
    )
    forest.internal_parent = np.append(
        forest.internal_parent, forest.internal_parent[src_internal]
    ).astype(POINTER_DTYPE)
    new_internal = forest.n_internals - 1
    forest.leaf_parent[idx] = new_internal
    new_leaf = _append_leaf(forest, new_attrs, new_internal)
    return new_leaf, new_internal


def clone_path(
    forest: Forest, leaf: NodeId | int, new_attrs: LeafNode
) -> tuple[int, int, int]:
    """Clone the whole leaf-to-root path into a fresh linked list (growth case 2).

    The original leaf and its ancestors are untouched.
    """
    idx = _check_leaf(forest, leaf)
    src_internal = int(forest.leaf_parent[idx])
    src_root = int(forest.internal_parent[src_internal])
    forest.root_f = np.concatenate([forest.root_f, forest.root_f[src_root][None, :].copy()])
    new_root = forest.n_roots - 1
    forest.internal_f = np.concatenate(
        [forest.internal_f, forest.internal_f[src_internal][None, :].copy()]
    )
    forest.internal_parent = np.append(
        forest.internal_parent, POINTER_DTYPE(new_root)
    ).astype(POINTER_DTYPE)
    new_internal = forest.n_internals - 1
    new_leaf = _append_leaf(forest, new_attrs, new_internal)
    return new_leaf, new_internal, new_root


@dataclass
class IndexRemap:
    """Old-index -> new-index maps for one compaction; -1 marks removal."""

    leaf: np.ndarray      # (old N_L,) int64
    internal: np.ndarray  # (old N_I,) int64
    root: np.ndarray      # (old N_R,) int64

    @property
    def identity(self) -> bool:
        return (
            bool(np.all(self.leaf == np.arange(len(self.leaf))))
            and bool(np.all(self.internal == np.arange(len(self.internal))))
            and bool(np.all(self.root == np.arange(len(self.root))))
        )


def _compact_map(keep: np.ndarray) -> np.ndarray:
    remap = np.full(len(keep), -1, dtype=np.int64)
    remap[keep] = np.arange(int(np.count_nonzero(keep)))
    return remap


def remove_leaves_and_compact(forest: Forest, doomed) -> IndexRemap:
    """Remove the listed leaves and cascade-remove childless ancestors.

    All three layers are compacted in place and every surviving parent
    pointer is rewritten. The returned remap lets callers relocate any
    state aligned to the old indices (optimizer moments, accumulators).
    """
    doomed_idx = np.asarray(sorted(set(int(i) for i in doomed)), dtype=np.int64)
    if doomed_idx.size and (doomed_idx[0] < 0 or doomed_idx[-1] >= forest.n_leaves):
        raise StructureError("doomed set contains out-of-range leaf indices")

    keep_leaf = np.ones(forest.n_leaves, dtype=bool)
    keep_leaf[doomed_idx] = False

    # Internals survive only with at least one remaining leaf child,
    # roots only with at least one remaining internal child.
    keep_internal = np.zeros(forest.n_internals, dtype=bool)
    if keep_leaf.any():
        keep_internal[np.unique(forest.leaf_parent[keep_leaf].astype(np.int64))] = True
    keep_root = np.zeros(forest.n_roots, dtype=bool)
    if keep_internal.any():
        keep_root[np.unique(forest.internal_parent[keep_internal].astype(np.int64))] = True

    remap = IndexRemap(
        leaf=_compact_map(keep_leaf),
        internal=_compact_map(keep_internal),
        root=_compact_map(keep_root),
    )

    forest.leaf_mu = forest.leaf_mu[keep_leaf]
    forest.leaf_log_gamma = forest.leaf_log_gamma[keep_leaf]
    forest.leaf_alpha_raw = forest.leaf_alpha_raw[keep_leaf]
    forest.leaf_parent = remap.internal[
        forest.leaf_parent[keep_leaf].astype(np.int64)
    ].astype(POINTER_DTYPE)
    forest.internal_f = forest.internal_f[keep_internal]
    forest.internal_parent = remap.root[
        forest.internal_parent[keep_internal].astype(np.int64)
    ].astype(POINTER_DTYPE)
    forest.root_f = forest.root_f[keep_root]
    return remap


@dataclass
class ValidationReport:
    """Findings from a structural scan.

    ``violations`` are hard faults (dangling pointers, non-finite
    values) that no public mutation should ever produce. ``orphans``
    are childless internal/root nodes; clone batches may create these
    transiently and the next compaction removes them.
    """

    violations: list[str] = field(default_factory=list)
    orphans: list[str] = field(default_factory=list)

    @property
    def sound(self) -> bool:
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations and not self.orphans


def validate(forest: Forest) -> ValidationReport:
    report = ValidationReport()
    v = report.violations

    if forest.leaf_parent.size:
        bad = forest.leaf_parent.astype(np.int64) >= forest.n_internals
        for i in np.flatnonzero(bad):
            v.append(f"leaf {i}: parent {forest.leaf_parent[i]} out of range")
    if forest.internal_parent.size:
        bad = forest.internal_parent.astype(np.int64) >= forest.n_roots
        for i in np.flatnonzero(bad):
            v.append(f"internal {i}: parent {forest.internal_parent[i]} out of range")

    for name, arr in (
        ("leaf_mu", forest.leaf_mu),
        ("leaf_log_gamma", forest.leaf_log_gamma),
        ("leaf_alpha_raw", forest.leaf_alpha_raw),
        ("internal_f", forest.internal_f),
        ("root_f", forest.root_f),
    ):
        if arr.size and not np.all(np.isfinite(arr)):
            rows = np.unique(np.argwhere(~np.isfinite(arr))[:, 0])
            for i in rows:
                v.append(f"{name}[{i}]: non-finite value")

    has_leaf = np.zeros(forest.n_internals, dtype=bool)
    ok_ptr = forest.leaf_parent.astype(np.int64) < forest.n_internals
    has_leaf[np.unique(forest.leaf_parent[ok_ptr].astype(np.int64))] = True
    for i in np.flatnonzero(~has_leaf):
        report.orphans.append(f"internal {i}: no leaf children")
    has_internal = np.zeros(forest.n_roots, dtype=bool)
    ok_ptr = forest.internal_parent.astype(np.int64) < forest.n_roots
    has_internal[np.unique(forest.internal_parent[ok_ptr].astype(np.int64))] = True
    for i in np.flatnonzero(~has_internal):
        report.orphans.append(f"root {i}: no internal children")
    return report


@dataclass
class ForestStats:
    n_leaf: int
    n_internal: int
    n_root: int
    internal_ratio: float  # N_I / N_leaf, 0 when leafless
    root_ratio: float      # N_R / N_leaf, 0 when leafless


def stats(forest: Forest) -> ForestStats:
    n = forest.n_leaves
    return ForestStats(
        n_leaf=n,
        n_internal=forest.n_internals,
        n_root=forest.n_roots,
        internal_ratio=forest.n_internals / n if n else 0.0,
        root_ratio=forest.n_roots / n if n else 0.0,
    )
