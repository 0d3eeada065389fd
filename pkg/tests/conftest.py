"""Shared builders and numeric helpers for the test suite."""

from __future__ import annotations

import re

import numpy as np

from splatforest.camera import look_at
from splatforest.decoder import Decoders
from splatforest.forest import POINTER_DTYPE, Forest


def random_forest(rng: np.random.Generator, n_roots: int, n_internals: int,
                  n_leaves: int, d_r: int = 4, d_i: int = 3) -> Forest:
    """Random orphan-free forest: every root and internal has a child."""
    assert 1 <= n_roots <= n_internals <= n_leaves
    internal_parent = np.concatenate([
        np.arange(n_roots),
        rng.integers(0, n_roots, n_internals - n_roots),
    ]).astype(POINTER_DTYPE)
    leaf_parent = np.concatenate([
        np.arange(n_internals),
        rng.integers(0, n_internals, n_leaves - n_internals),
    ]).astype(POINTER_DTYPE)
    perm = rng.permutation(n_leaves)
    return Forest(
        root_f=rng.normal(size=(n_roots, d_r)),
        internal_f=rng.normal(size=(n_internals, d_i)),
        internal_parent=internal_parent,
        leaf_mu=rng.normal(scale=0.3, size=(n_leaves, 3)),
        leaf_log_gamma=rng.normal(loc=-1.2, scale=0.3, size=n_leaves),
        leaf_alpha_raw=rng.normal(loc=0.4, scale=0.5, size=n_leaves),
        leaf_parent=leaf_parent[perm],
    )


def random_decoders(rng: np.random.Generator, d_r: int = 4, d_i: int = 3,
                    hidden: int = 8) -> Decoders:
    return Decoders.init_random(rng, d_r + d_i, hidden_dim=hidden)


def orbit_camera(angle: float, *, radius: float = 2.0, elevation: float = 0.5,
                 resolution: int = 16, focal: float = 24.0):
    eye = (radius * np.cos(angle), radius * np.sin(angle), elevation)
    c = (resolution - 1) / 2.0
    return look_at(eye, (0.0, 0.0, 0.0), fx=focal, fy=focal, cx=c, cy=c,
                   width=resolution, height=resolution)


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``arr`` (in place)."""
    arr = np.asarray(arr)
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        step = h * max(1.0, abs(orig))
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def max_rel_err(analytic, numeric, floor: float = 1e-6) -> float:
    """Worst elementwise relative error, with a floor against 0/0."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0


# ---------------------------------------------------------------------------
# End-of-run checklist: one line per numbered end-to-end requirement.

_CHECKLIST = {
    1: "storage-accounting arithmetic (per-leaf equivalents and ratios)",
    2: "gradient suite vs central finite differences",
    3: "desk-scale fit: psnr gain, size budget, growth + pruning",
    4: "structure fuzz: clean validation, compaction oracle, moment shapes",
    5: "schedule conformance in the training log",
    6: "serialization round trip and quantized-render fidelity",
    7: "renderer energy conservation and permutation invariance",
}

_outcomes: dict[int, bool] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid or report.when == "teardown":
        return
    m = re.search(r"::test_c(\d+)", report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    ok = report.passed if report.when == "call" else not report.failed
    _outcomes[num] = _outcomes.get(num, True) and ok


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _outcomes:
        return
    terminalreporter.section("acceptance checklist")
    for num in sorted(_CHECKLIST):
        if num not in _outcomes:
            continue
        verdict = "PASS" if _outcomes[num] else "FAIL"
        terminalreporter.write_line(f"{verdict}  {num}. {_CHECKLIST[num]}")
