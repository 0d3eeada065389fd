"""Materialize explicit Gaussians from leaf paths.

Each leaf stores only position, a scale coefficient and an opacity
logit; covariance shape and view-dependent color are decoded from the
latent features shared along its path by two small networks:

* the covariance net maps path features to 3 raw scales and a raw
  quaternion; per-axis scale is ``gamma_s * sigmoid(raw)`` so it stays
  inside (0, gamma_s), and the quaternion is normalized;
* the color net maps path features plus an encoded view direction to
  RGB through a sigmoid.

Every stage has a matching adjoint so the renderer can push pixel
gradients all the way back to leaf attributes, shared features and
network weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .direnc import ENCODING_DIM, encode_directions, encode_jacobian
from .forest import Forest, gather_features_all
from .mlp import Mlp, MlpTape

logger = logging.getLogger(__name__)

_QUAT_EPS = 1e-12
_warned_nonunit_dir = False


@dataclass
class Decoders:
    """The two decoding networks; input width is tied to (D_I + D_R)."""

    cov: Mlp
    rgb: Mlp

    @classmethod
    def init_random(cls, rng: np.random.Generator, feature_dim: int,
                    hidden_dim: int = 64) -> "Decoders":
        return cls(
            cov=Mlp.init_random(rng, feature_dim, 7, hidden_dim=hidden_dim),
            rgb=Mlp.init_random(rng, feature_dim + ENCODING_DIM, 3,
                                hidden_dim=hidden_dim),
        )


@dataclass
class DecodedGaussian:
    mu: np.ndarray      # (3,)
    s: np.ndarray       # (3,) per-axis scale, each in (0, gamma_s)
    q: np.ndarray       # (4,) unit quaternion (w, x, y, z)
    sigma: np.ndarray   # (3, 3) symmetric PSD covariance
    alpha: float        # opacity in (0, 1)
    c: np.ndarray       # (3,) RGB in [0, 1]


class DecodedBatch:
    """Struct-of-arrays view over all decoded Gaussians; indexable per leaf."""

    def __init__(self, mu, s, q, sigma, alpha, c):
        self.mu = mu
        self.s = s
        self.q = q
        self.sigma = sigma
        self.alpha = alpha
        self.c = c

    def __len__(self) -> int:
        return self.mu.shape[0]

    def __getitem__(self, i: int) -> DecodedGaussian:
        return DecodedGaussian(self.mu[i], self.s[i], self.q[i], self.sigma[i],
                               float(self.alpha[i]), self.c[i])


def normalize_quaternions(q_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit quaternions with an identity fallback for (near-)zero norms."""
    norms = np.linalg.norm(q_raw, axis=-1)
    fallback = norms < _QUAT_EPS
    if fallback.any():
        logger.warning("%d zero-norm quaternion(s), falling back to identity",
                       int(fallback.sum()))
    safe = np.where(fallback, 1.0, norms)
    q = q_raw / safe[..., None]
    q[fallback] = (1.0, 0.0, 0.0, 0.0)
    return q, norms, fallback


def quaternions_to_rotations(q: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions (w, x, y, z) -> (N, 3, 3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((q.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def _rotation_quaternion_jacobian(q: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions -> (N, 4, 3, 3) dR/dq (per component w,x,y,z)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zeros = np.zeros_like(w)
    jac = np.empty((q.shape[0], 4, 3, 3))
    jac[:, 0] = 2 * np.stack([
        np.stack([zeros, -z, y], axis=-1),
        np.stack([z, zeros, -x], axis=-1),
        np.stack([-y, x, zeros], axis=-1),
    ], axis=-2)
    jac[:, 1] = 2 * np.stack([
        np.stack([zeros, y, z], axis=-1),
        np.stack([y, -2 * x, -w], axis=-1),
        np.stack([z, w, -2 * x], axis=-1),
    ], axis=-2)
    jac[:, 2] = 2 * np.stack([
        np.stack([-2 * y, x, w], axis=-1),
        np.stack([x, zeros, z], axis=-1),
        np.stack([-w, z, -2 * y], axis=-1),
    ], axis=-2)
    jac[:, 3] = 2 * np.stack([
        np.stack([-2 * z, -w, x], axis=-1),
        np.stack([w, -2 * z, y], axis=-1),
        np.stack([x, y, zeros], axis=-1),
    ], axis=-2)
    return jac


def build_covariance_batch(s: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sigma = R diag(s)^2 R^T, batched. Returns (sigma, rotations)."""
    rot = quaternions_to_rotations(q)
    m = rot * s[:, None, :]
    sigma = np.einsum("nik,njk->nij", m, m)
    return sigma, rot


def build_covariance_backward(
    d_sigma: np.ndarray, s: np.ndarray, q: np.ndarray, rot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of ``build_covariance_batch`` w.r.t. s and the unit quaternion."""
    m = rot * s[:, None, :]
    d_m = np.einsum("nij,njk->nik", d_sigma + np.swapaxes(d_sigma, 1, 2), m)
    d_s = np.einsum("nik,nik->nk", d_m, rot)
    d_rot = d_m * s[:, None, :]
    jac = _rotation_quaternion_jacobian(q)
    d_q = np.einsum("nij,ncij->nc", d_rot, jac)
    return d_s, d_q


def quaternion_normalize_backward(
    d_q_unit: np.ndarray, q_unit: np.ndarray, norms: np.ndarray, fallback: np.ndarray
) -> np.ndarray:
    proj = np.einsum("nc,nc->n", d_q_unit, q_unit)
    safe = np.where(fallback, 1.0, norms)
    d_raw = (d_q_unit - proj[:, None] * q_unit) / safe[:, None]
    d_raw[fallback] = 0.0
    return d_raw


def build_covariance(s: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Single-Gaussian covariance from positive scales and a unit quaternion."""
    sigma, _ = build_covariance_batch(
        np.asarray(s, dtype=np.float64)[None, :],
        np.asarray(q, dtype=np.float64)[None, :],
    )
    return sigma[0]


@dataclass
class CovDecodeTape:
    mlp_tape: MlpTape
    sig_s: np.ndarray      # (N, 3) sigmoid(raw scales)
    gamma_s: np.ndarray    # (N,)
    q_unit: np.ndarray
    norms: np.ndarray
    fallback: np.ndarray


def decode_cov_batch(
    f: np.ndarray, gamma_s: np.ndarray, mlp_cov: Mlp
) -> tuple[np.ndarray, np.ndarray, CovDecodeTape]:
    out, tape = mlp_cov.forward(f)
    sig_s = sigmoid(out[:, :3])
    s = gamma_s[:, None] * sig_s
    q, norms, fallback = normalize_quaternions(out[:, 3:])
    return s, q, CovDecodeTape(tape, sig_s, gamma_s, q, norms, fallback)


def decode_cov_backward(
    tape: CovDecodeTape, d_s: np.ndarray, d_q: np.ndarray, mlp_cov: Mlp
) -> tuple[np.ndarray, np.ndarray, list]:
    """Returns (d_features, d_gamma_s, mlp gradients)."""
    d_gamma = np.einsum("nk,nk->n", d_s, tape.sig_s)
    d_raw_s = d_s * tape.gamma_s[:, None] * tape.sig_s * (1.0 - tape.sig_s)
    d_raw_q = quaternion_normalize_backward(d_q, tape.q_unit, tape.norms, tape.fallback)
    d_out = np.concatenate([d_raw_s, d_raw_q], axis=1)
    d_f, grads = mlp_cov.backward(tape.mlp_tape, d_out)
    return d_f, d_gamma, grads


def decode_cov(f: np.ndarray, gamma_s: float, mlp_cov: Mlp) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis scales and unit quaternion for one feature vector."""
    s, q, _ = decode_cov_batch(
        np.asarray(f, dtype=np.float64)[None, :], np.array([float(gamma_s)]), mlp_cov
    )
    return s[0], q[0]


@dataclass
class RgbDecodeTape:
    mlp_tape: MlpTape
    c: np.ndarray          # (N, 3)
    enc_jac: np.ndarray    # (N, 16, 3)
    feature_dim: int


def decode_rgb_batch(
    f: np.ndarray, dirs: np.ndarray, mlp_rgb: Mlp
) -> tuple[np.ndarray, RgbDecodeTape]:
    enc = encode_directions(dirs)
    raw, tape = mlp_rgb.forward(np.concatenate([f, enc], axis=1))
    c = sigmoid(raw)
    return c, RgbDecodeTape(tape, c, encode_jacobian(dirs), f.shape[1])


def decode_rgb_backward(
    tape: RgbDecodeTape, d_c: np.ndarray, mlp_rgb: Mlp
) -> tuple[np.ndarray, np.ndarray, list]:
    """Returns (d_features, d_direction, mlp gradients)."""
    d_raw = d_c * tape.c * (1.0 - tape.c)
    d_x, grads = mlp_rgb.backward(tape.mlp_tape, d_raw)
    d_f = d_x[:, : tape.feature_dim]
    d_enc = d_x[:, tape.feature_dim:]
    d_dir = np.einsum("nk,nkc->nc", d_enc, tape.enc_jac)
    return d_f, d_dir, grads


def decode_rgb(f: np.ndarray, direction: np.ndarray, mlp_rgb: Mlp) -> np.ndarray:
    """View-dependent RGB for one feature vector; normalizes a non-unit direction."""
    global _warned_nonunit_dir
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    n = np.linalg.norm(d)
    if abs(n - 1.0) > 1e-6:
        if not _warned_nonunit_dir:
            logger.warning("non-unit view direction (norm %.6g), normalizing", n)
            _warned_nonunit_dir = True
        d = d / n
    c, _ = decode_rgb_batch(np.asarray(f, dtype=np.float64)[None, :], d[None, :], mlp_rgb)
    return c[0]


def normalize_directions(vec: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-normalize with a fixed fallback for zero vectors."""
    norms = np.linalg.norm(vec, axis=1)
    degenerate = norms < 1e-12
    safe = np.where(degenerate, 1.0, norms)
    dirs = vec / safe[:, None]
    dirs[degenerate] = (0.0, 0.0, 1.0)
    return dirs, norms, degenerate


def normalize_directions_backward(d_dirs, dirs, norms, degenerate):
    proj = np.einsum("nc,nc->n", d_dirs, dirs)
    safe = np.where(degenerate, 1.0, norms)
    d_vec = (d_dirs - proj[:, None] * dirs) / safe[:, None]
    d_vec[degenerate] = 0.0
    return d_vec


@dataclass
class DecodeTape:
    f: np.ndarray
    gamma_s: np.ndarray
    cov_tape: CovDecodeTape
    s: np.ndarray
    q: np.ndarray
    rot: np.ndarray
    dirs: np.ndarray
    dir_norms: np.ndarray
    dir_degenerate: np.ndarray
    rgb_tape: RgbDecodeTape
    alpha: np.ndarray
    leaf_parent: np.ndarray
    internal_parent: np.ndarray
    n_internals: int
    n_roots: int
    d_i: int


def decode_batch(
    forest: Forest, decoders: Decoders, camera_center: np.ndarray
) -> tuple[DecodedBatch, DecodeTape]:
    """Decode every leaf into a full Gaussian; pure given its inputs."""
    d_r, d_i = forest.dims
    f = gather_features_all(forest)
    gamma_s = np.exp(forest.leaf_log_gamma)
    if forest.n_leaves == 0:
        empty3 = np.zeros((0, 3))
        batch = DecodedBatch(empty3, empty3, np.zeros((0, 4)), np.zeros((0, 3, 3)),
                             np.zeros(0), empty3)
        return batch, None

    s, q, cov_tape = decode_cov_batch(f, gamma_s, decoders.cov)
    sigma, rot = build_covariance_batch(s, q)
    vec = forest.leaf_mu - np.asarray(camera_center, dtype=np.float64)[None, :]
    dirs, dir_norms, dir_degenerate = normalize_directions(vec)
    c, rgb_tape = decode_rgb_batch(f, dirs, decoders.rgb)
    alpha = sigmoid(forest.leaf_alpha_raw)

    batch = DecodedBatch(forest.leaf_mu.copy(), s, q, sigma, alpha, c)
    tape = DecodeTape(
        f=f, gamma_s=gamma_s, cov_tape=cov_tape, s=s, q=q, rot=rot,
        dirs=dirs, dir_norms=dir_norms, dir_degenerate=dir_degenerate,
        rgb_tape=rgb_tape, alpha=alpha,
        leaf_parent=forest.leaf_parent.astype(np.int64),
        internal_parent=forest.internal_parent.astype(np.int64),
        n_internals=forest.n_internals, n_roots=forest.n_roots, d_i=d_i,
    )
    return batch, tape


def decode_backward(
    tape: DecodeTape, decoders: Decoders,
    d_sigma: np.ndarray, d_c: np.ndarray, d_alpha: np.ndarray,
) -> dict[str, np.ndarray]:
    """Push Gaussian-level gradients back to every trainable tensor.

    ``d_sigma`` is a full-matrix (3x3) gradient per leaf; returns a dict
    with leaf attribute grads, scatter-added feature grads and per-layer
    network grads (keys ``cov.w0``/``cov.b0``/... and ``rgb.*``).
    """
    d_s, d_q = build_covariance_backward(d_sigma, tape.s, tape.q, tape.rot)
    d_f_cov, d_gamma, cov_grads = decode_cov_backward(tape.cov_tape, d_s, d_q, decoders.cov)
    d_f_rgb, d_dir, rgb_grads = decode_rgb_backward(tape.rgb_tape, d_c, decoders.rgb)
    d_vec = normalize_directions_backward(d_dir, tape.dirs, tape.dir_norms,
                                          tape.dir_degenerate)

    d_f = d_f_cov + d_f_rgb
    grads = {
        "leaf_mu": d_vec,
        "leaf_log_gamma": d_gamma * tape.gamma_s,
        "leaf_alpha_raw": d_alpha * tape.alpha * (1.0 - tape.alpha),
        "internal_f": np.zeros((tape.n_internals, tape.d_i)),
        "root_f": np.zeros((tape.n_roots, d_f.shape[1] - tape.d_i)),
    }
    np.add.at(grads["internal_f"], tape.leaf_parent, d_f[:, : tape.d_i])
    np.add.at(grads["root_f"], tape.internal_parent[tape.leaf_parent],
              d_f[:, tape.d_i:])
    for prefix, layer_grads in (("cov", cov_grads), ("rgb", rgb_grads)):
        for i, (dw, db) in enumerate(layer_grads):
            grads[f"{prefix}.w{i}"] = dw
            grads[f"{prefix}.b{i}"] = db
    return grads


def decode_all(
    forest: Forest, decoders: Decoders, camera_center: np.ndarray
) -> DecodedBatch:
    """One fully explicit Gaussian per leaf, in leaf order."""
    batch, _ = decode_batch(forest, decoders, camera_center)
    return batch
