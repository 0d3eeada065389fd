"""Differentiable rasterizer: perspective projection, global depth sort,
front-to-back alpha blending, and the adjoint pass.

The backward pass supplies both parameter gradients and, per splat, the
L2 norm of dL/d(mean2d) in pixel units — the view-space positional
signal that drives forest growth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import Camera
from .decoder import DecodedGaussian, Decoders, decode_backward, decode_batch
from .forest import Forest

NEAR_PLANE = 0.01
CULL_MARGIN = 0.3        # keep means within [-0.3, 1.3] x image extent
COV_DILATION = 0.3       # low-pass term added to cov2d diagonals

ALPHA_CAP = _kernels.raster_py.ALPHA_CAP
MIN_CONTRIB = _kernels.raster_py.MIN_CONTRIB
T_CUTOFF = _kernels.raster_py.T_CUTOFF


@dataclass
class Splat:
    mean2d: np.ndarray   # (2,) pixel coordinates
    cov2d: np.ndarray    # (2, 2) symmetric, already dilated
    depth: float         # camera-space z
    color: np.ndarray    # (3,)
    alpha: float


@dataclass
class RenderOutput:
    image: np.ndarray          # (H, W, 3) in [0, 1]
    final_t: np.ndarray        # (H, W) remaining transmittance
    last_idx: np.ndarray       # (H, W) sorted index of last composited splat
    n_skipped: int             # splats dropped for a non-invertible cov2d
    background: np.ndarray
    # bookkeeping for the backward pass (splat arrays in sorted order)
    order: np.ndarray = field(repr=False, default=None)
    sorted_mean2d: np.ndarray = field(repr=False, default=None)
    sorted_cov2d: np.ndarray = field(repr=False, default=None)
    sorted_color: np.ndarray = field(repr=False, default=None)
    sorted_alpha: np.ndarray = field(repr=False, default=None)


@dataclass
class ProjectionTape:
    t: np.ndarray        # (V, 3) camera-space points, visible rows only
    j: np.ndarray        # (V, 2, 3)
    m: np.ndarray        # (V, 2, 3) J @ R
    sigma: np.ndarray    # (V, 3, 3)
    rotation: np.ndarray
    fx: float
    fy: float


def project_batch(mu: np.ndarray, sigma: np.ndarray, cam: Camera):
    """Project all Gaussians; returns packed splats, visibility and a tape.

    ``cov2d`` is packed (a, b, c); the tape holds visible rows only.
    """
    t = cam.to_camera(mu)
    tz = t[:, 2]
    in_front = tz > NEAR_PLANE
    safe_tz = np.where(in_front, tz, 1.0)
    u = cam.fx * t[:, 0] / safe_tz + cam.cx
    v = cam.fy * t[:, 1] / safe_tz + cam.cy
    w, h = cam.width, cam.height
    visible = (in_front
               & (u >= -CULL_MARGIN * w) & (u <= (1.0 + CULL_MARGIN) * w)
               & (v >= -CULL_MARGIN * h) & (v <= (1.0 + CULL_MARGIN) * h))

    tv = t[visible]
    tzv = tv[:, 2]
    nv = tv.shape[0]
    j = np.zeros((nv, 2, 3))
    j[:, 0, 0] = cam.fx / tzv
    j[:, 0, 2] = -cam.fx * tv[:, 0] / tzv**2
    j[:, 1, 1] = cam.fy / tzv
    j[:, 1, 2] = -cam.fy * tv[:, 1] / tzv**2
    m = np.einsum("nij,jk->nik", j, cam.rotation)
    sig_v = sigma[visible]
    cov = np.einsum("nik,nkl,njl->nij", m, sig_v, m)
    cov2d = np.stack([cov[:, 0, 0] + COV_DILATION,
                      cov[:, 0, 1],
                      cov[:, 1, 1] + COV_DILATION], axis=1)
    mean2d = np.stack([u[visible], v[visible]], axis=1)
    tape = ProjectionTape(t=tv, j=j, m=m, sigma=sig_v,
                          rotation=cam.rotation, fx=cam.fx, fy=cam.fy)
    return mean2d, cov2d, tzv, visible, tape


def project_backward(tape: ProjectionTape, d_mean2d: np.ndarray,
                     d_cov2d: np.ndarray):
    """Adjoint of ``project_batch`` over visible rows -> (d_mu, d_sigma)."""
    nv = tape.t.shape[0]
    d_cov_full = np.zeros((nv, 2, 2))
    d_cov_full[:, 0, 0] = d_cov2d[:, 0]
    d_cov_full[:, 0, 1] = d_cov_full[:, 1, 0] = 0.5 * d_cov2d[:, 1]
    d_cov_full[:, 1, 1] = d_cov2d[:, 2]

    d_sigma = np.einsum("nki,nkl,nlj->nij", tape.m, d_cov_full, tape.m)
    d_m = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov_full, tape.m, tape.sigma)
    d_j = np.einsum("nik,jk->nij", d_m, tape.rotation)

    tx, ty, tz = tape.t[:, 0], tape.t[:, 1], tape.t[:, 2]
    d_t = np.einsum("nij,ni->nj", tape.j, d_mean2d)
    d_t[:, 0] += d_j[:, 0, 2] * (-tape.fx / tz**2)
    d_t[:, 1] += d_j[:, 1, 2] * (-tape.fy / tz**2)
    d_t[:, 2] += (d_j[:, 0, 0] * (-tape.fx / tz**2)
                  + d_j[:, 1, 1] * (-tape.fy / tz**2)
                  + d_j[:, 0, 2] * (2.0 * tape.fx * tx / tz**3)
                  + d_j[:, 1, 2] * (2.0 * tape.fy * ty / tz**3))
    d_mu = d_t @ tape.rotation
    return d_mu, d_sigma


def project(g: DecodedGaussian, cam: Camera) -> Splat | None:
    """One Gaussian -> Splat, or None when culled."""
    mean2d, cov2d, depth, visible, _ = project_batch(
        g.mu[None, :], g.sigma[None, :, :], cam)
    if not visible[0]:
        return None
    full = np.array([[cov2d[0, 0], cov2d[0, 1]], [cov2d[0, 1], cov2d[0, 2]]])
    return Splat(mean2d=mean2d[0], cov2d=full, depth=float(depth[0]),
                 color=g.c.copy(), alpha=float(g.alpha))


def _pack_splats(splats):
    n = len(splats)
    mean2d = np.zeros((n, 2))
    cov2d = np.zeros((n, 3))
    color = np.zeros((n, 3))
    alpha = np.zeros(n)
    depth = np.zeros(n)
    for i, s in enumerate(splats):
        mean2d[i] = s.mean2d
        cov2d[i] = (s.cov2d[0, 0], s.cov2d[0, 1], s.cov2d[1, 1])
        color[i] = s.color
        alpha[i] = s.alpha
        depth[i] = s.depth
    return mean2d, cov2d, color, alpha, depth


def _rasterize_packed(mean2d, cov2d, color, alpha, depth, cam: Camera,
                      background) -> RenderOutput:
    bg = np.asarray(background, dtype=np.float64)
    order = np.argsort(depth, kind="stable")
    sm = np.ascontiguousarray(mean2d[order])
    sc = np.ascontiguousarray(cov2d[order])
    scol = np.ascontiguousarray(color[order])
    sal = np.ascontiguousarray(alpha[order])
    image, final_t, last_idx, n_skipped = _kernels.rasterize_forward(
        sm, sc, scol, sal, cam.height, cam.width, bg)
    return RenderOutput(image=image, final_t=final_t, last_idx=last_idx,
                        n_skipped=n_skipped, background=bg, order=order,
                        sorted_mean2d=sm, sorted_cov2d=sc,
                        sorted_color=scol, sorted_alpha=sal)


def rasterize(splats, cam: Camera, background) -> RenderOutput:
    """Depth-sort and alpha-blend splats over a constant background."""
    return _rasterize_packed(*_pack_splats(list(splats)), cam, background)


def rasterize_backward(output: RenderOutput, dl_dimage: np.ndarray):
    """Per-splat gradients of a scalar loss given its image gradient.

    Returns a dict with d_mean2d (N,2), d_cov2d packed (N,3) where the
    middle entry perturbs both off-diagonals, d_color (N,3), d_alpha
    (N,), grad_norms (N,) = ||dL/d mean2d||_2, and touched (N,) flags.
    """
    dl = np.ascontiguousarray(dl_dimage, dtype=np.float64)
    if dl.shape != output.image.shape:
        raise ValueError(
            f"dL/dimage shape {dl.shape} != image shape {output.image.shape}")
    dm_s, dc_s, dcol_s, dal_s, touched_s = _kernels.rasterize_backward(
        output.sorted_mean2d, output.sorted_cov2d, output.sorted_color,
        output.sorted_alpha, output.image.shape[0], output.image.shape[1],
        output.background, output.final_t, output.last_idx, dl)
    n = output.order.shape[0]
    inv = output.order
    d_mean2d = np.zeros((n, 2))
    d_cov2d = np.zeros((n, 3))
    d_color = np.zeros((n, 3))
    d_alpha = np.zeros(n)
    touched = np.zeros(n, dtype=bool)
    d_mean2d[inv] = dm_s
    d_cov2d[inv] = dc_s
    d_color[inv] = dcol_s
    d_alpha[inv] = dal_s
    touched[inv] = touched_s
    return {
        "mean2d": d_mean2d,
        "cov2d": d_cov2d,
        "color": d_color,
        "alpha": d_alpha,
        "grad_norms": np.linalg.norm(d_mean2d, axis=1),
        "touched": touched,
    }


@dataclass
class RenderTape:
    forest: Forest
    decoders: Decoders
    dec_tape: object
    proj_tape: ProjectionTape | None
    visible: np.ndarray        # (N_leaves,) bool, pre-raster culling
    output: RenderOutput


def render_forward(forest: Forest, decoders: Decoders, cam: Camera,
                   background) -> tuple[RenderOutput, RenderTape]:
    decoded, dec_tape = decode_batch(forest, decoders, cam.center)
    if len(decoded) == 0:
        out = _rasterize_packed(np.zeros((0, 2)), np.zeros((0, 3)),
                                np.zeros((0, 3)), np.zeros(0), np.zeros(0),
                                cam, background)
        tape = RenderTape(forest, decoders, None, None,
                          np.zeros(0, dtype=bool), out)
        return out, tape
    mean2d, cov2d, depth, visible, proj_tape = project_batch(
        decoded.mu, decoded.sigma, cam)
    out = _rasterize_packed(mean2d, cov2d, decoded.c[visible],
                            decoded.alpha[visible], depth, cam, background)
    tape = RenderTape(forest, decoders, dec_tape, proj_tape, visible, out)
    return out, tape


def _zero_param_grads(forest: Forest, decoders: Decoders):
    d_r, d_i = forest.dims
    grads = {
        "leaf_mu": np.zeros((forest.n_leaves, 3)),
        "leaf_log_gamma": np.zeros(forest.n_leaves),
        "leaf_alpha_raw": np.zeros(forest.n_leaves),
        "internal_f": np.zeros((forest.n_internals, d_i)),
        "root_f": np.zeros((forest.n_roots, d_r)),
    }
    for prefix, mlp in (("cov", decoders.cov), ("rgb", decoders.rgb)):
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            grads[f"{prefix}.w{i}"] = np.zeros_like(w)
            grads[f"{prefix}.b{i}"] = np.zeros_like(b)
    return grads


def render_backward(tape: RenderTape, dl_dimage: np.ndarray):
    """Full-pipeline adjoint.

    Returns (param_grads, grad_norms, seen): gradients for every
    trainable tensor, per-leaf ||dL/d mean2d||_2 in pixel units, and a
    per-leaf flag for having contributed to at least one pixel.
    """
    n_leaves = tape.forest.n_leaves
    if tape.dec_tape is None:
        return (_zero_param_grads(tape.forest, tape.decoders),
                np.zeros(n_leaves), np.zeros(n_leaves, dtype=bool))

    splat_grads = rasterize_backward(tape.output, dl_dimage)
    vis_idx = np.flatnonzero(tape.visible)

    d_mu_vis, d_sigma_vis = project_backward(
        tape.proj_tape, splat_grads["mean2d"], splat_grads["cov2d"])

    d_sigma = np.zeros((n_leaves, 3, 3))
    d_c = np.zeros((n_leaves, 3))
    d_alpha = np.zeros(n_leaves)
    d_sigma[vis_idx] = d_sigma_vis
    d_c[vis_idx] = splat_grads["color"]
    d_alpha[vis_idx] = splat_grads["alpha"]

    grads = decode_backward(tape.dec_tape, tape.decoders, d_sigma, d_c, d_alpha)
    grads["leaf_mu"][vis_idx] += d_mu_vis

    grad_norms = np.zeros(n_leaves)
    seen = np.zeros(n_leaves, dtype=bool)
    grad_norms[vis_idx] = splat_grads["grad_norms"]
    seen[vis_idx] = splat_grads["touched"]
    return grads, grad_norms, seen


def render(forest: Forest, decoders: Decoders, cam: Camera,
           background) -> RenderOutput:
    """decode -> project/cull -> rasterize; background alone when empty."""
    out, _ = render_forward(forest, decoders, cam, background)
    return out
