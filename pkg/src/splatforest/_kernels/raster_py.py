"""NumPy rasterization kernels (reference implementation).

Splats arrive pre-sorted by ascending depth. ``cov2d`` is packed
``(a, b, c)`` for the symmetric matrix [[a, b], [b, c]]; gradients use
the same 3-scalar convention (perturbing ``b`` moves both off-diagonal
entries). Pixels are sampled at integer coordinates.

Blend semantics, shared with the compiled kernel:

* per-pixel weight  alpha' = min(0.99, alpha * exp(-1/2 d^T cov2d^-1 d))
* contributions with alpha' < 1/255 are skipped,
* a pixel stops accepting splats once its transmittance drops below 1e-4,
* whatever transmittance remains is filled with the background color.

The per-splat bounding box is exact with respect to the 1/255 skip rule
(plus a hair of margin), so restricting work to the box never changes
the output.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

ALPHA_CAP = 0.99
MIN_CONTRIB = 1.0 / 255.0
T_CUTOFF = 1e-4


def _splat_box(mx, my, a, b, c, alpha, width, height):
    """Inclusive pixel box covering every alpha' >= 1/255, or None."""
    if alpha * 255.0 <= 1.0:
        return None
    rho2 = 2.0 * np.log(255.0 * alpha)
    lam_max = 0.5 * (a + c) + np.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
    r = np.sqrt(rho2 * lam_max) + 1e-6
    x0 = max(int(np.ceil(mx - r)), 0)
    x1 = min(int(np.floor(mx + r)), width - 1)
    y0 = max(int(np.ceil(my - r)), 0)
    y1 = min(int(np.floor(my + r)), height - 1)
    if x0 > x1 or y0 > y1:
        return None
    return x0, x1, y0, y1


def _alpha_prime(mx, my, ia, ib, ic, alpha, box):
    x0, x1, y0, y1 = box
    dx = np.arange(x0, x1 + 1, dtype=np.float64) - mx
    dy = np.arange(y0, y1 + 1, dtype=np.float64) - my
    power = (-0.5 * ia) * dx[None, :] ** 2 - ib * dy[:, None] * dx[None, :] \
        + (-0.5 * ic) * dy[:, None] ** 2
    g = np.exp(power)
    return np.minimum(ALPHA_CAP, alpha * g), g, dx, dy


def rasterize_forward(mean2d, cov2d, color, alpha, height, width, background):
    n = mean2d.shape[0]
    image = np.zeros((height, width, 3))
    t_cur = np.ones((height, width))
    last_idx = np.full((height, width), -1, dtype=np.int32)
    n_skipped = 0

    for i in range(n):
        a, b, c = cov2d[i]
        det = a * c - b * b
        if not np.isfinite(det) or det <= 0.0:
            n_skipped += 1
            continue
        box = _splat_box(mean2d[i, 0], mean2d[i, 1], a, b, c, alpha[i],
                         width, height)
        if box is None:
            continue
        x0, x1, y0, y1 = box
        ap, _, _, _ = _alpha_prime(mean2d[i, 0], mean2d[i, 1],
                                   c / det, -b / det, a / det, alpha[i], box)
        t_sub = t_cur[y0:y1 + 1, x0:x1 + 1]
        sel = (ap >= MIN_CONTRIB) & (t_sub >= T_CUTOFF)
        if not sel.any():
            continue
        w = np.where(sel, ap * t_sub, 0.0)
        image[y0:y1 + 1, x0:x1 + 1] += w[:, :, None] * color[i]
        last_idx[y0:y1 + 1, x0:x1 + 1][sel] = i
        t_cur[y0:y1 + 1, x0:x1 + 1] = np.where(sel, t_sub * (1.0 - ap), t_sub)

    image += t_cur[:, :, None] * background
    return image, t_cur, last_idx, n_skipped


def rasterize_backward(mean2d, cov2d, color, alpha, height, width, background,
                       final_t, last_idx, dl_dimage):
    """Adjoint of the blend, walking composited splats back to front.

    Per pixel we recover the pre-splat transmittance by division and keep
    a running "behind color" R so that dC/dalpha'_i = T_i (c_i - R_i).
    """
    n = mean2d.shape[0]
    d_mean2d = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    d_color = np.zeros((n, 3))
    d_alpha = np.zeros(n)
    touched = np.zeros(n, dtype=bool)

    t_cur = final_t.copy()
    behind = np.tile(np.asarray(background, dtype=np.float64), (height, width, 1))

    for i in range(n - 1, -1, -1):
        a, b, c = cov2d[i]
        det = a * c - b * b
        if not np.isfinite(det) or det <= 0.0:
            continue
        box = _splat_box(mean2d[i, 0], mean2d[i, 1], a, b, c, alpha[i],
                         width, height)
        if box is None:
            continue
        x0, x1, y0, y1 = box
        ia, ib, ic = c / det, -b / det, a / det
        ap, g, dx, dy = _alpha_prime(mean2d[i, 0], mean2d[i, 1],
                                     ia, ib, ic, alpha[i], box)
        sel = (ap >= MIN_CONTRIB) & (last_idx[y0:y1 + 1, x0:x1 + 1] >= i)
        if not sel.any():
            continue
        touched[i] = True

        ap_s = ap[sel]
        g_s = g[sel]
        t_next = t_cur[y0:y1 + 1, x0:x1 + 1][sel]
        t_i = t_next / (1.0 - ap_s)
        dl = dl_dimage[y0:y1 + 1, x0:x1 + 1][sel]          # (k, 3)
        r_s = behind[y0:y1 + 1, x0:x1 + 1][sel]            # (k, 3)

        d_color[i] += (ap_s * t_i) @ dl
        d_ap = np.einsum("kc,kc->k", dl, t_i[:, None] * (color[i] - r_s))
        uncapped = ap_s < ALPHA_CAP
        d_g = np.where(uncapped, d_ap * alpha[i], 0.0)
        d_alpha[i] += np.where(uncapped, d_ap * g_s, 0.0).sum()
        d_power = d_g * g_s

        dxg, dyg = np.meshgrid(dx, dy)
        dx_s = dxg[sel]
        dy_s = dyg[sel]
        d_conic[i, 0] += (d_power * (-0.5 * dx_s * dx_s)).sum()
        d_conic[i, 1] += (d_power * (-dx_s * dy_s)).sum()
        d_conic[i, 2] += (d_power * (-0.5 * dy_s * dy_s)).sum()
        d_dx = d_power * (-(ia * dx_s + ib * dy_s))
        d_dy = d_power * (-(ib * dx_s + ic * dy_s))
        d_mean2d[i, 0] += -d_dx.sum()
        d_mean2d[i, 1] += -d_dy.sum()

        behind[y0:y1 + 1, x0:x1 + 1][sel] = (
            ap_s[:, None] * color[i] + (1.0 - ap_s)[:, None] * r_s
        )
        t_cur[y0:y1 + 1, x0:x1 + 1][sel] = t_i

    d_cov2d = _conic_grad_to_cov_grad(cov2d, d_conic)
    return d_mean2d, d_cov2d, d_color, d_alpha, touched


def _conic_grad_to_cov_grad(cov2d, d_conic):
    """Chain packed conic gradients through the 2x2 inverse."""
    a, b, c = cov2d[:, 0], cov2d[:, 1], cov2d[:, 2]
    det = a * c - b * b
    out = np.zeros_like(d_conic)
    ok = np.isfinite(det) & (det > 0.0)
    ia, ib, ic = c[ok] / det[ok], -b[ok] / det[ok], a[ok] / det[ok]
    k = np.zeros((ok.sum(), 2, 2))
    k[:, 0, 0], k[:, 0, 1], k[:, 1, 0], k[:, 1, 1] = ia, ib, ib, ic
    gp = np.zeros_like(k)
    gp[:, 0, 0] = d_conic[ok, 0]
    gp[:, 0, 1] = gp[:, 1, 0] = 0.5 * d_conic[ok, 1]
    gp[:, 1, 1] = d_conic[ok, 2]
    gc = -np.einsum("nij,njk,nkl->nil", k, gp, k)
    out[ok, 0] = gc[:, 0, 0]
    out[ok, 1] = 2.0 * gc[:, 0, 1]
    out[ok, 2] = gc[:, 1, 1]
    return out
