# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rasterization kernels; same contract as raster_py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, floor, isfinite, log, sqrt

cnp.import_array()

BACKEND = "cython"

ALPHA_CAP = 0.99
MIN_CONTRIB = 1.0 / 255.0
T_CUTOFF = 1e-4

cdef double _ALPHA_CAP = 0.99
cdef double _MIN_CONTRIB = 1.0 / 255.0
cdef double _T_CUTOFF = 1e-4


cdef inline bint _box(double mx, double my, double a, double b, double c,
                      double alpha, int width, int height,
                      int *x0, int *x1, int *y0, int *y1) nogil:
    cdef double rho2, lam_max, r, disc
    if alpha * 255.0 <= 1.0:
        return False
    rho2 = 2.0 * log(255.0 * alpha)
    disc = 0.25 * (a - c) * (a - c) + b * b
    if disc < 0.0:
        disc = 0.0
    lam_max = 0.5 * (a + c) + sqrt(disc)
    r = sqrt(rho2 * lam_max) + 1e-6
    x0[0] = <int>ceil(mx - r)
    if x0[0] < 0:
        x0[0] = 0
    x1[0] = <int>floor(mx + r)
    if x1[0] > width - 1:
        x1[0] = width - 1
    y0[0] = <int>ceil(my - r)
    if y0[0] < 0:
        y0[0] = 0
    y1[0] = <int>floor(my + r)
    if y1[0] > height - 1:
        y1[0] = height - 1
    return x0[0] <= x1[0] and y0[0] <= y1[0]


def rasterize_forward(double[:, ::1] mean2d, double[:, ::1] cov2d,
                      double[:, ::1] color, double[::1] alpha,
                      int height, int width, double[::1] background):
    cdef int n = mean2d.shape[0]
    image_arr = np.zeros((height, width, 3))
    t_arr = np.ones((height, width))
    last_arr = np.full((height, width), -1, dtype=np.int32)
    cdef double[:, :, ::1] image = image_arr
    cdef double[:, ::1] t_cur = t_arr
    cdef int[:, ::1] last_idx = last_arr
    cdef int n_skipped = 0

    cdef int i, px, py, x0, x1, y0, y1
    cdef double a, b, c, det, ia, ib, ic, mx, my, al
    cdef double dx, dy, power, ap, t, w

    with nogil:
        for i in range(n):
            a = cov2d[i, 0]; b = cov2d[i, 1]; c = cov2d[i, 2]
            det = a * c - b * b
            if not isfinite(det) or det <= 0.0:
                n_skipped += 1
                continue
            mx = mean2d[i, 0]; my = mean2d[i, 1]; al = alpha[i]
            if not _box(mx, my, a, b, c, al, width, height, &x0, &x1, &y0, &y1):
                continue
            ia = c / det; ib = -b / det; ic = a / det
            for py in range(y0, y1 + 1):
                dy = py - my
                for px in range(x0, x1 + 1):
                    t = t_cur[py, px]
                    if t < _T_CUTOFF:
                        continue
                    dx = px - mx
                    power = -0.5 * ia * dx * dx - ib * dy * dx - 0.5 * ic * dy * dy
                    ap = al * exp(power)
                    if ap > _ALPHA_CAP:
                        ap = _ALPHA_CAP
                    if ap < _MIN_CONTRIB:
                        continue
                    w = ap * t
                    image[py, px, 0] += w * color[i, 0]
                    image[py, px, 1] += w * color[i, 1]
                    image[py, px, 2] += w * color[i, 2]
                    last_idx[py, px] = i
                    t_cur[py, px] = t * (1.0 - ap)
        for py in range(height):
            for px in range(width):
                t = t_cur[py, px]
                image[py, px, 0] += t * background[0]
                image[py, px, 1] += t * background[1]
                image[py, px, 2] += t * background[2]
    return image_arr, t_arr, last_arr, n_skipped


def rasterize_backward(double[:, ::1] mean2d, double[:, ::1] cov2d,
                       double[:, ::1] color, double[::1] alpha,
                       int height, int width, double[::1] background,
                       double[:, ::1] final_t, int[:, ::1] last_idx,
                       double[:, :, ::1] dl_dimage):
    cdef int n = mean2d.shape[0]
    dmean_arr = np.zeros((n, 2))
    dconic_arr = np.zeros((n, 3))
    dcolor_arr = np.zeros((n, 3))
    dalpha_arr = np.zeros(n)
    touched_arr = np.zeros(n, dtype=np.uint8)
    t_arr = np.asarray(final_t).copy()
    behind_arr = np.tile(np.asarray(background), (height, width, 1))

    cdef double[:, ::1] d_mean2d = dmean_arr
    cdef double[:, ::1] d_conic = dconic_arr
    cdef double[:, ::1] d_color = dcolor_arr
    cdef double[::1] d_alpha = dalpha_arr
    cdef unsigned char[::1] touched = touched_arr
    cdef double[:, ::1] t_cur = t_arr
    cdef double[:, :, ::1] behind = behind_arr

    cdef int i, px, py, x0, x1, y0, y1, ch
    cdef double a, b, c, det, ia, ib, ic, mx, my, al
    cdef double dx, dy, power, g, ap, t_next, t_i, d_ap, d_g, d_power
    cdef double r0, r1, r2, d_dx, d_dy

    with nogil:
        for i in range(n - 1, -1, -1):
            a = cov2d[i, 0]; b = cov2d[i, 1]; c = cov2d[i, 2]
            det = a * c - b * b
            if not isfinite(det) or det <= 0.0:
                continue
            mx = mean2d[i, 0]; my = mean2d[i, 1]; al = alpha[i]
            if not _box(mx, my, a, b, c, al, width, height, &x0, &x1, &y0, &y1):
                continue
            ia = c / det; ib = -b / det; ic = a / det
            for py in range(y0, y1 + 1):
                dy = py - my
                for px in range(x0, x1 + 1):
                    if last_idx[py, px] < i:
                        continue
                    dx = px - mx
                    power = -0.5 * ia * dx * dx - ib * dy * dx - 0.5 * ic * dy * dy
                    g = exp(power)
                    ap = al * g
                    if ap > _ALPHA_CAP:
                        ap = _ALPHA_CAP
                    if ap < _MIN_CONTRIB:
                        continue
                    touched[i] = 1
                    t_next = t_cur[py, px]
                    t_i = t_next / (1.0 - ap)
                    r0 = behind[py, px, 0]
                    r1 = behind[py, px, 1]
                    r2 = behind[py, px, 2]

                    d_color[i, 0] += dl_dimage[py, px, 0] * ap * t_i
                    d_color[i, 1] += dl_dimage[py, px, 1] * ap * t_i
                    d_color[i, 2] += dl_dimage[py, px, 2] * ap * t_i
                    d_ap = (dl_dimage[py, px, 0] * t_i * (color[i, 0] - r0)
                            + dl_dimage[py, px, 1] * t_i * (color[i, 1] - r1)
                            + dl_dimage[py, px, 2] * t_i * (color[i, 2] - r2))
                    if ap < _ALPHA_CAP:
                        d_g = d_ap * al
                        d_alpha[i] += d_ap * g
                        d_power = d_g * g
                        d_conic[i, 0] += d_power * (-0.5 * dx * dx)
                        d_conic[i, 1] += d_power * (-dx * dy)
                        d_conic[i, 2] += d_power * (-0.5 * dy * dy)
                        d_dx = d_power * (-(ia * dx + ib * dy))
                        d_dy = d_power * (-(ib * dx + ic * dy))
                        d_mean2d[i, 0] += -d_dx
                        d_mean2d[i, 1] += -d_dy

                    behind[py, px, 0] = ap * color[i, 0] + (1.0 - ap) * r0
                    behind[py, px, 1] = ap * color[i, 1] + (1.0 - ap) * r1
                    behind[py, px, 2] = ap * color[i, 2] + (1.0 - ap) * r2
                    t_cur[py, px] = t_i

    d_cov2d = _conic_grad_to_cov_grad(np.asarray(cov2d), dconic_arr)
    return dmean_arr, d_cov2d, dcolor_arr, dalpha_arr, touched_arr.astype(bool)


def _conic_grad_to_cov_grad(cov2d, d_conic):
    a, b, c = cov2d[:, 0], cov2d[:, 1], cov2d[:, 2]
    det = a * c - b * b
    out = np.zeros_like(d_conic)
    ok = np.isfinite(det) & (det > 0.0)
    ia, ib, ic = c[ok] / det[ok], -b[ok] / det[ok], a[ok] / det[ok]
    k = np.zeros((int(ok.sum()), 2, 2))
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
