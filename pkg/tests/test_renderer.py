"""Projection and rasterization, forward against oracles and backward
against finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import (
    max_rel_err,
    numeric_grad,
    orbit_camera,
    random_decoders,
    random_forest,
)
from splatforest import _kernels
from splatforest.camera import Camera
from splatforest.decoder import DecodedGaussian
from splatforest.forest import empty_forest
from splatforest.renderer import (
    ALPHA_CAP,
    COV_DILATION,
    MIN_CONTRIB,
    T_CUTOFF,
    Splat,
    project,
    project_backward,
    project_batch,
    rasterize,
    rasterize_backward,
    render,
    render_backward,
    render_forward,
)

FRONT_CAM = Camera(rotation=np.eye(3), translation=np.zeros(3),
                   fx=100.0, fy=100.0, cx=32.0, cy=32.0, width=64, height=64)


def gaussian_at(mu, sigma_scale=0.01, alpha=0.8, color=(1.0, 0.0, 0.0)):
    return DecodedGaussian(
        mu=np.asarray(mu, dtype=np.float64),
        s=np.full(3, np.sqrt(sigma_scale)),
        q=np.array([1.0, 0.0, 0.0, 0.0]),
        sigma=np.eye(3) * sigma_scale,
        alpha=alpha,
        c=np.asarray(color, dtype=np.float64),
    )


# --- projection --------------------------------------------------------------

def test_point_on_the_optical_axis_hits_the_principal_point():
    splat = project(gaussian_at([0.0, 0.0, 1.0]), FRONT_CAM)
    np.testing.assert_allclose(splat.mean2d, [32.0, 32.0])
    assert splat.depth == pytest.approx(1.0)


def test_gaussian_behind_the_camera_is_culled():
    assert project(gaussian_at([0.0, 0.0, -1.0]), FRONT_CAM) is None
    assert project(gaussian_at([0.0, 0.0, 0.0]), FRONT_CAM) is None


def test_cull_margin_keeps_nearby_offscreen_centers():
    # u = 100 * x / z + 32; width 64, margin 0.3 -> alive while u <= 83.2
    assert project(gaussian_at([0.5, 0.0, 1.0]), FRONT_CAM) is not None  # u=82
    assert project(gaussian_at([0.6, 0.0, 1.0]), FRONT_CAM) is None      # u=92


def test_on_axis_isotropic_covariance_matches_closed_form():
    sig2 = 0.004
    z = 2.0
    splat = project(gaussian_at([0.0, 0.0, z], sigma_scale=sig2), FRONT_CAM)
    expect = (100.0 / z) ** 2 * sig2 + COV_DILATION
    np.testing.assert_allclose(np.diag(splat.cov2d), [expect, expect],
                               rtol=1e-12)
    assert splat.cov2d[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_projected_covariance_matches_numerical_jacobian():
    # oracle: differentiate the pixel map numerically, then J Sigma J^T
    rng = np.random.default_rng(21)
    cam = orbit_camera(0.7, resolution=48, focal=60.0)
    for _ in range(10):
        mu = rng.normal(scale=0.3, size=3)
        a = rng.normal(size=(3, 3)) * 0.1
        sigma = a @ a.T + 0.02 * np.eye(3)
        mean2d, cov2d, _, visible, _ = project_batch(mu[None], sigma[None], cam)
        assert visible[0]

        def pixel(p):
            t = cam.to_camera(p[None])[0]
            return np.array([cam.fx * t[0] / t[2] + cam.cx,
                             cam.fy * t[1] / t[2] + cam.cy])

        h = 1e-6
        jac = np.zeros((2, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            jac[:, k] = (pixel(mu + e) - pixel(mu - e)) / (2 * h)
        oracle = jac @ sigma @ jac.T
        got = np.array([[cov2d[0, 0] - COV_DILATION, cov2d[0, 1]],
                        [cov2d[0, 1], cov2d[0, 2] - COV_DILATION]])
        np.testing.assert_allclose(got, oracle, rtol=1e-3, atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_projection_adjoint_matches_finite_differences(seed):
    rng = np.random.default_rng(300 + seed)
    cam = orbit_camera(rng.uniform(0, 2 * np.pi), resolution=32, focal=40.0)
    n = 3
    mu = rng.normal(scale=0.25, size=(n, 3))
    a = rng.normal(size=(n, 3, 3)) * 0.15
    sigma = np.einsum("nik,njk->nij", a, a) + 0.02 * np.eye(3)
    g_mean = rng.normal(size=(n, 2))
    g_cov = rng.normal(size=(n, 3))

    def objective() -> float:
        m2d, c2d, _, vis, _ = project_batch(mu, sigma, cam)
        assert vis.all()
        return float(np.sum(m2d * g_mean) + np.sum(c2d * g_cov))

    _, _, _, vis, tape = project_batch(mu, sigma, cam)
    assert vis.all()
    d_mu, d_sigma = project_backward(tape, g_mean, g_cov)
    assert max_rel_err(d_mu, numeric_grad(objective, mu)) < 1e-3
    # d_sigma uses the symmetric-matrix convention; fold the one-sided
    # entrywise probe onto it before comparing
    num_sigma = numeric_grad(objective, sigma)
    num_sigma = (num_sigma + num_sigma.transpose(0, 2, 1)) / 2
    assert max_rel_err(d_sigma, num_sigma) < 1e-3


# --- rasterization forward ---------------------------------------------------

def make_splat(mean2d, cov=None, depth=1.0, color=(1.0, 1.0, 1.0), alpha=0.5):
    if cov is None:
        cov = np.eye(2) * 2.0
    return Splat(mean2d=np.asarray(mean2d, dtype=np.float64),
                 cov2d=np.asarray(cov, dtype=np.float64), depth=depth,
                 color=np.asarray(color, dtype=np.float64), alpha=alpha)


def random_scene(rng, n, width=14, height=11):
    splats = []
    for _ in range(n):
        a = rng.uniform(0.8, 5.0)
        c = rng.uniform(0.8, 5.0)
        b = rng.uniform(-0.5, 0.5) * np.sqrt(a * c)
        splats.append(make_splat(
            [rng.uniform(-2, width + 1), rng.uniform(-2, height + 1)],
            cov=[[a, b], [b, c]],
            depth=float(rng.uniform(0.5, 6.0)),
            color=rng.uniform(0, 1, 3),
            alpha=float(rng.uniform(0.05, 0.95)),
        ))
    return splats


def small_cam(width=14, height=11):
    return Camera(rotation=np.eye(3), translation=np.zeros(3), fx=10.0,
                  fy=10.0, cx=width / 2, cy=height / 2, width=width,
                  height=height)


def brute_force_image(splats, cam, background):
    """Exhaustive per-pixel compositor; no spatial bounding, own inverse."""
    bg = np.asarray(background, dtype=np.float64)
    order = sorted(range(len(splats)), key=lambda i: (splats[i].depth, i))
    img = np.zeros((cam.height, cam.width, 3))
    for y in range(cam.height):
        for x in range(cam.width):
            t = 1.0
            acc = np.zeros(3)
            for i in order:
                s = splats[i]
                det = np.linalg.det(s.cov2d)
                if not np.isfinite(det) or det <= 0.0:
                    continue
                if t < T_CUTOFF:
                    break
                delta = np.array([x, y], dtype=np.float64) - s.mean2d
                power = -0.5 * delta @ np.linalg.inv(s.cov2d) @ delta
                ap = min(ALPHA_CAP, s.alpha * np.exp(power))
                if ap < MIN_CONTRIB:
                    continue
                acc += ap * t * s.color
                t *= 1.0 - ap
            img[y, x] = acc + t * bg
    return img


def test_no_splats_renders_the_background():
    cam = small_cam()
    bg = np.array([0.2, 0.4, 0.6])
    out = rasterize([], cam, bg)
    np.testing.assert_array_equal(out.image,
                                  np.broadcast_to(bg, (11, 14, 3)))
    np.testing.assert_array_equal(out.final_t, np.ones((11, 14)))
    assert np.all(out.last_idx == -1)


def test_single_splat_blends_over_background_at_its_center():
    cam = small_cam()
    s = make_splat([7.0, 5.0], color=(1.0, 0.0, 0.0), alpha=0.6)
    out = rasterize([s], cam, np.array([0.0, 0.0, 1.0]))
    # exactly on the mean the exponential is 1, so alpha' = 0.6
    np.testing.assert_allclose(out.image[5, 7], [0.6, 0.0, 0.4], atol=1e-12)
    assert out.final_t[5, 7] == pytest.approx(0.4)


def test_opacity_is_capped():
    cam = small_cam()
    s = make_splat([7.0, 5.0], color=(1.0, 1.0, 1.0), alpha=0.9999)
    out = rasterize([s], cam, np.zeros(3))
    assert out.image[5, 7, 0] == pytest.approx(ALPHA_CAP)


def test_faint_splats_are_invisible():
    # alpha * 255 <= 1 can never reach the contribution floor
    cam = small_cam()
    s = make_splat([7.0, 5.0], alpha=1.0 / 255.0)
    out = rasterize([s], cam, np.array([0.3, 0.3, 0.3]))
    np.testing.assert_array_equal(out.image,
                                  np.broadcast_to([0.3, 0.3, 0.3], (11, 14, 3)))


def test_degenerate_covariance_is_skipped_not_rendered():
    cam = small_cam()
    s = make_splat([7.0, 5.0], cov=np.zeros((2, 2)), alpha=0.9)
    out = rasterize([s], cam, np.zeros(3))
    assert out.n_skipped == 1
    np.testing.assert_array_equal(out.image, np.zeros((11, 14, 3)))


def test_front_to_back_ordering_and_occlusion():
    cam = small_cam()
    front = make_splat([7.0, 5.0], depth=1.0, color=(1, 0, 0), alpha=0.9999)
    back = make_splat([7.0, 5.0], depth=2.0, color=(0, 1, 0), alpha=0.9999)
    bg = np.array([0.0, 0.0, 1.0])
    out = rasterize([back, front], cam, bg)  # input order is depth-reversed
    t1 = 1.0 - ALPHA_CAP
    expect = (ALPHA_CAP * np.array([1, 0, 0])
              + ALPHA_CAP * t1 * np.array([0, 1, 0])
              + t1 * (1.0 - ALPHA_CAP) * bg)
    np.testing.assert_allclose(out.image[5, 7], expect, atol=1e-12)


def test_pixel_saturates_after_enough_opaque_layers():
    cam = small_cam()
    splats = [make_splat([7.0, 5.0], depth=1.0 + i, alpha=0.9999,
                         color=(1, 1, 1)) for i in range(5)]
    out = rasterize(splats, cam, np.zeros(3))
    # T after three layers is 1e-6 < cutoff, so layers 3, 4 never composite
    assert out.last_idx[5, 7] == 2
    assert out.final_t[5, 7] == pytest.approx((1 - ALPHA_CAP) ** 3)


@pytest.mark.parametrize("seed", range(6))
def test_image_matches_brute_force_compositor(seed):
    rng = np.random.default_rng(400 + seed)
    cam = small_cam()
    splats = random_scene(rng, int(rng.integers(1, 9)))
    bg = rng.uniform(0, 1, 3)
    out = rasterize(splats, cam, bg)
    np.testing.assert_allclose(out.image, brute_force_image(splats, cam, bg),
                               atol=1e-5)


@pytest.mark.parametrize("seed", range(10))
def test_alpha_mass_plus_transmittance_is_one(seed):
    # with all-white splats over a white background every pixel must be
    # exactly 1: sum(alpha' * T) + T_final telescopes
    rng = np.random.default_rng(500 + seed)
    cam = small_cam()
    splats = random_scene(rng, int(rng.integers(0, 13)))
    for s in splats:
        s.color = np.ones(3)
    out = rasterize(splats, cam, np.ones(3))
    np.testing.assert_allclose(out.image, np.ones((11, 14, 3)), atol=1e-6)


def test_input_order_does_not_matter():
    rng = np.random.default_rng(42)
    cam = small_cam()
    splats = random_scene(rng, 8)
    bg = np.array([0.1, 0.2, 0.3])
    ref = rasterize(splats, cam, bg).image
    for _ in range(3):
        perm = rng.permutation(8)
        shuffled = [splats[i] for i in perm]
        np.testing.assert_array_equal(rasterize(shuffled, cam, bg).image, ref)


def test_rendering_is_deterministic():
    rng = np.random.default_rng(43)
    cam = small_cam()
    splats = random_scene(rng, 6)
    bg = np.array([0.5, 0.5, 0.5])
    a = rasterize(splats, cam, bg)
    b = rasterize(splats, cam, bg)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.final_t, b.final_t)
    np.testing.assert_array_equal(a.last_idx, b.last_idx)


# --- rasterization backward --------------------------------------------------

def test_backward_rejects_mismatched_image_gradient():
    cam = small_cam()
    out = rasterize(random_scene(np.random.default_rng(0), 3), cam, np.zeros(3))
    with pytest.raises(ValueError):
        rasterize_backward(out, np.zeros((5, 5, 3)))


def test_untouched_splat_has_zero_gradient():
    cam = small_cam()
    visible = make_splat([7.0, 5.0], alpha=0.8)
    faint = make_splat([7.0, 5.0], alpha=1.0 / 255.0, depth=0.5)
    out = rasterize([visible, faint], cam, np.zeros(3))
    grads = rasterize_backward(out, np.ones_like(out.image))
    assert grads["touched"][0] and not grads["touched"][1]
    assert grads["grad_norms"][1] == 0.0
    assert not grads["alpha"][1]


@pytest.mark.parametrize("seed", range(8))
def test_raster_adjoint_matches_finite_differences(seed):
    rng = np.random.default_rng(600 + seed)
    cam = small_cam()
    splats = random_scene(rng, int(rng.integers(2, 6)))
    bg = rng.uniform(0, 1, 3)
    g_img = rng.normal(size=(cam.height, cam.width, 3))

    def objective() -> float:
        return float(np.sum(rasterize(splats, cam, bg).image * g_img))

    out = rasterize(splats, cam, bg)
    grads = rasterize_backward(out, g_img)
    for i, s in enumerate(splats):
        assert max_rel_err(grads["mean2d"][i],
                           numeric_grad(objective, s.mean2d)) < 1e-3
        assert max_rel_err(grads["color"][i],
                           numeric_grad(objective, s.color)) < 1e-3
        alpha_box = np.array([s.alpha])

        def objective_alpha() -> float:
            s.alpha = float(alpha_box[0])
            return objective()

        fd_alpha = numeric_grad(objective_alpha, alpha_box)[0]
        s.alpha = float(alpha_box[0])
        assert max_rel_err(grads["alpha"][i], fd_alpha) < 1e-3
        # packed covariance gradient: middle entry moves both off-diagonals
        fd_cov = np.zeros(3)
        for k, (r_, c_) in enumerate(((0, 0), (0, 1), (1, 1))):
            h = 1e-6
            orig = s.cov2d[r_, c_]
            s.cov2d[r_, c_] = orig + h
            if k == 1:
                s.cov2d[c_, r_] = orig + h
            fp = objective()
            s.cov2d[r_, c_] = orig - h
            if k == 1:
                s.cov2d[c_, r_] = orig - h
            fm = objective()
            s.cov2d[r_, c_] = orig
            s.cov2d[c_, r_] = orig
            fd_cov[k] = (fp - fm) / (2 * h)
        assert max_rel_err(grads["cov2d"][i], fd_cov, floor=1e-4) < 2e-3


def test_python_and_compiled_kernels_agree():
    try:
        cy = _kernels.get_backend("cython")
    except ImportError:
        pytest.skip("compiled kernel not built")
    py = _kernels.get_backend("python")
    rng = np.random.default_rng(7)
    n, h, w = 12, 13, 17
    mean2d = np.stack([rng.uniform(-2, w + 1, n), rng.uniform(-2, h + 1, n)], 1)
    a = rng.uniform(0.8, 4.0, n)
    c = rng.uniform(0.8, 4.0, n)
    b = rng.uniform(-0.5, 0.5, n) * np.sqrt(a * c)
    cov2d = np.stack([a, b, c], axis=1)
    color = rng.uniform(0, 1, (n, 3))
    alpha = rng.uniform(0.05, 0.95, n)
    bg = rng.uniform(0, 1, 3)
    img_p, t_p, li_p, sk_p = py.rasterize_forward(mean2d, cov2d, color, alpha,
                                                  h, w, bg)
    img_c, t_c, li_c, sk_c = cy.rasterize_forward(mean2d, cov2d, color, alpha,
                                                  h, w, bg)
    np.testing.assert_allclose(img_c, img_p, atol=1e-9)
    np.testing.assert_allclose(t_c, t_p, atol=1e-9)
    np.testing.assert_array_equal(li_c, li_p)
    assert sk_c == sk_p
    dl = rng.normal(size=(h, w, 3))
    outs_p = py.rasterize_backward(mean2d, cov2d, color, alpha, h, w, bg,
                                   t_p, li_p, dl)
    outs_c = cy.rasterize_backward(mean2d, cov2d, color, alpha, h, w, bg,
                                   t_c, li_c, dl)
    for g_c, g_p in zip(outs_c, outs_p):
        np.testing.assert_allclose(np.asarray(g_c, dtype=np.float64),
                                   np.asarray(g_p, dtype=np.float64),
                                   atol=1e-8)


# --- whole-forest rendering --------------------------------------------------

def test_empty_forest_renders_background_and_zero_grads():
    rng = np.random.default_rng(1)
    dec = random_decoders(rng, 4, 3)
    cam = orbit_camera(0.3)
    bg = np.array([0.9, 0.1, 0.2])
    out, tape = render_forward(empty_forest(4, 3), dec, cam, bg)
    np.testing.assert_array_equal(out.image, np.broadcast_to(bg, (16, 16, 3)))
    grads, norms, seen = render_backward(tape, np.ones_like(out.image))
    assert norms.shape == (0,) and seen.shape == (0,)
    assert not grads["cov.w0"].any()


def test_forest_render_touches_pixels_and_reports_leaf_gradients():
    rng = np.random.default_rng(2)
    forest = random_forest(rng, 2, 3, 6)
    forest.leaf_log_gamma[:] = np.log(0.4)
    forest.leaf_alpha_raw[:] = 1.0
    dec = random_decoders(rng, 4, 3)
    cam = orbit_camera(1.1, resolution=24, focal=30.0)
    out, tape = render_forward(forest, dec, cam, np.zeros(3))
    assert out.image.max() > 0.01
    grads, norms, seen = render_backward(tape, np.ones_like(out.image))
    assert seen.any()
    assert norms[seen].min() >= 0.0
    assert grads["leaf_mu"].shape == (6, 3)
    assert any(grads[k].any() for k in ("internal_f", "root_f"))


def test_render_convenience_matches_forward():
    rng = np.random.default_rng(3)
    forest = random_forest(rng, 1, 2, 4)
    dec = random_decoders(rng, 4, 3)
    cam = orbit_camera(2.0)
    bg = np.array([0.3, 0.3, 0.3])
    out = render(forest, dec, cam, bg)
    out2, _ = render_forward(forest, dec, cam, bg)
    np.testing.assert_array_equal(out.image, out2.image)
