"""Posed-image datasets: synthetic generation, disk layout, PNG I/O.

A scene directory holds a ``manifest.json`` (intrinsics, rotation rows,
translation, image filenames, split indices, background) next to 8-bit
PNGs. The synthetic generator renders random flat Gaussians with this
package's own rasterizer in double precision, so a trained model's
fitting error is attributable to the representation, not the renderer.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .camera import Camera, look_at
from .decoder import build_covariance_batch, normalize_quaternions
from .errors import FormatError
from .renderer import RenderOutput, _rasterize_packed, project_batch

MANIFEST_NAME = "manifest.json"


@dataclass
class SceneDataset:
    cameras: list[Camera]
    images: list[np.ndarray]              # (H, W, 3) float64 in [0, 1]
    train_idx: list[int]
    test_idx: list[int]
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise ValueError("cameras and images misaligned")

    def train_views(self):
        return [(self.cameras[i], self.images[i]) for i in self.train_idx]

    def test_views(self):
        return [(self.cameras[i], self.images[i]) for i in self.test_idx]


@dataclass
class GroundTruth:
    """Flat (non-hierarchical) Gaussians used to render a synthetic scene."""

    mu: np.ndarray       # (N, 3)
    s: np.ndarray        # (N, 3)
    q: np.ndarray        # (N, 4) unit
    alpha: np.ndarray    # (N,)
    color: np.ndarray    # (N, 3)

    def render(self, cam: Camera, background) -> RenderOutput:
        sigma, _ = build_covariance_batch(self.s, self.q)
        mean2d, cov2d, depth, visible, _ = project_batch(self.mu, sigma, cam)
        return _rasterize_packed(mean2d, cov2d, self.color[visible],
                                 self.alpha[visible], depth, cam, background)


def ring_cameras(n: int, center, radius: float, elevation: float,
                 resolution: int, focal: float) -> list[Camera]:
    """n poses on a circle around ``center``, all looking at it."""
    center = np.asarray(center, dtype=np.float64)
    cams = []
    half = (resolution - 1) / 2.0
    for i in range(n):
        theta = 2.0 * np.pi * i / n
        eye = center + np.array([radius * np.cos(theta),
                                 radius * np.sin(theta),
                                 elevation])
        cams.append(look_at(eye, center, fx=focal, fy=focal, cx=half, cy=half,
                            width=resolution, height=resolution))
    return cams


def gen_synthetic_scene(n_gaussians: int, n_cameras: int, resolution: int,
                        seed) -> tuple[SceneDataset, GroundTruth]:
    """Random flat Gaussians in a unit box plus a camera ring around them.

    The draw mixes three populations so the scene carries structure at
    more than one scale: a dense field of small high-contrast splats, a
    sprinkling of near-pixel dots, and a few isolated dark markers on the
    ring axis, which every camera sees at the same scale and distance.
    Background is white; colors are dark-on-light for contrast.
    """
    if n_gaussians < 1 or n_cameras < 1:
        raise ValueError("need at least one Gaussian and one camera")
    rng = np.random.default_rng(seed)
    n_axis = 3 if n_gaussians >= 16 else 0
    n_dots = n_gaussians // 8 if n_gaussians >= 16 else 0
    n_tex = n_gaussians - n_axis - n_dots

    axis_mu = np.array([[0.0, 0.0, 0.0],
                        [0.0, 0.0, 0.25],
                        [0.0, 0.0, -0.25]])[:n_axis]
    stretch = np.array([1.0, 1.0, 1.6])  # taller than wide, still unit box
    tex: list[np.ndarray] = []
    while len(tex) < n_tex:
        p = rng.uniform(-0.25, 0.25, size=3) * stretch
        # keep a clearing around each axis marker so its edge stays clean
        if n_axis and np.linalg.norm(p - axis_mu, axis=1).min() <= 0.12:
            continue
        tex.append(p)
    mu = np.asarray(tex, dtype=np.float64).reshape(n_tex, 3)
    s = rng.uniform(0.012, 0.05, size=(n_tex, 3))
    alpha = rng.uniform(0.75, 0.99, size=n_tex)
    color = np.where(rng.uniform(size=(n_tex, 3)) < 0.5, 0.03, 0.45)

    dot_mu = rng.uniform(-0.25, 0.25, size=(n_dots, 3)) * stretch
    dot_s = rng.uniform(0.010, 0.018, size=(n_dots, 3))
    mu = np.vstack([mu, dot_mu, axis_mu])
    s = np.vstack([s, dot_s, np.full((n_axis, 3), 0.022)])
    alpha = np.concatenate([alpha, np.full(n_dots, 0.99),
                            np.full(n_axis, 0.99)])
    color = np.vstack([color, np.full((n_dots, 3), 0.02),
                       np.full((n_axis, 3), 0.02)])
    q, _, _ = normalize_quaternions(rng.standard_normal((n_gaussians, 4)))
    gt = GroundTruth(mu=mu, s=s, q=q, alpha=alpha, color=color)

    background = np.ones(3)
    cams = ring_cameras(n_cameras, np.zeros(3), radius=1.6,
                        elevation=0.4, resolution=resolution,
                        focal=2.4 * resolution)
    images = [gt.render(cam, background).image for cam in cams]
    test_idx = list(range(0, n_cameras, 8)) if n_cameras > 1 else []
    train_idx = [i for i in range(n_cameras) if i not in test_idx]
    if not train_idx:  # single-camera scene trains on its only view
        train_idx = [0]
    return SceneDataset(cameras=cams, images=images, train_idx=train_idx,
                        test_idx=test_idx, background=background), gt


def save_image(path, image: np.ndarray) -> None:
    """Float [0,1] -> 8-bit PNG."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_scene(dataset: SceneDataset, scene_dir) -> None:
    os.makedirs(scene_dir, exist_ok=True)
    entries = []
    for i, (cam, image) in enumerate(zip(dataset.cameras, dataset.images)):
        fname = f"view_{i:03d}.png"
        save_image(os.path.join(scene_dir, fname), image)
        entries.append({
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "rotation": cam.rotation.tolist(),
            "translation": cam.translation.tolist(),
            "image": fname,
        })
    manifest = {
        "cameras": entries,
        "train_idx": list(map(int, dataset.train_idx)),
        "test_idx": list(map(int, dataset.test_idx)),
        "background": dataset.background.tolist(),
    }
    with open(os.path.join(scene_dir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_scene(scene_dir) -> SceneDataset:
    path = os.path.join(scene_dir, MANIFEST_NAME)
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"no {MANIFEST_NAME} in {scene_dir}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed manifest: {exc}") from None

    cameras, images = [], []
    try:
        for entry in manifest["cameras"]:
            cameras.append(Camera(
                rotation=np.array(entry["rotation"]),
                translation=np.array(entry["translation"]),
                fx=entry["fx"], fy=entry["fy"], cx=entry["cx"], cy=entry["cy"],
                width=entry["width"], height=entry["height"]))
            images.append(load_image(os.path.join(scene_dir, entry["image"])))
        return SceneDataset(
            cameras=cameras, images=images,
            train_idx=[int(i) for i in manifest["train_idx"]],
            test_idx=[int(i) for i in manifest["test_idx"]],
            background=np.asarray(manifest.get("background", [0, 0, 0]),
                                  dtype=np.float64),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed manifest: {exc}") from None
