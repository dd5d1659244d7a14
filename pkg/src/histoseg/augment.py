"""Seeded, mask-synchronized data augmentation.

Spatial transforms (mirror, quarter-turn rotation, center scaling, elastic
deformation) hit image and class map identically: the image is resampled
bilinearly, the mask nearest-neighbor, and border handling replicates edges
so no label can appear that the input lacked. Intensity transforms
(brightness, contrast, gamma, gaussian noise) touch the image only and
operate on [0,1]-scaled pixels, before z-score normalization.

``augment_pair`` is pure given (config, draw_index): the PRNG is re-seeded
per draw, decisions are sampled in a fixed order, and transform parameters
are drawn only when their gate fires.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .errors import ConfigError, ShapeMismatch


@dataclass
class AugmentConfig:
    p_mirror: float = 0.0
    p_rotate: float = 0.0
    p_scale: float = 0.0
    p_elastic: float = 0.0
    p_intensity: float = 0.0  # gates the four color jitters together
    free_rotation: bool = False  # draw any angle instead of quarter turns
    scale_range: tuple[float, float] = (0.9, 1.1)
    elastic_alpha: float = 10.0
    elastic_sigma: float = 4.0
    brightness_delta: float = 0.1
    contrast_range: tuple[float, float] = (0.9, 1.1)
    gamma_range: tuple[float, float] = (0.8, 1.2)
    noise_sigma: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        for name in ("p_mirror", "p_rotate", "p_scale", "p_elastic", "p_intensity"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        for name in ("scale_range", "contrast_range", "gamma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} is not well-ordered: ({lo}, {hi})")
        if self.gamma_range[0] <= 0:
            raise ConfigError("gamma_range must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    def enabled(self) -> bool:
        return any(
            p > 0
            for p in (self.p_mirror, self.p_rotate, self.p_scale, self.p_elastic, self.p_intensity)
        )


def _check_pair(image: np.ndarray, classmap: np.ndarray) -> None:
    if image.shape[:2] != classmap.shape:
        raise ShapeMismatch(
            f"image {image.shape[:2]} and class map {classmap.shape} disagree"
        )


def _warp(image: np.ndarray, classmap: np.ndarray, coords: np.ndarray):
    """Resample both rasters at the given [2, H, W] source coordinates."""
    channels = [
        map_coordinates(image[:, :, c], coords, order=1, mode="nearest")
        for c in range(image.shape[2])
    ]
    warped_image = np.stack(channels, axis=-1)
    warped_map = map_coordinates(classmap, coords, order=0, mode="nearest")
    return warped_image, warped_map


def mirror(image: np.ndarray, classmap: np.ndarray, axis: int):
    _check_pair(image, classmap)
    return np.flip(image, axis=axis).copy(), np.flip(classmap, axis=axis).copy()


def rotate90(image: np.ndarray, classmap: np.ndarray, k: int):
    """Rotate both by k clockwise quarter turns."""
    _check_pair(image, classmap)
    return (
        np.rot90(image, k=-k, axes=(0, 1)).copy(),
        np.rot90(classmap, k=-k, axes=(0, 1)).copy(),
    )


def rotate_free(image: np.ndarray, classmap: np.ndarray, angle_degrees: float):
    """Rotate about the raster center by any angle, keeping the shape."""
    _check_pair(image, classmap)
    h, w = classmap.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_degrees)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = rows - cy, cols - cx
    src_r = cy + dy * np.cos(theta) - dx * np.sin(theta)
    src_c = cx + dy * np.sin(theta) + dx * np.cos(theta)
    return _warp(image, classmap, np.stack([src_r, src_c]))


def scale_about_center(image: np.ndarray, classmap: np.ndarray, factor: float):
    """Zoom by ``factor`` about the raster center, keeping the shape."""
    _check_pair(image, classmap)
    h, w = classmap.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows = cy + (np.arange(h) - cy) / factor
    cols = cx + (np.arange(w) - cx) / factor
    coords = np.stack(np.meshgrid(rows, cols, indexing="ij"))
    return _warp(image, classmap, coords)


def elastic_deform(image: np.ndarray, classmap: np.ndarray, field: tuple[np.ndarray, np.ndarray]):
    """Displace sampling positions by the (dy, dx) field."""
    _check_pair(image, classmap)
    dy, dx = field
    if dy.shape != classmap.shape or dx.shape != classmap.shape:
        raise ShapeMismatch("displacement field shape must match the rasters")
    h, w = classmap.shape
    grid = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([grid[0] + dy, grid[1] + dx])
    return _warp(image, classmap, coords)


def make_elastic_field(
    shape: tuple[int, int], alpha: float, sigma: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed random displacement field: uniform noise, gaussian blur, gain."""
    dy = gaussian_filter(rng.uniform(-1.0, 1.0, shape), sigma) * alpha
    dx = gaussian_filter(rng.uniform(-1.0, 1.0, shape), sigma) * alpha
    return dy, dx


def apply_spatial(image: np.ndarray, classmap: np.ndarray, op: tuple):
    """Dispatch one synchronized spatial transform, e.g. ("rotate90", 1)."""
    name, arg = op
    if name == "mirror":
        return mirror(image, classmap, arg)
    if name == "rotate90":
        return rotate90(image, classmap, arg)
    if name == "rotate_free":
        return rotate_free(image, classmap, arg)
    if name == "scale":
        return scale_about_center(image, classmap, arg)
    if name == "elastic":
        return elastic_deform(image, classmap, arg)
    raise ValueError(f"unknown spatial op {name!r}")


def apply_intensity(image: np.ndarray, op: tuple) -> np.ndarray:
    """One image-only color transform on [0,1] pixels, clamped back to [0,1]."""
    name, arg = op
    values = image.astype(np.float64)
    if name == "brightness":
        values = values + arg
    elif name == "contrast":
        values = (values - 0.5) * arg + 0.5
    elif name == "gamma":
        values = np.clip(values, 0.0, 1.0) ** arg
    elif name == "noise":
        sigma, seed = arg
        if sigma > 0:
            values = values + np.random.default_rng(seed).normal(0.0, sigma, values.shape)
    else:
        raise ValueError(f"unknown intensity op {name!r}")
    return np.clip(values, 0.0, 1.0)


def augment_pair(
    image: np.ndarray, classmap: np.ndarray, cfg: AugmentConfig, draw_index: int
):
    """Sample and apply the configured transforms for one draw.

    Deterministic: the PRNG is seeded by (cfg.seed, draw_index) and gates
    fire in a fixed order (mirror, rotate, scale, elastic, intensity).
    """
    _check_pair(image, classmap)
    cfg.validate()
    rng = np.random.default_rng((cfg.seed, draw_index))
    out_img, out_map = image, classmap
    if rng.random() < cfg.p_mirror:
        out_img, out_map = mirror(out_img, out_map, int(rng.integers(0, 2)))
    if rng.random() < cfg.p_rotate:
        if cfg.free_rotation:
            out_img, out_map = rotate_free(out_img, out_map, rng.uniform(0.0, 360.0))
        else:
            out_img, out_map = rotate90(out_img, out_map, int(rng.integers(1, 4)))
    if rng.random() < cfg.p_scale:
        out_img, out_map = scale_about_center(out_img, out_map, rng.uniform(*cfg.scale_range))
    if rng.random() < cfg.p_elastic:
        field = make_elastic_field(out_map.shape, cfg.elastic_alpha, cfg.elastic_sigma, rng)
        out_img, out_map = elastic_deform(out_img, out_map, field)
    if rng.random() < cfg.p_intensity:
        out_img = apply_intensity(out_img, ("brightness", rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)))
        out_img = apply_intensity(out_img, ("contrast", rng.uniform(*cfg.contrast_range)))
        out_img = apply_intensity(out_img, ("gamma", rng.uniform(*cfg.gamma_range)))
        out_img = apply_intensity(out_img, ("noise", (cfg.noise_sigma, int(rng.integers(0, 2**31)))))
    if out_img is image:
        out_img, out_map = image.copy(), classmap.copy()
    return out_img, out_map
