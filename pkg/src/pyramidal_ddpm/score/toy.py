"""Built-in seed-deterministic toy datasets, all Gaussian mixtures so the
analytic oracle applies to each of them."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from .analytic import GaussianMixtureData


def point_mass(H: int = 8, W: int | None = None, C: int = 1, mean=None, value: float = 0.0) -> GaussianMixtureData:
    """Every sample equals ``mean`` (a constant ``value`` image by default)."""
    W = H if W is None else W
    mu = np.full((H, W, C), value, dtype=np.float64) if mean is None else np.asarray(mean, dtype=np.float64)
    return GaussianMixtureData(np.ones(1), mu[None], np.zeros(1), name="point_mass")


def unit_gaussian(H: int = 8, W: int | None = None, C: int = 1, variance: float = 1.0) -> GaussianMixtureData:
    W = H if W is None else W
    return GaussianMixtureData(np.ones(1), np.zeros((1, H, W, C)), np.array([variance]), name="unit_gaussian")


def blob_image(H: int, W: int, C: int = 1, width: float = 0.4, amplitude: float = 1.6) -> np.ndarray:
    """Centered Gaussian bump rescaled into [-0.8, 0.8]."""
    yy, xx = np.meshgrid(np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij")
    bump = np.exp(-(xx**2 + yy**2) / (2 * width**2))
    img = amplitude * bump - 0.8
    return np.repeat(img[:, :, None], C, axis=2)


def gaussian_blob(H: int = 16, W: int | None = None, C: int = 1, variance: float = 0.01) -> GaussianMixtureData:
    W = H if W is None else W
    return GaussianMixtureData(np.ones(1), blob_image(H, W, C)[None], np.array([variance]), name="gaussian_blob")


def two_component(
    H: int = 8, W: int | None = None, C: int = 1, offset: float = 0.5, variance: float = 0.05
) -> GaussianMixtureData:
    """Equal-weight mixture of constant images at ``+offset`` and ``-offset``."""
    W = H if W is None else W
    means = np.stack([np.full((H, W, C), offset), np.full((H, W, C), -offset)])
    return GaussianMixtureData(np.array([0.5, 0.5]), means, np.array([variance, variance]), name="two_component")


def checkerboard(
    H: int = 16, W: int | None = None, C: int = 1, cell: int = 4, amplitude: float = 0.5, variance: float = 0.05
) -> GaussianMixtureData:
    """Gaussian around a +/-amplitude checkerboard of ``cell``-pixel squares."""
    W = H if W is None else W
    r, c = np.meshgrid(np.arange(H) // cell, np.arange(W) // cell, indexing="ij")
    board = np.where((r + c) % 2 == 0, amplitude, -amplitude).astype(np.float64)
    mean = np.repeat(board[:, :, None], C, axis=2)
    return GaussianMixtureData(np.ones(1), mean[None], np.array([variance]), name="checkerboard")


TOY_DATASETS = {
    "point_mass": point_mass,
    "unit_gaussian": unit_gaussian,
    "gaussian_blob": gaussian_blob,
    "two_component": two_component,
    "checkerboard": checkerboard,
}


def make_toy(name: str, **params) -> GaussianMixtureData:
    try:
        factory = TOY_DATASETS[name]
    except KeyError:
        raise ParameterError(f"unknown toy dataset {name!r}; choose from {sorted(TOY_DATASETS)}") from None
    return factory(**params)
