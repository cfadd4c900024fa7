"""Orthographic projection of glyphs onto evenly spaced lines through the center."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import NormalizationError, ShapeMismatchError, ValidationError

DEFAULT_DIRECTIONS = 12


@dataclass(frozen=True, eq=False)
class ProjectionPlan:
    """Per-direction pixel -> bin lookup table.

    ``index_map[p, j]`` is the bin of flattened pixel ``j`` along direction
    ``theta_p = p * pi / P``.  The table is read-only and can be shared.
    """

    height: int
    width: int
    n_directions: int
    n_bins: int
    index_map: np.ndarray

    @property
    def thetas(self) -> np.ndarray:
        return np.arange(self.n_directions) * np.pi / self.n_directions

    @property
    def n_pixels(self) -> int:
        return self.height * self.width


def default_bins(height: int, width: int) -> int:
    """ceil of the image diagonal.

    Pixel centers lie within half the center-to-center diagonal of the middle,
    which is strictly less than half this count, so no in-bounds pixel is
    ever clamped.
    """
    return math.ceil(math.sqrt(height * height + width * width))


def make_plan(height: int, width: int, n_directions: int = DEFAULT_DIRECTIONS,
              n_bins: int | None = None) -> ProjectionPlan:
    """Build the bin index of every pixel for every direction.

    With ``u = col - (W-1)/2`` and ``v = row - (H-1)/2`` the projected
    coordinate is ``t = u cos(theta) + v sin(theta)`` and the bin is
    ``floor(t + (B-1)/2 + 1/2)`` clamped to ``[0, B)``.
    """
    if height < 1 or width < 1 or n_directions < 1:
        raise ValidationError("plan needs height, width and direction count >= 1")
    if n_bins is None:
        n_bins = default_bins(height, width)
    elif n_bins < 1:
        raise ValidationError("n_bins must be >= 1")
    rows, cols = np.mgrid[0:height, 0:width]
    u = (cols - (width - 1) / 2.0).reshape(-1)
    v = (rows - (height - 1) / 2.0).reshape(-1)
    thetas = np.arange(n_directions) * np.pi / n_directions
    t = np.cos(thetas)[:, None] * u[None, :] + np.sin(thetas)[:, None] * v[None, :]
    idx = np.floor(t + (n_bins - 1) / 2.0 + 0.5)
    idx = np.clip(idx, 0, n_bins - 1).astype(np.intc)
    idx.setflags(write=False)
    return ProjectionPlan(height, width, n_directions, n_bins, idx)


@dataclass(frozen=True, eq=False)
class ProjectedDistribution:
    """Raw per-direction histograms ``hist`` (P, B) and their normalized form."""

    hist: np.ndarray
    mass: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        if np.any(self.mass <= 0):
            raise NormalizationError("cannot normalize a projection with zero ink mass")
        return self.hist / self.mass[:, None]


def _flatten_batch(images, plan: ProjectionPlan) -> np.ndarray:
    arr = np.asarray(getattr(images, "pixels", images), dtype=np.float64)
    if arr.ndim == 2 and arr.shape == (plan.height, plan.width):
        arr = arr.reshape(1, -1)
    elif arr.ndim == 3 and arr.shape[1:] == (plan.height, plan.width):
        arr = arr.reshape(arr.shape[0], -1)
    elif not (arr.ndim == 2 and arr.shape[1] == plan.n_pixels):
        raise ShapeMismatchError(f"images of shape {arr.shape} do not match a {plan.height}x{plan.width} plan")
    return np.ascontiguousarray(arr)


def project_histograms(images, plan: ProjectionPlan) -> np.ndarray:
    """Unnormalized histograms for a batch: (n, P, B).  Linear in the images."""
    return _backend.project_batch(_flatten_batch(images, plan), plan.index_map, plan.n_bins)


def project(img, plan: ProjectionPlan) -> ProjectedDistribution:
    hist = project_histograms(img, plan)[0]
    mass = hist.sum(axis=1)
    if np.any(mass <= 0):
        raise NormalizationError("image has zero ink mass; its projection cannot be normalized")
    return ProjectedDistribution(hist, mass)


def normalize_histograms(hist: np.ndarray) -> np.ndarray:
    mass = hist.sum(axis=-1, keepdims=True)
    if np.any(mass <= 0):
        raise NormalizationError("zero-mass histogram cannot be normalized")
    return hist / mass


def backproject(bin_grads: np.ndarray, plan: ProjectionPlan) -> np.ndarray:
    """Adjoint of :func:`project_histograms`: (n, P, B) bin values -> (n, H*W)."""
    return _backend.scatter_bins(np.ascontiguousarray(bin_grads, dtype=np.float64), plan.index_map)
