"""Projected character loss (CDF/Wasserstein and KL variants) with exact gradients.

Both variants compare per-direction normalized projection histograms of a
generated glyph against a ground-truth glyph and average over directions.
Gradients flow into the generated image only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NormalizationError, ShapeMismatchError, ValidationError
from .projection import ProjectionPlan, backproject, make_plan, project_histograms

VARIANTS = ("wdl", "kl")
DEFAULT_LAMBDA = {"wdl": 0.01, "kl": 0.05}


@dataclass(frozen=True)
class PclConfig:
    plan: ProjectionPlan
    variant: str = "wdl"
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown PCL variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")

    @classmethod
    def for_size(cls, height, width, variant="wdl", n_directions=12, epsilon=1e-8):
        return cls(make_plan(height, width, n_directions), variant, epsilon)


@dataclass(frozen=True, eq=False)
class LossValue:
    value: float
    gradient: np.ndarray | None = None


def default_lambda(variant: str) -> float:
    try:
        return DEFAULT_LAMBDA[variant]
    except KeyError:
        raise ValidationError(f"unknown PCL variant {variant!r}") from None


def _mass(hist):
    mass = hist.sum(axis=-1, keepdims=True)
    if np.any(mass <= 0):
        raise NormalizationError("PCL needs images with positive ink mass")
    return mass


def wdl_from_histograms(h_gen: np.ndarray, h_gt: np.ndarray, need_grad: bool = True):
    """Mean over directions of the L1 distance between normalized CDFs.

    ``h_gen``, ``h_gt``: (n, P, B).  Returns values (n,) and d value / d h_gen.
    """
    s_gen = _mass(h_gen)
    q_gen = h_gen / s_gen
    q_gt = h_gt / _mass(h_gt)
    diff = np.cumsum(q_gen, axis=-1) - np.cumsum(q_gt, axis=-1)
    n_dir = h_gen.shape[1]
    values = np.abs(diff).sum(axis=-1).sum(axis=-1) / n_dir
    if not need_grad:
        return values, None
    g_cdf = np.sign(diff) / n_dir
    g_q = np.cumsum(g_cdf[..., ::-1], axis=-1)[..., ::-1]
    g_h = (g_q - (g_q * q_gen).sum(axis=-1, keepdims=True)) / s_gen
    return values, g_h


def kl_from_histograms(h_gen: np.ndarray, h_gt: np.ndarray, epsilon: float = 1e-8, need_grad: bool = True):
    """Mean over directions of KL(smoothed gen || smoothed gt)."""
    n_bins = h_gen.shape[-1]
    denom = _mass(h_gen) + n_bins * epsilon
    a = (h_gen + epsilon) / denom
    b = (h_gt + epsilon) / (_mass(h_gt) + n_bins * epsilon)
    log_ratio = np.log(a) - np.log(b)
    n_dir = h_gen.shape[1]
    values = (a * log_ratio).sum(axis=-1).sum(axis=-1) / n_dir
    if not need_grad:
        return values, None
    g_a = (log_ratio + 1.0) / n_dir
    g_h = (g_a - (g_a * a).sum(axis=-1, keepdims=True)) / denom
    return values, g_h


def pcl_from_histograms(h_gen, h_gt, cfg: PclConfig, need_grad=True):
    if cfg.variant == "wdl":
        return wdl_from_histograms(h_gen, h_gt, need_grad)
    return kl_from_histograms(h_gen, h_gt, cfg.epsilon, need_grad)


def pcl_batch(gen: np.ndarray, gt_hist: np.ndarray, cfg: PclConfig, need_grad: bool = True):
    """Batched PCL on flattened images ``gen`` (n, H*W) against precomputed
    ground-truth histograms (n, P, B).  Returns values (n,) and pixel grads."""
    h_gen = project_histograms(gen, cfg.plan)
    values, g_h = pcl_from_histograms(h_gen, gt_hist, cfg, need_grad)
    if not need_grad:
        return values, None
    return values, backproject(g_h, cfg.plan)


def _pair(gen, gt, cfg):
    a = np.asarray(getattr(gen, "pixels", gen), dtype=np.float64)
    b = np.asarray(getattr(gt, "pixels", gt), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"generated {a.shape} and ground truth {b.shape} differ in shape")
    if a.shape != (cfg.plan.height, cfg.plan.width):
        raise ShapeMismatchError(f"images {a.shape} do not match the projection plan")
    return a, b


def _single(gen, gt, cfg, need_grad):
    a, b = _pair(gen, gt, cfg)
    values, grad = pcl_batch(a.reshape(1, -1), project_histograms(b, cfg.plan), cfg, need_grad)
    return LossValue(float(values[0]), None if grad is None else grad[0].reshape(a.shape))


def pcl_wdl(gen, gt, cfg: PclConfig, need_grad: bool = False) -> LossValue:
    if cfg.variant != "wdl":
        cfg = PclConfig(cfg.plan, "wdl", cfg.epsilon)
    return _single(gen, gt, cfg, need_grad)


def pcl_kl(gen, gt, cfg: PclConfig, need_grad: bool = False) -> LossValue:
    if cfg.variant != "kl":
        cfg = PclConfig(cfg.plan, "kl", cfg.epsilon)
    return _single(gen, gt, cfg, need_grad)


def pcl(gen, gt, cfg: PclConfig, need_grad: bool = False) -> LossValue:
    return _single(gen, gt, cfg, need_grad)


def reconstruction_batch(gen: np.ndarray, gt: np.ndarray, gt_hist: np.ndarray | None,
                         lam: float, cfg: PclConfig, need_grad: bool = True):
    """Per-sample ``mean|gen - gt| + lam * pcl``.

    Returns (l1 (n,), pcl (n,), grad (n, H*W) or None).  With ``lam == 0`` the
    projection is skipped entirely.
    """
    diff = gen - gt
    n_pix = gen.shape[1]
    l1 = np.abs(diff).sum(axis=1) / n_pix
    if lam != 0.0:
        if gt_hist is None:
            gt_hist = project_histograms(gt, cfg.plan)
        p_vals, p_grad = pcl_batch(gen, gt_hist, cfg, need_grad)
    else:
        p_vals, p_grad = np.zeros(gen.shape[0]), None
    if not need_grad:
        return l1, p_vals, None
    grad = np.sign(diff) / n_pix
    if p_grad is not None:
        grad = grad + lam * p_grad
    return l1, p_vals, grad


def reconstruction_loss(gen, gt, lam: float | None, cfg: PclConfig, need_grad: bool = False) -> LossValue:
    """L1 image loss plus ``lam`` times the projected character loss."""
    if lam is None:
        lam = default_lambda(cfg.variant)
    a, b = _pair(gen, gt, cfg)
    l1, p, grad = reconstruction_batch(a.reshape(1, -1), b.reshape(1, -1), None, lam, cfg, need_grad)
    value = float(l1[0] + lam * p[0])
    return LossValue(value, None if grad is None else grad[0].reshape(a.shape))
