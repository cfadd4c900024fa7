"""Central finite-difference checks for the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pcl import PclConfig, pcl
from .toymodel import PARAM_ORDER, Batch, batch_loss, init_params, loss_and_grad

DEFAULT_STEP = 1e-4
DEFAULT_TOL = 1e-4
# the model loss has |y - t| kinks that a 1e-4 step can straddle
MODEL_STEP = 1e-6


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def central_difference(f, x: np.ndarray, index, step: float = DEFAULT_STEP) -> float:
    """(f(x + h e_i) - f(x - h e_i)) / 2h, restoring ``x`` afterwards."""
    old = x[index]
    x[index] = old + step
    up = f()
    x[index] = old - step
    down = f()
    x[index] = old
    return (up - down) / (2.0 * step)


@dataclass
class GradCheckResult:
    name: str
    errors: list = field(default_factory=list)
    tol: float = DEFAULT_TOL

    def extend(self, errs):
        self.errors.extend(float(e) for e in np.ravel(errs))

    @property
    def n_coords(self) -> int:
        return len(self.errors)

    @property
    def fraction_ok(self) -> float:
        if not self.errors:
            return float("nan")
        return float(np.mean(np.asarray(self.errors) < self.tol))

    @property
    def worst(self) -> float:
        return max(self.errors) if self.errors else float("nan")

    def passed(self, required: float = 0.99) -> bool:
        return self.n_coords > 0 and self.fraction_ok >= required


def random_glyph_pair(rng: np.random.Generator, size: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Two random images with pixels in (0.1, 0.9), so every direction has mass."""
    gen = rng.uniform(0.1, 0.9, (size, size))
    gt = rng.uniform(0.1, 0.9, (size, size))
    return gen, gt


def check_pcl(variant: str = "wdl", n_cases: int = 20, size: int = 16, n_directions: int = 12,
              seed: int = 0, step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL) -> GradCheckResult:
    """Every pixel coordinate of ``n_cases`` random pairs."""
    cfg = PclConfig.for_size(size, size, variant, n_directions)
    result = GradCheckResult(f"pc-{variant}", tol=tol)
    for case in range(n_cases):
        gen, gt = random_glyph_pair(np.random.default_rng([seed, case]), size)
        analytic = pcl(gen, gt, cfg, need_grad=True).gradient
        numeric = np.empty_like(gen)
        for idx in np.ndindex(gen.shape):
            numeric[idx] = central_difference(lambda: pcl(gen, gt, cfg).value, gen, idx, step)
        result.extend(relative_error(analytic, numeric))
    return result


def _model_case(rng, size, content_dim, style_dim, n_samples=4, n_refs=3):
    params = init_params(size, size, content_dim, style_dim, seed=int(rng.integers(2**31)))
    # larger decoder weights so every gradient path carries signal
    params.Wd[:] = rng.normal(0.0, 0.5, params.Wd.shape)
    params.Gw[:] = rng.normal(0.0, 0.5, params.Gw.shape)
    params.Bw[:] = rng.normal(0.0, 0.5, params.Bw.shape)
    hw = size * size
    batch = Batch(
        targets=rng.uniform(0.05, 1.0, (n_samples, hw)),
        style_index=rng.integers(0, 2, n_samples),
        content_images=rng.uniform(0.0, 1.0, (n_samples, hw)),
        style_refs=rng.uniform(0.0, 1.0, (2, n_refs, hw)),
    )
    return params, batch


def check_model(n_cases: int = 20, size: int = 16, content_dim: int = 6, style_dim: int = 4,
                coords_per_group: int = 8, variant: str = "wdl", lam: float = 0.5, seed: int = 0,
                step: float = MODEL_STEP, tol: float = DEFAULT_TOL) -> GradCheckResult:
    """Sampled coordinates of every parameter array plus the content and style inputs.

    ``lam`` is larger than the training default so the projected term is not
    swamped by the L1 term in the check.
    """
    cfg = PclConfig.for_size(size, size, variant, 12)
    result = GradCheckResult(f"model-{variant}", tol=tol)
    for case in range(n_cases):
        rng = np.random.default_rng([seed, case, 7])
        params, batch = _model_case(rng, size, content_dim, style_dim)
        grads = loss_and_grad(params, batch, lam, cfg)
        f = lambda: batch_loss(params, batch, lam, cfg)
        for name in PARAM_ORDER:
            arr = getattr(params, name)
            picks = rng.choice(arr.size, min(coords_per_group, arr.size), replace=False)
            for flat in picks:
                idx = np.unravel_index(flat, arr.shape)
                result.extend(relative_error(grads.params[name][idx], central_difference(f, arr, idx, step)))
        # input gradients: content features and style vectors
        c = np.tanh(batch.content_images @ params.Wc.T + params.bc)
        s_sets = np.tanh(batch.style_refs @ params.Ws.T + params.bs).mean(axis=1)
        feat_batch = Batch(batch.targets, batch.style_index, content_features=c, style_vectors=s_sets)
        g2 = loss_and_grad(params, feat_batch, lam, cfg, param_grads=False)
        f2 = lambda: batch_loss(params, feat_batch, lam, cfg)
        for arr, analytic in ((c, g2.content), (s_sets, g2.style)):
            picks = rng.choice(arr.size, min(coords_per_group, arr.size), replace=False)
            for flat in picks:
                idx = np.unravel_index(flat, arr.shape)
                result.extend(relative_error(analytic[idx], central_difference(f2, arr, idx, step)))
    return result
