"""Inference-time refinement of a font's style vector with all weights frozen."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, ImageFormatError, TrainingDivergedError, ValidationError
from .pcl import PclConfig, default_lambda
from .projection import project_histograms
from .toymodel import Batch, ToyModelParams, batch_loss, encode_style_batch, loss_and_grad

STYLE_MAGIC = b"CFSV"


@dataclass(frozen=True)
class IsrConfig:
    epochs: int = 10
    step: float = 0.05
    lam: float | None = None
    variant: str = "wdl"
    n_directions: int = 12

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.step < 0:
            raise ValidationError("step size must be >= 0")

    @property
    def weight(self) -> float:
        return default_lambda(self.variant) if self.lam is None else self.lam


@dataclass
class RefinementRun:
    initial: np.ndarray
    refined: np.ndarray
    trace: list = field(default_factory=list)
    config: IsrConfig = field(default_factory=IsrConfig)
    best_loss: float = float("nan")

    @property
    def initial_loss(self) -> float:
        return self.trace[0]


def init_style(params: ToyModelParams, reference_imgs) -> np.ndarray:
    """Mean of the style encoder over the reference glyphs."""
    imgs = [np.asarray(getattr(r, "pixels", r), dtype=np.float64).reshape(-1) for r in reference_imgs]
    if not imgs:
        raise ValidationError("need at least one reference glyph")
    return encode_style_batch(params, np.stack(imgs)).mean(axis=0)


def _refs_batch(s, contents, targets, hist):
    return Batch(targets=targets, style_index=np.zeros(len(targets), dtype=np.intp),
                 content_features=contents, style_vectors=s[None, :], target_hist=hist)


def refine(params: ToyModelParams, s0, reference_imgs, fused_contents, config: IsrConfig = IsrConfig()
           ) -> RefinementRun:
    """Gradient descent on the style vector alone.

    One epoch is one full-batch step over all reference glyphs.  When a step
    raises the loss the step size is halved and the step retried once; if it
    still does not help the iterate stays put.  The best vector seen is
    returned, so the final loss never exceeds the initial one.
    """
    s = np.array(s0, dtype=np.float64)
    if s.shape != (params.style_dim,) or not np.all(np.isfinite(s)):
        raise ValidationError(f"initial style must be a finite vector of length {params.style_dim}")
    targets = np.stack([np.asarray(getattr(r, "pixels", r), dtype=np.float64).reshape(-1)
                        for r in reference_imgs])
    contents = np.asarray(fused_contents, dtype=np.float64)
    if contents.shape != (len(targets), params.content_dim):
        raise ValidationError(f"need one content feature per reference glyph, got {contents.shape}")
    cfg = PclConfig.for_size(params.height, params.width, config.variant, config.n_directions)
    lam = config.weight
    hist = project_histograms(targets, cfg.plan) if lam != 0 else None

    def loss(v):
        value = batch_loss(params, _refs_batch(v, contents, targets, hist), lam, cfg)
        if not np.isfinite(value):
            raise TrainingDivergedError(len(trace), "isr")
        return value

    trace = []
    current = loss(s)
    trace.append(current)
    best, best_s = current, s.copy()
    step = config.step
    for _ in range(config.epochs):
        g = loss_and_grad(params, _refs_batch(s, contents, targets, hist), lam, cfg, param_grads=False).style[0]
        cand = s - step * g
        cand_loss = loss(cand)
        if cand_loss > current:
            step *= 0.5
            cand = s - step * g
            cand_loss = loss(cand)
            if cand_loss > current:
                cand, cand_loss = s, current
        s, current = cand, cand_loss
        trace.append(current)
        if current < best:
            best, best_s = current, s.copy()
    return RefinementRun(np.array(s0, dtype=np.float64), best_s, trace, config, best)


def save_style(s, path) -> None:
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(STYLE_MAGIC)
        fh.write(struct.pack("<I", s.size))
        fh.write(s.astype("<f8").tobytes())


def load_style(path, expected_dim: int | None = None) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != STYLE_MAGIC:
        raise ImageFormatError(f"{path}: not a style signature (bad magic)")
    if len(buf) < 8:
        raise ImageFormatError(f"{path}: truncated style header")
    (dim,) = struct.unpack_from("<I", buf, 4)
    if len(buf) != 8 + 8 * dim:
        raise ImageFormatError(f"{path}: payload length does not match dimension {dim}")
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatchError(f"{path}: style has {dim} dimensions, model expects {expected_dim}")
    return np.frombuffer(buf[8:], dtype="<f8").astype(np.float64)
