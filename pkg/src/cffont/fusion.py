"""Content fusion: per-font weights over basis fonts and fused content features."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cluster import FontContentProfile
from .errors import ShapeMismatchError, ValidationError

DEFAULT_TAU = 0.3


@dataclass(frozen=True, eq=False)
class FusionWeights:
    font_id: str
    weights: np.ndarray
    tau: float
    distances: np.ndarray | None = None

    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log(w)).sum())

    def argmax(self) -> int:
        return int(np.argmax(self.weights))


def weights_from_distances(distances, tau: float = DEFAULT_TAU, normalize: bool = True) -> np.ndarray:
    """``softmax(-d / tau)``, with ``d`` first divided by its mean when ``normalize``."""
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ValidationError("need a non-empty vector of basis distances")
    if not tau > 0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    if normalize:
        mean = d.mean()
        d = d / mean if mean > 0 else np.zeros_like(d)
    z = -d / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def fusion_weights(target: FontContentProfile, basis_profiles: Sequence[FontContentProfile],
                   tau: float = DEFAULT_TAU) -> FusionWeights:
    if len(basis_profiles) == 0:
        raise ValidationError("empty basis")
    if not tau > 0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    t = target.concatenated
    for b in basis_profiles:
        if b.concatenated.shape != t.shape:
            raise ShapeMismatchError(f"profile of {b.font_id} has a different length than {target.font_id}")
    d = np.array([np.abs(t - b.concatenated).sum() for b in basis_profiles])
    return FusionWeights(target.font_id, weights_from_distances(d, tau), tau, d)


def one_hot_weights(fw: FusionWeights) -> FusionWeights:
    """Nearest-basis retrieval expressed as fusion weights."""
    if fw.distances is None:
        raise ValidationError("retrieval weights need basis distances")
    w = np.zeros_like(fw.weights)
    w[int(np.argmin(fw.distances))] = 1.0
    return FusionWeights(fw.font_id, w, 0.0, fw.distances)


def fuse_content(weights: FusionWeights | np.ndarray, basis_features) -> np.ndarray:
    """Convex combination of basis content features.

    ``basis_features``: (M, Dc) for one character, or (M, n, Dc) for several;
    the same font-level weights are applied to every character.
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    feats = np.asarray(basis_features, dtype=np.float64)
    if feats.shape[0] != w.shape[0]:
        raise ShapeMismatchError(f"{w.shape[0]} weights but {feats.shape[0]} basis features")
    out = np.zeros(feats.shape[1:])
    for wm, fm in zip(w, feats):
        out += wm * fm
    return out


def weight_report(all_weights: Sequence[FusionWeights], basis_ids: Sequence[str], path=None) -> str:
    """TSV of weight vectors with entropy and argmax basis per target font."""
    lines = ["font_id\t" + "\t".join(f"w_{b}" for b in basis_ids) + "\tentropy\targmax"]
    for fw in all_weights:
        if len(fw.weights) != len(basis_ids):
            raise ShapeMismatchError("weight vector length differs from basis size")
        cells = [fw.font_id] + [repr(float(x)) for x in fw.weights]
        cells += [repr(fw.entropy()), basis_ids[fw.argmax()]]
        lines.append("\t".join(cells))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def read_weights(path) -> tuple[list[str], dict]:
    """Read a weight table back: (basis ids, {font_id: weights})."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[0] != "font_id" or header[-2:] != ["entropy", "argmax"]:
            raise ValidationError(f"{path}: not a fusion weight table")
        basis = [h[2:] for h in header[1:-2]]
        table = {}
        for line in fh:
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            table[cells[0]] = np.array([float(x) for x in cells[1:1 + len(basis)]])
    return basis, table
