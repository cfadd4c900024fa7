"""Font profiles, distance embeddings and K-Medoids (PAM) basis selection."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ClusteringError, ValidationError
from .glyphgen import DatasetManifest
from .toymodel import ToyModelParams, encode_content_batch


@dataclass(frozen=True, eq=False)
class FontContentProfile:
    font_id: str
    concatenated: np.ndarray


@dataclass(frozen=True, eq=False)
class DistanceEmbedding:
    font_id: str
    distances: np.ndarray
    embedding: np.ndarray


@dataclass(frozen=True)
class BasisSet:
    """Selected medoid fonts plus the cluster every font was assigned to.

    ``assignment[i]`` is the position in ``font_ids`` of the medoid serving
    font ``all_fonts[i]``.
    """

    font_ids: tuple
    indices: tuple
    all_fonts: tuple
    assignment: tuple
    cost: float

    def cluster_sizes(self) -> list[int]:
        return [sum(1 for a in self.assignment if a == k) for k in range(len(self.font_ids))]


def profile_from_images(params: ToyModelParams, font_id: str, ref_images: np.ndarray) -> FontContentProfile:
    """Concatenate the content features of a font's reference glyphs (in order)."""
    feats = encode_content_batch(params, np.asarray(ref_images).reshape(len(ref_images), -1))
    return FontContentProfile(font_id, feats.reshape(-1))


def build_profiles(params: ToyModelParams, manifest: DatasetManifest,
                   fonts: Sequence[str] | None = None) -> list[FontContentProfile]:
    fonts = list(fonts) if fonts is not None else manifest.fonts()
    refs = manifest.reference_chars(fonts[0])
    profiles = []
    for f in fonts:
        imgs = np.stack([manifest.load(f, c, (params.height, params.width)).flat() for c in refs])
        profiles.append(profile_from_images(params, f, imgs))
    return profiles


def l1_distance_matrix(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    n = len(vectors)
    d = np.zeros((n, n))
    for i in range(n):
        d[i] = np.abs(vectors - vectors[i]).sum(axis=1)
    # exact symmetry regardless of summation order
    return np.triu(d, 1) + np.triu(d, 1).T


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def embed(profiles: Sequence[FontContentProfile], scale: float | str = 1.0) -> list[DistanceEmbedding]:
    """Map each font to the softmax of its L1 distances to all fonts.

    ``scale`` divides the distances before the softmax.  ``1.0`` is the plain
    softmax; ``"mean"`` uses the mean off-diagonal distance, which keeps the
    softmax from saturating when features are long.
    """
    if len(profiles) < 2:
        raise ValidationError("embedding needs at least 2 profiles")
    d = l1_distance_matrix(np.stack([p.concatenated for p in profiles]))
    if scale == "mean":
        off = d[~np.eye(len(d), dtype=bool)]
        scale = float(off.mean()) if off.mean() > 0 else 1.0
    elif not (isinstance(scale, (int, float)) and scale > 0):
        raise ValidationError(f"embedding scale must be positive or 'mean', got {scale!r}")
    e = softmax(d / scale, axis=1)
    return [DistanceEmbedding(p.font_id, d[i], e[i]) for i, p in enumerate(profiles)]


def euclidean_matrix(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    diff = points[:, None, :] - points[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=-1))
    return np.triu(d, 1) + np.triu(d, 1).T


def assignment_cost(dissim: np.ndarray, medoids: Sequence[int]) -> float:
    return float(dissim[:, list(medoids)].min(axis=1).sum())


def _build(dissim: np.ndarray, k: int, first: int) -> list[int]:
    n = len(dissim)
    medoids = [first]
    nearest = dissim[:, first].copy()
    while len(medoids) < k:
        best_gain, best = -1.0, -1
        for c in range(n):
            if c in medoids:
                continue
            gain = np.maximum(nearest - dissim[:, c], 0.0).sum()
            if gain > best_gain:
                best_gain, best = gain, c
        medoids.append(best)
        nearest = np.minimum(nearest, dissim[:, best])
    return medoids


def _swap(dissim: np.ndarray, medoids: list[int]) -> tuple[list[int], float]:
    n, k = len(dissim), len(medoids)
    cost = assignment_cost(dissim, medoids)
    while True:
        best_cost, best_swap = cost, None
        for i in range(k):
            for c in range(n):
                if c in medoids:
                    continue
                trial = medoids[:i] + [c] + medoids[i + 1:]
                tc = assignment_cost(dissim, trial)
                # relative margin guards against float noise cycling
                if tc < best_cost - 1e-12 * max(1.0, abs(best_cost)):
                    best_cost, best_swap = tc, (i, c)
        if best_swap is None:
            return medoids, cost
        medoids[best_swap[0]] = best_swap[1]
        cost = best_cost


def pam(dissim: np.ndarray, k: int, multistart: bool = True) -> tuple[list[int], float]:
    """Partitioning Around Medoids: greedy BUILD, then best-improvement SWAP.

    The classical BUILD starts from the most central point.  With
    ``multistart`` the BUILD+SWAP pair is also run from every other point as
    first medoid and the cheapest result kept; SWAP alone can stall in a local
    optimum on small instances.  Ties go to the earliest start, and within a
    run to the lowest index.  Returns (medoid indices, total cost).
    """
    dissim = np.asarray(dissim, dtype=np.float64)
    n = len(dissim)
    if k < 1 or k > n:
        raise ClusteringError(f"cannot pick {k} medoids from {n} points")
    n_distinct = len(np.unique(np.round(dissim, 12), axis=0))
    if n_distinct < k:
        raise ClusteringError(f"only {n_distinct} distinct points; cannot form {k} medoids")

    central = int(np.argmin(dissim.sum(axis=1)))
    starts = [central] + ([i for i in range(n) if i != central] if multistart and k > 1 else [])
    best, best_cost = None, np.inf
    for first in starts:
        medoids, cost = _swap(dissim, _build(dissim, k, first))
        if cost < best_cost - 1e-12 * max(1.0, abs(cost)):
            best, best_cost = medoids, cost
    return best, best_cost


def exhaustive_medoids(dissim: np.ndarray, k: int) -> tuple[list[int], float]:
    """Optimal medoids by brute force over all C(n, k) subsets (small n only)."""
    n = len(dissim)
    best, best_cost = None, np.inf
    for combo in itertools.combinations(range(n), k):
        c = assignment_cost(dissim, combo)
        if c < best_cost:
            best, best_cost = list(combo), c
    return best, best_cost


def select_basis(embeddings: Sequence[DistanceEmbedding], m: int = 10) -> BasisSet:
    n = len(embeddings)
    if m > n:
        raise ClusteringError(f"requested {m} basis fonts but only {n} fonts are available")
    points = np.stack([e.embedding for e in embeddings])
    dissim = euclidean_matrix(points)
    medoids, cost = pam(dissim, m)
    assignment = tuple(int(a) for a in np.argmin(dissim[:, medoids], axis=1))
    ids = tuple(embeddings[i].font_id for i in medoids)
    return BasisSet(ids, tuple(medoids), tuple(e.font_id for e in embeddings), assignment, cost)


BASIS_HEADER = ("rank", "font_id", "cluster_size")


def write_basis(basis: BasisSet, path) -> None:
    sizes = basis.cluster_sizes()
    order = sorted(range(len(basis.font_ids)), key=lambda k: (-sizes[k], basis.indices[k]))
    with open(path, "w") as fh:
        fh.write("\t".join(BASIS_HEADER) + "\n")
        for rank, k in enumerate(order, start=1):
            fh.write(f"{rank}\t{basis.font_ids[k]}\t{sizes[k]}\n")


def read_basis_ids(path) -> list[str]:
    """Basis font ids in rank order."""
    with open(path) as fh:
        header = tuple(fh.readline().rstrip("\n").split("\t"))
        if header != BASIS_HEADER:
            raise ValidationError(f"{path}: bad basis table header {header}")
        return [line.split("\t")[1] for line in fh if line.strip()]


def write_distance_matrix(embeddings: Sequence[DistanceEmbedding], path) -> None:
    with open(path, "w") as fh:
        fh.write("font_id\t" + "\t".join(e.font_id for e in embeddings) + "\n")
        for e in embeddings:
            fh.write(e.font_id + "\t" + "\t".join(repr(float(x)) for x in e.distances) + "\n")


def pixel_medoid(images: np.ndarray) -> int:
    """Index of the 1-medoid of fonts under L1 distance of raw reference glyphs.

    ``images``: (n_fonts, ...) any trailing shape.
    """
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    return int(np.argmin(l1_distance_matrix(flat).sum(axis=1)))
