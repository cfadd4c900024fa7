"""Analysis experiments: glyph retrieval by L1 vs projected losses, and the
content-source ablation (fixed source font, nearest basis, full fusion)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .glyphgen import (CharSkeleton, GlyphImage, SyntheticFontSpec, default_alphabet, random_font_specs,
                       render_glyph)
from .metrics import MetricReport
from .pcl import PclConfig, pcl_from_histograms
from .projection import make_plan, project_histograms

RETRIEVAL_METRICS = ("l1", "pc-wdl", "pc-kl")


def _stack(images) -> np.ndarray:
    return np.stack([np.asarray(getattr(im, "pixels", im), dtype=np.float64) for im in images])


def distances_to_query(query, candidates: Sequence, metric: str, n_directions: int = 12) -> np.ndarray:
    """Distance of every candidate to the query; the query plays ground truth."""
    if metric not in RETRIEVAL_METRICS:
        raise ValidationError(f"unknown retrieval metric {metric!r}; expected one of {RETRIEVAL_METRICS}")
    if len(candidates) == 0:
        raise ValidationError("empty candidate set")
    q = np.asarray(getattr(query, "pixels", query), dtype=np.float64)
    cands = _stack(candidates)
    if cands.shape[1:] != q.shape:
        raise ValidationError(f"candidates {cands.shape[1:]} and query {q.shape} differ in size")
    if metric == "l1":
        return np.abs(cands - q).reshape(len(cands), -1).mean(axis=1)
    plan = make_plan(q.shape[0], q.shape[1], n_directions)
    cfg = PclConfig(plan, "wdl" if metric == "pc-wdl" else "kl")
    h_c = project_histograms(cands.reshape(len(cands), -1), plan)
    h_q = np.broadcast_to(project_histograms(q.reshape(1, -1), plan), h_c.shape)
    values, _ = pcl_from_histograms(h_c, h_q, cfg, need_grad=False)
    return values


def retrieve(query, candidates: Sequence, ids: Sequence[str], metric: str = "pc-wdl", k: int = 10,
             n_directions: int = 12) -> list[tuple[str, float]]:
    """Top-k candidate ids by ascending distance (stable for ties)."""
    if len(ids) != len(candidates):
        raise ValidationError("need one id per candidate")
    d = distances_to_query(query, candidates, metric, n_directions)
    order = np.argsort(d, kind="stable")[:max(k, 0)]
    return [(ids[i], float(d[i])) for i in order]


def format_ranking(ranking, metric) -> str:
    lines = ["rank\tcandidate\t" + metric]
    lines += [f"{r}\t{cid}\t{dist:.10f}" for r, (cid, dist) in enumerate(ranking, start=1)]
    return "\n".join(lines) + "\n"


# --- constructed retrieval benchmark ---------------------------------------------

@dataclass
class RetrievalTrial:
    query: GlyphImage
    candidates: list
    same_skeleton: np.ndarray


@dataclass(frozen=True)
class RetrievalBenchmark:
    """Query glyph vs. the same skeleton in other fonts, plus distractors.

    Positives render the query's skeleton in independently drawn fonts, so
    their strokes are displaced by scale, slant and thickness changes.
    Distractors render other skeletons in the query's own font.
    """

    n_trials: int = 50
    n_positive: int = 5
    n_distractor: int = 5
    size: int = 80
    seed: int = 0

    def trial(self, t: int, alphabet: Sequence[CharSkeleton] | None = None) -> RetrievalTrial:
        alphabet = list(alphabet) if alphabet is not None else default_alphabet()
        rng = np.random.default_rng([self.seed, t])
        picks = rng.choice(len(alphabet), 1 + self.n_distractor, replace=False)
        skel = alphabet[picks[0]]
        specs = random_font_specs(1 + self.n_positive, seed=int(rng.integers(2**31)))
        q_spec = specs[0]
        query = render_glyph(q_spec, skel, self.size)
        cands, same = [], []
        for spec in specs[1:]:
            cands.append(render_glyph(spec, skel, self.size))
            same.append(True)
        for i in picks[1:]:
            cands.append(render_glyph(q_spec, alphabet[i], self.size))
            same.append(False)
        return RetrievalTrial(query, cands, np.array(same))

    def run(self, metrics: Sequence[str] = RETRIEVAL_METRICS) -> dict:
        """Fraction of trials whose top-1 candidate shares the query skeleton."""
        hits = {m: 0 for m in metrics}
        alphabet = default_alphabet()
        for t in range(self.n_trials):
            tr = self.trial(t, alphabet)
            for m in metrics:
                d = distances_to_query(tr.query, tr.candidates, m)
                hits[m] += bool(tr.same_skeleton[int(np.argmin(d))])
        return {m: hits[m] / self.n_trials for m in metrics}


# --- ablation ----------------------------------------------------------------------

CONDITIONS = ("source", "retrieval", "fusion")


@dataclass
class AblationResult:
    reports: dict = field(default_factory=dict)
    per_font: dict = field(default_factory=dict)

    def mean(self, condition: str, metric: str = "l1") -> float:
        return self.reports[condition].means()[metric]

    def to_tsv(self) -> str:
        lines = ["condition\tfont_id\tl1\trmse\tssim"]
        for cond in CONDITIONS:
            if cond not in self.per_font:
                continue
            for font, m in self.per_font[cond].items():
                lines.append(f"{cond}\t{font}\t{m['l1']:.10f}\t{m['rmse']:.10f}\t{m['ssim']:.10f}")
        for cond, rep in self.reports.items():
            m = rep.means()
            lines.append(f"{cond}\tMEAN[n={rep.count}]\t{m['l1']:.10f}\t{m['rmse']:.10f}\t{m['ssim']:.10f}")
        return "\n".join(lines) + "\n"
