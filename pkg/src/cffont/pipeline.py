"""End-to-end run: dataset -> stage-1 training -> profiles -> basis -> weights ->
stage-2 training -> style refinement -> evaluation.

Each stage writes fixed filenames under ``RunConfig.out_dir`` and is skipped
when its outputs already exist, unless forced.
"""
from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import (FontContentProfile, embed, pixel_medoid, profile_from_images, read_basis_ids,
                      select_basis, write_basis, write_distance_matrix)
from .config import RunConfig
from .errors import CFFontError, StageError, ValidationError
from .experiments import CONDITIONS, AblationResult
from .fusion import FusionWeights, fuse_content, fusion_weights, one_hot_weights, read_weights, weight_report
from .glyphgen import DatasetManifest, build_dataset, default_alphabet
from .isr import IsrConfig, init_style, load_style, refine, save_style
from .metrics import MetricReport
from .toymodel import (Schedule, TrainingSet, decode_flat, encode_content_batch, init_decoder_bias, init_params,
                       load_checkpoint, save_checkpoint, train_stage)

log = logging.getLogger(__name__)

STAGES = ("dataset", "stage1", "profiles", "basis", "weights", "stage2", "isr", "eval")
ARTIFACTS = {
    "dataset": "dataset/manifest.tsv",
    "stage1": "stage1.cfkt",
    "profiles": "profiles.tsv",
    "basis": "basis.tsv",
    "weights": "weights.tsv",
    "stage2": "stage2.cfkt",
    "isr": "isr.tsv",
    "eval": "eval.tsv",
}


@dataclass
class RunContext:
    """Lazily loaded artifacts of one run directory."""

    config: RunConfig
    root: Path = field(init=False)
    iterations_run: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.root = Path(self.config.out_dir)

    def path(self, stage: str) -> Path:
        return self.root / ARTIFACTS[stage]

    def done(self, stage: str) -> bool:
        return self.path(stage).exists()

    def require(self, stage: str) -> Path:
        p = self.path(stage)
        if not p.exists():
            raise ValidationError(f"missing artifact {p}; run the '{stage}' stage first")
        return p

    # -- data ---------------------------------------------------------------
    @property
    def manifest(self) -> DatasetManifest:
        if "manifest" not in self._cache:
            self._cache["manifest"] = DatasetManifest.read(self.require("dataset"))
        return self._cache["manifest"]

    def split(self) -> tuple[list, list]:
        fonts = self.manifest.fonts()
        n_held = self.config.n_heldout
        if len(fonts) - n_held < self.config.basis_size:
            raise ValidationError("not enough training fonts for the requested basis size")
        return fonts[:len(fonts) - n_held], fonts[len(fonts) - n_held:]

    @property
    def chars(self) -> list:
        return self.manifest.chars(self.manifest.fonts()[0])

    @property
    def reference_chars(self) -> list:
        return self.manifest.reference_chars()

    @property
    def eval_chars(self) -> list:
        refs = set(self.reference_chars)
        return [c for c in self.chars if c not in refs]

    def font_images(self, font_id: str) -> np.ndarray:
        key = ("img", font_id)
        if key not in self._cache:
            size = (self.config.image_size, self.config.image_size)
            self._cache[key] = np.stack([self.manifest.load(font_id, c, size).flat() for c in self.chars])
        return self._cache[key]

    def ref_images(self, font_id: str) -> np.ndarray:
        idx = [self.chars.index(c) for c in self.reference_chars]
        return self.font_images(font_id)[idx]

    @property
    def training_set(self) -> TrainingSet:
        if "train" not in self._cache:
            train, _ = self.split()
            imgs = np.stack([self.font_images(f) for f in train])
            ref_idx = np.array([self.chars.index(c) for c in self.reference_chars])
            self._cache["train"] = TrainingSet(train, self.chars, imgs, ref_idx,
                                               self.config.image_size, self.config.image_size)
        return self._cache["train"]

    def source_font(self) -> str:
        """Training font closest (pixel L1) to all others on the reference glyphs."""
        ts = self.training_set
        return ts.fonts[pixel_medoid(ts.ref_images)]

    def schedule(self) -> Schedule:
        c = self.config
        return Schedule(stage1_iters=c.stage1_iters, stage2_iters=c.stage2_iters, batch_size=c.batch_size,
                        lam=c.weight, variant=c.variant, n_directions=c.directions, optimizer=c.optimizer,
                        lr=c.lr, weight_decay=c.weight_decay, seed=c.seed)

    # -- model artifacts ----------------------------------------------------
    def params(self, stage: str):
        if stage not in self._cache:
            self._cache[stage] = load_checkpoint(self.require(stage))
        return self._cache[stage]

    def profiles(self) -> dict:
        if "profiles" not in self._cache:
            self._cache["profiles"] = read_profiles(self.require("profiles"))
        return self._cache["profiles"]

    def basis_ids(self) -> list:
        return read_basis_ids(self.require("basis"))

    def weights(self) -> dict:
        basis, table = read_weights(self.require("weights"))
        if basis != self.basis_ids():
            raise ValidationError("weights.tsv was computed for a different basis set")
        return table

    def basis_features(self, params, char_ids) -> np.ndarray:
        """Content features of the basis fonts' glyphs: (M, len(char_ids), Dc)."""
        idx = [self.chars.index(c) for c in char_ids]
        return np.stack([encode_content_batch(params, self.font_images(b)[idx]) for b in self.basis_ids()])


def write_profiles(profiles, path) -> None:
    with open(path, "w") as fh:
        fh.write("font_id\tvalues\n")
        for p in profiles:
            fh.write(p.font_id + "\t" + " ".join(repr(float(x)) for x in p.concatenated) + "\n")


def read_profiles(path) -> dict:
    out = {}
    with open(path) as fh:
        if fh.readline().rstrip("\n") != "font_id\tvalues":
            raise ValidationError(f"{path}: bad profile table header")
        for line in fh:
            if line.strip():
                font, values = line.rstrip("\n").split("\t")
                out[font] = FontContentProfile(font, np.array([float(x) for x in values.split()]))
    return out


# --- stages --------------------------------------------------------------------

def stage_dataset(ctx: RunContext):
    c = ctx.config
    root = ctx.root / "dataset"
    if root.exists():
        shutil.rmtree(root)
    build_dataset(c.n_fonts, default_alphabet(), root, seed=c.seed, size=c.image_size,
                  ranges=c.font_ranges())
    ctx._cache.clear()


def stage_stage1(ctx: RunContext):
    c = ctx.config
    data = ctx.training_set
    params = init_params(c.image_size, c.image_size, c.content_dim, c.style_dim, seed=c.seed)
    init_decoder_bias(params, data.images)
    src = data.fonts.index(ctx.source_font())
    sched = ctx.schedule()
    train_log = train_stage(params, data, sched, 1, source_font=src)
    ctx.iterations_run += sched.stage1_iters
    save_checkpoint(params, ctx.path("stage1"))
    train_log.write(ctx.root / "stage1_log.tsv")
    ctx._cache.pop("stage1", None)


def stage_profiles(ctx: RunContext):
    params = ctx.params("stage1")
    profiles = [profile_from_images(params, f, ctx.ref_images(f)) for f in ctx.manifest.fonts()]
    write_profiles(profiles, ctx.path("profiles"))
    ctx._cache.pop("profiles", None)


def stage_basis(ctx: RunContext):
    train, _ = ctx.split()
    prof = ctx.profiles()
    emb = embed([prof[f] for f in train], ctx.config.embed_scale_value)
    basis = select_basis(emb, ctx.config.basis_size)
    write_basis(basis, ctx.path("basis"))
    write_distance_matrix(emb, ctx.root / "distances.tsv")


def compute_weights(ctx: RunContext, tau: float | None = None) -> list[FusionWeights]:
    tau = ctx.config.tau if tau is None else tau
    prof = ctx.profiles()
    basis = [prof[b] for b in ctx.basis_ids()]
    return [fusion_weights(prof[f], basis, tau) for f in ctx.manifest.fonts()]


def stage_weights(ctx: RunContext):
    weight_report(compute_weights(ctx), ctx.basis_ids(), ctx.path("weights"))


def stage_stage2(ctx: RunContext):
    params = ctx.params("stage1").copy()
    data = ctx.training_set
    weights = ctx.weights()
    feats = ctx.basis_features(params, ctx.chars)
    fused = np.stack([fuse_content(weights[f], feats) for f in data.fonts])
    sched = ctx.schedule()
    train_log = train_stage(params, data, sched, 2, fused_content=fused)
    ctx.iterations_run += sched.stage2_iters
    save_checkpoint(params, ctx.path("stage2"))
    train_log.write(ctx.root / "stage2_log.tsv")
    ctx._cache.pop("stage2", None)


def isr_config(ctx: RunContext) -> IsrConfig:
    c = ctx.config
    return IsrConfig(epochs=c.isr_epochs, step=c.isr_step, lam=c.weight, variant=c.variant,
                     n_directions=c.directions)


def refine_font(ctx: RunContext, font_id: str, params=None, config: IsrConfig | None = None):
    params = params if params is not None else ctx.params("stage2")
    refs = ctx.ref_images(font_id)
    weights = ctx.weights()[font_id]
    contents = fuse_content(weights, ctx.basis_features(params, ctx.reference_chars))
    s0 = init_style(params, refs)
    return refine(params, s0, refs, contents, config or isr_config(ctx))


def stage_isr(ctx: RunContext):
    _, held = ctx.split()
    style_dir = ctx.root / "styles"
    style_dir.mkdir(exist_ok=True)
    lines = ["font_id\tepoch\tloss"]
    for f in held:
        run = refine_font(ctx, f)
        save_style(run.refined, style_dir / f"{f}.cfsv")
        lines += [f"{f}\t{e}\t{v!r}" for e, v in enumerate(run.trace)]
    ctx.path("isr").write_text("\n".join(lines) + "\n")


def generate(ctx: RunContext, params, font_id: str, char_ids, weights, style) -> np.ndarray:
    contents = fuse_content(weights, ctx.basis_features(params, char_ids))
    return decode_flat(params, contents, np.repeat(np.asarray(style)[None, :], len(char_ids), axis=0))


def stage_eval(ctx: RunContext):
    params = ctx.params("stage2")
    _, held = ctx.split()
    weights = ctx.weights()
    report = MetricReport()
    size = ctx.config.image_size
    idx = [ctx.chars.index(c) for c in ctx.eval_chars]
    for f in held:
        style = load_style(ctx.root / "styles" / f"{f}.cfsv", params.style_dim)
        gen = generate(ctx, params, f, ctx.eval_chars, weights[f], style)
        truth = ctx.font_images(f)[idx]
        for c, g, t in zip(ctx.eval_chars, gen, truth):
            report.add(f"{f}/{c}", g.reshape(size, size), t.reshape(size, size))
    ctx.path("eval").write_text(report.to_tsv())


STAGE_FUNCS = {
    "dataset": stage_dataset, "stage1": stage_stage1, "profiles": stage_profiles, "basis": stage_basis,
    "weights": stage_weights, "stage2": stage_stage2, "isr": stage_isr, "eval": stage_eval,
}


def run_stage(ctx: RunContext, stage: str, force: bool = False) -> bool:
    """Run one stage; returns False when it was skipped because outputs exist."""
    if ctx.done(stage) and not force:
        log.info("stage %s: up to date", stage)
        return False
    log.info("stage %s: running", stage)
    ctx.root.mkdir(parents=True, exist_ok=True)
    try:
        STAGE_FUNCS[stage](ctx)
    except ValidationError:
        raise
    except (CFFontError, OSError, ValueError, KeyError) as exc:
        raise StageError(stage, exc) from exc
    return True


def run_pipeline(config: RunConfig, force: bool = False, until: str | None = None) -> RunContext:
    ctx = RunContext(config)
    ctx.root.mkdir(parents=True, exist_ok=True)
    stamp = ctx.root / "config.txt"
    if stamp.exists() and stamp.read_text() != config.to_text() and not force:
        log.warning("config differs from the one recorded in %s; rebuilding every stage", stamp)
        force = True
    stamp.write_text(config.to_text())
    rerun = force
    for stage in STAGES:
        # a rebuilt stage invalidates everything after it
        rerun = run_stage(ctx, stage, force=rerun) or rerun
        if stage == until:
            break
    return ctx


# --- ablation -------------------------------------------------------------------

def run_ablation(ctx: RunContext, tau: float | None = None, use_isr: bool = False,
                 fonts=None) -> AblationResult:
    """Target fonts under three content sources, same model and style vector.

    source: the stage-1 source font's glyphs; retrieval: nearest basis font
    (one-hot weights); fusion: weighted basis features.  Targets default to
    the held-out fonts.
    """
    params = ctx.params("stage2")
    held = list(fonts) if fonts is not None else ctx.split()[1]
    if not held:
        raise ValidationError("ablation needs held-out fonts (n_heldout > 0)")
    unknown = [f for f in held if f not in ctx.manifest.fonts()]
    if unknown:
        raise ValidationError(f"unknown target fonts: {unknown}")
    size = ctx.config.image_size
    tau = ctx.config.tau if tau is None else tau
    prof = ctx.profiles()
    basis = [prof[b] for b in ctx.basis_ids()]
    src = ctx.source_font()
    idx = [ctx.chars.index(c) for c in ctx.eval_chars]
    basis_feats = ctx.basis_features(params, ctx.eval_chars)
    src_feats = encode_content_batch(params, ctx.font_images(src)[idx])
    result = AblationResult({c: MetricReport() for c in CONDITIONS}, {c: {} for c in CONDITIONS})
    for f in held:
        fw = fusion_weights(prof[f], basis, tau)
        if use_isr:
            style = load_style(ctx.root / "styles" / f"{f}.cfsv", params.style_dim)
        else:
            style = init_style(params, ctx.ref_images(f))
        styles = np.repeat(style[None, :], len(idx), axis=0)
        contents = {
            "source": src_feats,
            "retrieval": fuse_content(one_hot_weights(fw), basis_feats),
            "fusion": fuse_content(fw, basis_feats),
        }
        truth = ctx.font_images(f)[idx]
        for cond in CONDITIONS:
            gen = decode_flat(params, contents[cond], styles)
            per = MetricReport()
            for c, g, t in zip(ctx.eval_chars, gen, truth):
                g2, t2 = g.reshape(size, size), t.reshape(size, size)
                per.add(f"{f}/{c}", g2, t2)
                result.reports[cond].add(f"{f}/{c}", g2, t2)
            result.per_font[cond][f] = per.means()
    return result
