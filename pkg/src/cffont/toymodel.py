"""A small content/style encoder-decoder with hand-written reverse mode.

    c = tanh(Wc x_content + bc)                      content feature (Dc)
    s = mean_q tanh(Ws x_q + bs)                     style vector (Ds)
    h = c * (Gw s + gb) + (Bw s + bb)                style modulation
    y = logistic(Wd h + bd)                          glyph, H*W pixels

Batches use row vectors: an (n, H*W) array is n flattened glyphs.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from .glyphgen import GlyphImage
from .errors import ImageFormatError, ShapeMismatchError, TrainingDivergedError, ValidationError
from .pcl import PclConfig, reconstruction_batch

log = logging.getLogger(__name__)

PARAM_ORDER = ("Wc", "bc", "Ws", "bs", "Gw", "gb", "Bw", "bb", "Wd", "bd")
CONTENT_ENCODER = ("Wc", "bc")
CHECKPOINT_MAGIC = b"CFKT"
CHECKPOINT_VERSION = 1


@dataclass
class ToyModelParams:
    height: int
    width: int
    Wc: np.ndarray
    bc: np.ndarray
    Ws: np.ndarray
    bs: np.ndarray
    Gw: np.ndarray
    gb: np.ndarray
    Bw: np.ndarray
    bb: np.ndarray
    Wd: np.ndarray
    bd: np.ndarray

    def __post_init__(self):
        for name, shape in self.expected_shapes().items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatchError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"parameter {name} has non-finite entries")
            setattr(self, name, arr)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def content_dim(self) -> int:
        return self.Wc.shape[0]

    @property
    def style_dim(self) -> int:
        return self.Ws.shape[0]

    def expected_shapes(self) -> dict:
        hw, dc, ds = self.height * self.width, self.Wc.shape[0], self.Ws.shape[0]
        return {"Wc": (dc, hw), "bc": (dc,), "Ws": (ds, hw), "bs": (ds,), "Gw": (dc, ds), "gb": (dc,),
                "Bw": (dc, ds), "bb": (dc,), "Wd": (hw, dc), "bd": (hw,)}

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_ORDER}

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(self.height, self.width, **{k: v.copy() for k, v in self.arrays().items()})

    def equals(self, other: "ToyModelParams") -> bool:
        return (self.height, self.width) == (other.height, other.width) and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in PARAM_ORDER)


def init_params(height: int, width: int, content_dim: int = 64, style_dim: int = 16,
                seed: int = 0) -> ToyModelParams:
    rng = np.random.default_rng(seed)
    hw = height * width
    enc_std = 2.0 / np.sqrt(hw)
    return ToyModelParams(
        height, width,
        Wc=rng.normal(0.0, enc_std, (content_dim, hw)), bc=np.zeros(content_dim),
        Ws=rng.normal(0.0, enc_std, (style_dim, hw)), bs=np.zeros(style_dim),
        Gw=rng.normal(0.0, 0.1, (content_dim, style_dim)), gb=np.ones(content_dim),
        Bw=rng.normal(0.0, 0.1, (content_dim, style_dim)), bb=np.zeros(content_dim),
        Wd=rng.normal(0.0, 0.01, (hw, content_dim)), bd=np.full(hw, -2.0),
    )


def init_decoder_bias(params: ToyModelParams, images: np.ndarray, floor: float = 0.01) -> None:
    """Set ``bd`` to the logit of the mean glyph so training starts at the average image."""
    mean = np.asarray(images, dtype=np.float64).reshape(-1, params.n_pixels).mean(axis=0)
    mean = np.clip(mean, floor, 1.0 - floor)
    params.bd[:] = np.log(mean / (1.0 - mean))


def zero_params(height: int, width: int, content_dim: int = 64, style_dim: int = 16) -> ToyModelParams:
    hw = height * width
    return ToyModelParams(
        height, width, Wc=np.zeros((content_dim, hw)), bc=np.zeros(content_dim),
        Ws=np.zeros((style_dim, hw)), bs=np.zeros(style_dim), Gw=np.zeros((content_dim, style_dim)),
        gb=np.zeros(content_dim), Bw=np.zeros((content_dim, style_dim)), bb=np.zeros(content_dim),
        Wd=np.zeros((hw, content_dim)), bd=np.zeros(hw))


def _logistic(z):
    # split on sign so large |z| never overflows exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _image_vector(params: ToyModelParams, img) -> np.ndarray:
    arr = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    if arr.shape not in ((params.height, params.width), (params.n_pixels,)):
        raise ShapeMismatchError(
            f"image of shape {arr.shape} does not match the model's {params.height}x{params.width}")
    return arr.reshape(-1)


def encode_content(params: ToyModelParams, img) -> np.ndarray:
    """Content feature of one glyph, shape (Dc,)."""
    return np.tanh(params.Wc @ _image_vector(params, img) + params.bc)


def encode_style(params: ToyModelParams, img) -> np.ndarray:
    """Style vector of one glyph, shape (Ds,)."""
    return np.tanh(params.Ws @ _image_vector(params, img) + params.bs)


def encode_content_batch(params: ToyModelParams, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or images.shape[1] != params.n_pixels:
        raise ShapeMismatchError(f"expected (n, {params.n_pixels}) images, got {images.shape}")
    return np.tanh(images @ params.Wc.T + params.bc)


def encode_style_batch(params: ToyModelParams, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or images.shape[1] != params.n_pixels:
        raise ShapeMismatchError(f"expected (n, {params.n_pixels}) images, got {images.shape}")
    return np.tanh(images @ params.Ws.T + params.bs)


def content_preactivation(params, img):
    return params.Wc @ _image_vector(params, img) + params.bc


def style_preactivation(params, img):
    return params.Ws @ _image_vector(params, img) + params.bs


def decode_flat(params: ToyModelParams, c: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Batched decode: c (n, Dc), s (n, Ds) -> (n, H*W)."""
    c = np.atleast_2d(c)
    s = np.atleast_2d(s)
    h = c * (s @ params.Gw.T + params.gb) + (s @ params.Bw.T + params.bb)
    return _logistic(h @ params.Wd.T + params.bd)


def decode(params: ToyModelParams, c, s):
    c = np.asarray(c, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if c.shape != (params.content_dim,) or s.shape != (params.style_dim,):
        raise ShapeMismatchError(f"decode expects c ({params.content_dim},) and s ({params.style_dim},)")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(s))):
        raise ValidationError("decode inputs must be finite")
    return GlyphImage(decode_flat(params, c, s).reshape(params.height, params.width))


# --- batched forward / backward ------------------------------------------------

@dataclass
class Batch:
    """One optimization batch.

    Exactly one of ``content_images`` / ``content_features`` is set, and exactly
    one of ``style_refs`` (k, Q, H*W) / ``style_vectors`` (k, Ds).  Sample ``i``
    uses style set ``style_index[i]``.
    """

    targets: np.ndarray
    style_index: np.ndarray
    content_images: np.ndarray | None = None
    content_features: np.ndarray | None = None
    style_refs: np.ndarray | None = None
    style_vectors: np.ndarray | None = None
    target_hist: np.ndarray | None = None

    def __post_init__(self):
        if (self.content_images is None) == (self.content_features is None):
            raise ValidationError("batch needs exactly one content source")
        if (self.style_refs is None) == (self.style_vectors is None):
            raise ValidationError("batch needs exactly one style source")


@dataclass
class Cache:
    c: np.ndarray
    s_items: np.ndarray | None
    s_sets: np.ndarray
    s: np.ndarray
    gam: np.ndarray
    h: np.ndarray
    y: np.ndarray


def forward(params: ToyModelParams, batch: Batch) -> Cache:
    if batch.content_images is not None:
        c = np.tanh(batch.content_images @ params.Wc.T + params.bc)
    else:
        c = batch.content_features
    if batch.style_refs is not None:
        k, q, hw = batch.style_refs.shape
        s_items = np.tanh(batch.style_refs.reshape(k * q, hw) @ params.Ws.T + params.bs).reshape(k, q, -1)
        s_sets = s_items.mean(axis=1)
    else:
        s_items = None
        s_sets = batch.style_vectors
    s = s_sets[batch.style_index]
    gam = s @ params.Gw.T + params.gb
    h = c * gam + (s @ params.Bw.T + params.bb)
    y = _logistic(h @ params.Wd.T + params.bd)
    return Cache(c, s_items, s_sets, s, gam, h, y)


@dataclass
class LossStats:
    l1: float
    pcl: float
    total: float


@dataclass
class Gradients:
    params: dict
    content: np.ndarray
    style: np.ndarray
    stats: LossStats


def backward(params: ToyModelParams, batch: Batch, cache: Cache, lam: float, cfg: PclConfig,
             frozen: Sequence[str] = (), param_grads: bool = True) -> Gradients:
    """Reverse-mode gradients of the batch-mean reconstruction loss.

    ``content`` is d loss / d c per sample; ``style`` is d loss / d s per style
    set.  Parameters named in ``frozen`` get exact zero gradients; with
    ``param_grads=False`` only the input gradients are computed.
    """
    n = batch.targets.shape[0]
    l1, pv, dy = reconstruction_batch(cache.y, batch.targets, batch.target_hist, lam, cfg)
    stats = LossStats(float(l1.mean()), float(pv.mean()), float((l1 + lam * pv).mean()))
    if not np.isfinite(stats.total):
        raise TrainingDivergedError(-1)
    dz = dy * (cache.y * (1.0 - cache.y)) / n
    dh = dz @ params.Wd
    dc = dh * cache.gam
    dgam = dh * cache.c
    ds = dgam @ params.Gw + dh @ params.Bw
    ds_sets = np.zeros_like(cache.s_sets)
    np.add.at(ds_sets, batch.style_index, ds)
    if not param_grads:
        return Gradients({}, dc, ds_sets, stats)
    g = {}
    g["Wd"] = dz.T @ cache.h
    g["bd"] = dz.sum(axis=0)
    g["Gw"] = dgam.T @ cache.s
    g["gb"] = dgam.sum(axis=0)
    g["Bw"] = dh.T @ cache.s
    g["bb"] = dh.sum(axis=0)

    if batch.style_refs is not None and "Ws" not in frozen:
        k, q, hw = batch.style_refs.shape
        dpre = (ds_sets[:, None, :] / q) * (1.0 - cache.s_items ** 2)
        dpre = dpre.reshape(k * q, -1)
        g["Ws"] = dpre.T @ batch.style_refs.reshape(k * q, hw)
        g["bs"] = dpre.sum(axis=0)
    if batch.content_images is not None and "Wc" not in frozen:
        dpre_c = dc * (1.0 - cache.c ** 2)
        g["Wc"] = dpre_c.T @ batch.content_images
        g["bc"] = dpre_c.sum(axis=0)
    for name in PARAM_ORDER:
        if name not in g or name in frozen:
            g[name] = np.zeros_like(getattr(params, name))
    return Gradients(g, dc, ds_sets, stats)


def loss_and_grad(params, batch, lam, cfg, frozen=(), param_grads=True):
    cache = forward(params, batch)
    return backward(params, batch, cache, lam, cfg, frozen, param_grads)


def batch_loss(params, batch, lam, cfg) -> float:
    cache = forward(params, batch)
    l1, pv, _ = reconstruction_batch(cache.y, batch.targets, batch.target_hist, lam, cfg, need_grad=False)
    return float((l1 + lam * pv).mean())


# --- optimizers ----------------------------------------------------------------

class MomentumSGD:
    def __init__(self, lr=1e-4, momentum=0.9, weight_decay=1e-4):
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = {}

    def step(self, params: ToyModelParams, grads: dict, frozen=()):
        for name in PARAM_ORDER:
            if name in frozen:
                continue
            p = getattr(params, name)
            g = grads[name]
            g += self.weight_decay * p
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = g.copy()
            else:
                v *= self.momentum
                v += g
            p -= self.lr * v


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.99, weight_decay=1e-4, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.weight_decay, self.eps = lr, beta1, beta2, weight_decay, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: ToyModelParams, grads: dict, frozen=()):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in PARAM_ORDER:
            if name in frozen:
                continue
            p = getattr(params, name)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            _backend.adam_update(p.reshape(-1), np.ascontiguousarray(grads[name]).reshape(-1),
                                 self.m[name].reshape(-1), self.v[name].reshape(-1), self.lr,
                                 self.beta1, self.beta2, c1, c2, self.eps, self.weight_decay)


def make_optimizer(name: str, lr: float, weight_decay: float = 1e-4):
    if name == "sgd":
        return MomentumSGD(lr=lr, momentum=0.9, weight_decay=weight_decay)
    if name == "adam":
        return Adam(lr=lr, weight_decay=weight_decay)
    raise ValidationError(f"unknown optimizer {name!r}")


# --- training --------------------------------------------------------------------

@dataclass
class TrainingSet:
    """In-memory glyphs for the training fonts.

    ``images[f, k]`` is character ``chars[k]`` of font ``fonts[f]``, flattened.
    ``ref_index`` lists the reference characters used for style vectors.
    """

    fonts: list
    chars: list
    images: np.ndarray
    ref_index: np.ndarray
    height: int
    width: int
    hist: np.ndarray | None = None
    ref_images: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.ref_index = np.asarray(self.ref_index, dtype=np.intp)
        self.ref_images = np.ascontiguousarray(self.images[:, self.ref_index])

    @classmethod
    def from_manifest(cls, manifest, fonts=None, size=None):
        fonts = list(fonts) if fonts is not None else manifest.fonts()
        chars = manifest.chars(fonts[0])
        refs = manifest.reference_chars(fonts[0])
        imgs = np.stack([np.stack([manifest.load(f, c, size).flat() for c in chars]) for f in fonts])
        first = manifest.load(fonts[0], chars[0])
        return cls(fonts, chars, imgs, np.array([chars.index(r) for r in refs]), first.height, first.width)

    def ensure_hist(self, plan):
        if self.hist is None or self.hist.shape[2:] != (plan.n_directions, plan.n_bins):
            from .projection import project_histograms
            nf, nc, hw = self.images.shape
            self.hist = project_histograms(self.images.reshape(nf * nc, hw), plan).reshape(
                nf, nc, plan.n_directions, plan.n_bins)
        return self.hist

    def refs(self, font_index) -> np.ndarray:
        return self.ref_images[font_index]


@dataclass
class Schedule:
    stage1_iters: int = 2000
    stage2_iters: int = 1000
    batch_size: int = 32
    lam: float = 0.01
    variant: str = "wdl"
    n_directions: int = 12
    optimizer: str = "sgd"
    lr: float = 3.0
    weight_decay: float = 1e-4
    log_every: int = 50
    seed: int = 0


LOG_HEADER = ("iteration", "stage", "L1", "PCL", "total")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def add(self, iteration, stage, stats: LossStats):
        self.rows.append((iteration, stage, stats.l1, stats.pcl, stats.total))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("\t".join(LOG_HEADER) + "\n")
            for it, st, a, b, c in self.rows:
                fh.write(f"{it}\t{st}\t{a!r}\t{b!r}\t{c!r}\n")

    def totals(self, stage=None):
        return [r[4] for r in self.rows if stage is None or r[1] == stage]


def _make_batch(data: TrainingSet, font_idx, char_idx, content_images=None, content_features=None):
    # style vectors are computed for every training font; no reference copies
    return Batch(
        targets=data.images[font_idx, char_idx],
        style_index=font_idx,
        content_images=content_images,
        content_features=content_features,
        style_refs=data.ref_images,
        target_hist=None if data.hist is None else data.hist[font_idx, char_idx],
    )


def train_stage(params: ToyModelParams, data: TrainingSet, schedule: Schedule, stage: int,
                *, source_font: int | None = None, fused_content: np.ndarray | None = None,
                log: TrainLog | None = None, iterations: int | None = None,
                callback=None) -> TrainLog:
    """Run one training stage in place on ``params``.

    Stage 1 feeds content images of ``source_font``.  Stage 2 feeds
    ``fused_content[f, k]`` (fixed features) and freezes the content encoder.
    Sampling and accumulation order depend only on ``schedule.seed`` and stage.
    """
    from .pcl import PclConfig as _Cfg
    cfg = _Cfg.for_size(data.height, data.width, schedule.variant, schedule.n_directions)
    if schedule.lam != 0:
        data.ensure_hist(cfg.plan)
    log = log if log is not None else TrainLog()
    iterations = iterations if iterations is not None else (
        schedule.stage1_iters if stage == 1 else schedule.stage2_iters)
    if stage == 1:
        if source_font is None:
            raise ValidationError("stage 1 needs a source font")
        frozen = ()
    elif stage == 2:
        if fused_content is None:
            raise ValidationError("stage 2 needs fused content features")
        frozen = CONTENT_ENCODER
    else:
        raise ValidationError(f"unknown stage {stage}")
    opt = make_optimizer(schedule.optimizer, schedule.lr, schedule.weight_decay)
    rng = np.random.default_rng([schedule.seed, stage])
    n_fonts, n_chars = data.images.shape[:2]
    offset = 0 if stage == 1 else schedule.stage1_iters
    stats = None
    for it in range(iterations):
        font_idx = rng.integers(0, n_fonts, schedule.batch_size)
        char_idx = rng.integers(0, n_chars, schedule.batch_size)
        if stage == 1:
            batch = _make_batch(data, font_idx, char_idx, content_images=data.images[source_font, char_idx])
        else:
            batch = _make_batch(data, font_idx, char_idx, content_features=fused_content[font_idx, char_idx])
        try:
            grads = loss_and_grad(params, batch, schedule.lam, cfg, frozen)
        except TrainingDivergedError:
            raise TrainingDivergedError(offset + it, stage) from None
        stats = grads.stats
        if it % schedule.log_every == 0:
            log.add(offset + it, stage, stats)
        opt.step(params, grads.params, frozen)
        if callback is not None:
            callback(offset + it, stage, params)
    if stats is not None and (iterations - 1) % schedule.log_every != 0:
        log.add(offset + iterations - 1, stage, stats)
    return log


def evaluate_loss(params, data: TrainingSet, schedule: Schedule, source_font: int, n_samples=256, seed=12345):
    """Mean stage-1 reconstruction loss on a fixed random sample of pairs."""
    cfg = PclConfig.for_size(data.height, data.width, schedule.variant, schedule.n_directions)
    if schedule.lam != 0:
        data.ensure_hist(cfg.plan)
    rng = np.random.default_rng(seed)
    fi = rng.integers(0, data.images.shape[0], n_samples)
    ci = rng.integers(0, data.images.shape[1], n_samples)
    batch = _make_batch(data, fi, ci, content_images=data.images[source_font, ci])
    return batch_loss(params, batch, schedule.lam, cfg)


# --- checkpoints -----------------------------------------------------------------

def save_checkpoint(params: ToyModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<5I", CHECKPOINT_VERSION, params.height, params.width,
                             params.content_dim, params.style_dim))
        for name in PARAM_ORDER:
            arr = getattr(params, name)
            fh.write(struct.pack("<Q", arr.size))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> ToyModelParams:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ImageFormatError(f"{path}: not a model checkpoint (bad magic)")
    if len(buf) < 24:
        raise ImageFormatError(f"{path}: truncated checkpoint header")
    version, h, w, dc, ds = struct.unpack_from("<5I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ImageFormatError(f"{path}: unsupported checkpoint version {version}")
    hw = h * w
    shapes = {"Wc": (dc, hw), "bc": (dc,), "Ws": (ds, hw), "bs": (ds,), "Gw": (dc, ds), "gb": (dc,),
              "Bw": (dc, ds), "bb": (dc,), "Wd": (hw, dc), "bd": (hw,)}
    pos = 24
    arrays = {}
    for name in PARAM_ORDER:
        if pos + 8 > len(buf):
            raise ImageFormatError(f"{path}: truncated before {name}")
        (count,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if count != int(np.prod(shapes[name])):
            raise ImageFormatError(f"{path}: {name} has {count} elements, expected {np.prod(shapes[name])}")
        end = pos + 8 * count
        if end > len(buf):
            raise ImageFormatError(f"{path}: truncated inside {name}")
        arrays[name] = np.frombuffer(buf[pos:end], dtype="<f8").astype(np.float64).reshape(shapes[name])
        pos = end
    if pos != len(buf):
        raise ImageFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return ToyModelParams(h, w, **arrays)
