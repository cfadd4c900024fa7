"""Synthetic glyphs: stroke skeletons, procedural fonts, PGM I/O and datasets.

Intensities are stored internally with ink = 1.0 and background = 0.0.  On disk
(binary PGM) the convention is flipped so that glyphs look normal in a viewer.
"""
from __future__ import annotations

import csv
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatchError, ImageFormatError, ValidationError

DEFAULT_SIZE = 80
N_REFERENCE = 16
JITTER_AMOUNT = 0.02


@dataclass(frozen=True, eq=False)
class GlyphImage:
    """A grayscale raster in [0, 1], row-major, ink = 1."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValidationError(f"glyph pixels must be a non-empty 2D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("glyph intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def ink_mass(self) -> float:
        return float(self.pixels.sum())

    def __eq__(self, other):
        if not isinstance(other, GlyphImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class SyntheticFontSpec:
    font_id: str
    stroke_thickness: float = 2.0
    slant: float = 0.0
    scale: float = 0.85
    jitter_seed: int = 0
    jitter_amount: float = JITTER_AMOUNT

    def __post_init__(self):
        if not 1.0 <= self.stroke_thickness <= 6.0:
            raise ValidationError(f"stroke_thickness {self.stroke_thickness} outside [1, 6]")
        if not -0.4 <= self.slant <= 0.4:
            raise ValidationError(f"slant {self.slant} outside [-0.4, 0.4]")
        if not 0.6 <= self.scale <= 1.0:
            raise ValidationError(f"scale {self.scale} outside [0.6, 1.0]")
        if self.jitter_amount < 0:
            raise ValidationError("jitter_amount must be nonnegative")


@dataclass(frozen=True)
class CharSkeleton:
    char_id: str
    segments: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self):
        segs = tuple(tuple(float(v) for v in s) for s in self.segments)
        if not segs:
            raise ValidationError(f"skeleton {self.char_id!r} has no segments")
        for s in segs:
            if len(s) != 4 or min(s) < 0.0 or max(s) > 1.0:
                raise ValidationError(f"skeleton {self.char_id!r}: segment {s} not inside the unit square")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def from_polylines(cls, char_id: str, polylines: Iterable[Sequence[tuple[float, float]]]):
        segs = []
        for line in polylines:
            for (x0, y0), (x1, y1) in zip(line[:-1], line[1:]):
                segs.append((x0, y0, x1, y1))
        return cls(char_id, tuple(segs))


# Letter-like stroke skeletons, (x, y) with y pointing down.
_O_RING = [(.4, .15), (.6, .15), (.78, .33), (.78, .67), (.6, .85), (.4, .85), (.22, .67), (.22, .33), (.4, .15)]
_C_ARC = [(.75, .25), (.6, .15), (.4, .15), (.25, .3), (.25, .7), (.4, .85), (.6, .85), (.75, .75)]
_P_BOWL = [(.25, .85), (.25, .15), (.6, .15), (.72, .27), (.72, .4), (.6, .52), (.25, .52)]
_ALPHABET = {
    "A": [[(.2, .85), (.5, .15), (.8, .85)], [(.32, .58), (.68, .58)]],
    "B": [[(.25, .85), (.25, .15), (.6, .15), (.7, .25), (.7, .4), (.6, .5), (.25, .5)],
          [(.6, .5), (.75, .6), (.75, .75), (.65, .85), (.25, .85)]],
    "C": [_C_ARC],
    "D": [[(.25, .15), (.25, .85), (.55, .85), (.75, .65), (.75, .35), (.55, .15), (.25, .15)]],
    "E": [[(.75, .15), (.25, .15), (.25, .85), (.75, .85)], [(.25, .5), (.65, .5)]],
    "F": [[(.75, .15), (.25, .15), (.25, .85)], [(.25, .5), (.65, .5)]],
    "G": [_C_ARC, [(.75, .75), (.75, .55), (.55, .55)]],
    "H": [[(.25, .15), (.25, .85)], [(.75, .15), (.75, .85)], [(.25, .5), (.75, .5)]],
    "I": [[(.5, .15), (.5, .85)], [(.35, .15), (.65, .15)], [(.35, .85), (.65, .85)]],
    "J": [[(.7, .15), (.7, .7), (.55, .85), (.4, .85), (.28, .72)], [(.5, .15), (.8, .15)]],
    "K": [[(.25, .15), (.25, .85)], [(.75, .15), (.25, .55)], [(.4, .45), (.75, .85)]],
    "L": [[(.25, .15), (.25, .85), (.75, .85)]],
    "M": [[(.2, .85), (.2, .15), (.5, .55), (.8, .15), (.8, .85)]],
    "N": [[(.25, .85), (.25, .15), (.75, .85), (.75, .15)]],
    "O": [_O_RING],
    "P": [_P_BOWL],
    "Q": [_O_RING, [(.55, .65), (.82, .9)]],
    "R": [_P_BOWL, [(.5, .52), (.75, .85)]],
    "S": [[(.75, .22), (.6, .15), (.4, .15), (.25, .27), (.25, .4), (.4, .5), (.6, .5), (.75, .6),
           (.75, .73), (.6, .85), (.4, .85), (.25, .78)]],
    "T": [[(.2, .15), (.8, .15)], [(.5, .15), (.5, .85)]],
    "U": [[(.25, .15), (.25, .7), (.4, .85), (.6, .85), (.75, .7), (.75, .15)]],
    "V": [[(.2, .15), (.5, .85), (.8, .15)]],
    "W": [[(.15, .15), (.3, .85), (.5, .4), (.7, .85), (.85, .15)]],
    "X": [[(.22, .15), (.78, .85)], [(.78, .15), (.22, .85)]],
    "Y": [[(.2, .15), (.5, .5), (.8, .15)], [(.5, .5), (.5, .85)]],
    "Z": [[(.22, .15), (.78, .15), (.22, .85), (.78, .85)]],
}


def default_alphabet() -> list[CharSkeleton]:
    """The 26 built-in letter skeletons, in A..Z order."""
    return [CharSkeleton.from_polylines(k, v) for k, v in _ALPHABET.items()]


def random_skeleton(rng: np.random.Generator, char_id: str, n_strokes: tuple[int, int] = (2, 4)) -> CharSkeleton:
    """A random polyline skeleton, used for distractor glyphs."""
    lines = []
    for _ in range(rng.integers(n_strokes[0], n_strokes[1] + 1)):
        n_pts = int(rng.integers(2, 5))
        lines.append([tuple(p) for p in rng.uniform(0.15, 0.85, size=(n_pts, 2))])
    return CharSkeleton.from_polylines(char_id, lines)


def _jittered_segments(spec: SyntheticFontSpec, skel: CharSkeleton) -> np.ndarray:
    segs = np.array(skel.segments, dtype=np.float64).reshape(-1, 2, 2)
    if spec.jitter_amount == 0:
        return segs
    # Shared endpoints move together so strokes stay connected.
    rng = np.random.default_rng([spec.jitter_seed, zlib.crc32(skel.char_id.encode("utf-8"))])
    pts = np.round(segs.reshape(-1, 2), 9)
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    offsets = rng.uniform(-spec.jitter_amount, spec.jitter_amount, size=uniq.shape)
    moved = np.clip(uniq + offsets, 0.0, 1.0)
    return moved[inverse.reshape(-1)].reshape(segs.shape)


def render_glyph(spec: SyntheticFontSpec, skel: CharSkeleton, size: int | tuple[int, int] = DEFAULT_SIZE) -> GlyphImage:
    """Rasterize a skeleton in a synthetic font.

    Unit-square coordinates map to pixel coordinates by ``x * W``, ``y * H``, so
    pixel (row, col) sits at (col, row).  Points are scaled about the image
    center, then sheared horizontally by ``slant * (center_y - y)``.  Ink is
    ``clip(thickness/2 + 0.5 - dist, 0, 1)``: a one-pixel linear ramp.
    """
    h, w = (size, size) if isinstance(size, int) else size
    segs = _jittered_segments(spec, skel)
    cx, cy = w / 2.0, h / 2.0
    x = segs[..., 0] * w
    y = segs[..., 1] * h
    x = cx + spec.scale * (x - cx)
    y = cy + spec.scale * (y - cy)
    x = x + spec.slant * (cy - y)

    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dist = np.full((h, w), np.inf)
    for (ax, bx), (ay, by) in zip(x, y):
        dx, dy = bx - ax, by - ay
        length2 = dx * dx + dy * dy
        if length2 > 0:
            t = np.clip(((cols - ax) * dx + (rows - ay) * dy) / length2, 0.0, 1.0)
        else:
            t = 0.0
        d = np.hypot(cols - (ax + t * dx), rows - (ay + t * dy))
        np.minimum(dist, d, out=dist)
    ink = np.clip(spec.stroke_thickness / 2.0 + 0.5 - dist, 0.0, 1.0)
    return GlyphImage(ink)


# --- PGM -------------------------------------------------------------------

def write_pgm(img: GlyphImage, path) -> None:
    """Write a binary P5 PGM, ink stored dark: byte = round(255 * (1 - ink))."""
    data = np.rint(255.0 * (1.0 - img.pixels)).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise ImageFormatError("truncated PGM header")
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after PGM header")
    return tokens, pos + 1


def read_pgm(path, expected_shape: tuple[int, int] | None = None) -> GlyphImage:
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, offset = _header_tokens(buf, 4)
    if tokens[0] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {tokens[0][:8]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: non-integer PGM header field") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: invalid PGM size {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    payload = buf[offset:]
    if len(payload) != width * height:
        raise ImageFormatError(f"{path}: payload has {len(payload)} bytes, header says {width * height}")
    if expected_shape is not None and (height, width) != tuple(expected_shape):
        raise DimensionMismatchError(f"{path}: image is {height}x{width}, expected {expected_shape[0]}x{expected_shape[1]}")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GlyphImage(1.0 - raw.astype(np.float64) / 255.0)


# --- datasets --------------------------------------------------------------

MANIFEST_HEADER = ("font_id", "char_id", "path", "is_reference")


@dataclass(frozen=True)
class ManifestRow:
    font_id: str
    char_id: str
    path: str
    is_reference: bool


@dataclass
class DatasetManifest:
    root: Path
    rows: list[ManifestRow]
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.root = Path(self.root)
        self._index = {(r.font_id, r.char_id): r for r in self.rows}

    def fonts(self) -> list[str]:
        return list(dict.fromkeys(r.font_id for r in self.rows))

    def chars(self, font_id: str | None = None) -> list[str]:
        rows = self.rows if font_id is None else [r for r in self.rows if r.font_id == font_id]
        return list(dict.fromkeys(r.char_id for r in rows))

    def reference_chars(self, font_id: str | None = None) -> list[str]:
        font_id = font_id if font_id is not None else self.fonts()[0]
        return [r.char_id for r in self.rows if r.font_id == font_id and r.is_reference]

    def path(self, font_id: str, char_id: str) -> Path:
        try:
            row = self._index[(font_id, char_id)]
        except KeyError:
            raise KeyError(f"no glyph for font {font_id!r}, char {char_id!r} in manifest") from None
        return self.root / row.path

    def load(self, font_id: str, char_id: str, expected_shape=None) -> GlyphImage:
        return read_pgm(self.path(font_id, char_id), expected_shape)

    def write(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.tsv"
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, delimiter="\t", lineterminator="\n")
            out.writerow(MANIFEST_HEADER)
            for r in self.rows:
                out.writerow((r.font_id, r.char_id, r.path, int(r.is_reference)))
        return path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            header = tuple(next(reader, ()))
            if header != MANIFEST_HEADER:
                raise ImageFormatError(f"{path}: bad manifest header {header}")
            rows = []
            for rec in reader:
                if len(rec) != 4 or rec[3] not in ("0", "1"):
                    raise ImageFormatError(f"{path}: malformed manifest row {rec}")
                rows.append(ManifestRow(rec[0], rec[1], rec[2], rec[3] == "1"))
        return cls(path.parent, rows)


FONTS_HEADER = ("font_id", "stroke_thickness", "slant", "scale", "jitter_seed", "jitter_amount")


FULL_RANGES = {"thickness": (1.0, 6.0), "slant": (-0.4, 0.4), "scale": (0.6, 1.0)}


def random_font_specs(n_fonts: int, seed: int = 0, prefix: str = "f", ranges: dict | None = None
                      ) -> list[SyntheticFontSpec]:
    """Draw font specs uniformly; ``ranges`` may narrow any of the full ranges."""
    r = dict(FULL_RANGES, **(ranges or {}))
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n_fonts):
        specs.append(SyntheticFontSpec(
            font_id=f"{prefix}{i:03d}",
            stroke_thickness=round(float(rng.uniform(*r["thickness"])), 4),
            slant=round(float(rng.uniform(*r["slant"])), 4),
            scale=round(float(rng.uniform(*r["scale"])), 4),
            jitter_seed=int(rng.integers(0, 2**31 - 1)),
        ))
    return specs


def write_font_specs(specs: Sequence[SyntheticFontSpec], path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(FONTS_HEADER)
        for s in specs:
            out.writerow((s.font_id, repr(s.stroke_thickness), repr(s.slant), repr(s.scale),
                          s.jitter_seed, repr(s.jitter_amount)))


def read_font_specs(path) -> list[SyntheticFontSpec]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        if tuple(next(reader, ())) != FONTS_HEADER:
            raise ImageFormatError(f"{path}: bad font table header")
        return [SyntheticFontSpec(r[0], float(r[1]), float(r[2]), float(r[3]), int(r[4]), float(r[5]))
                for r in reader]


def build_dataset(n_fonts: int, skeletons: Sequence[CharSkeleton], out_dir, *, seed: int = 0,
                  size: int = DEFAULT_SIZE, overwrite: bool = False,
                  fonts: Sequence[SyntheticFontSpec] | None = None, ranges: dict | None = None
                  ) -> DatasetManifest:
    """Render every (font, character) pair into ``out_dir/data/<font>/<char>.pgm``.

    The same 16 reference characters, picked by a seeded shuffle, are flagged
    for every font.  ``fonts`` overrides the randomly drawn font specs.
    """
    if fonts is None:
        if n_fonts < 2:
            raise ValidationError("need at least 2 fonts")
        fonts = random_font_specs(n_fonts, seed, ranges=ranges)
    elif len(fonts) < 2:
        raise ValidationError("need at least 2 fonts")
    if len(skeletons) < 20:
        raise ValidationError(f"need at least 20 skeletons, got {len(skeletons)}")
    char_ids = [s.char_id for s in skeletons]
    if len(set(char_ids)) != len(char_ids):
        raise ValidationError("duplicate char ids among skeletons")
    font_ids = [f.font_id for f in fonts]
    for name in font_ids + char_ids:
        _safe_component(name)
    if len(set(font_ids)) != len(font_ids):
        raise ValidationError("duplicate font ids")

    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not overwrite:
        raise ValidationError(f"output directory {out_dir} is not empty (pass overwrite=True)")

    order = np.random.default_rng(seed).permutation(len(skeletons))
    reference = {char_ids[i] for i in order[:N_REFERENCE]}

    rows = []
    for spec in fonts:
        font_dir = out_dir / "data" / spec.font_id
        font_dir.mkdir(parents=True, exist_ok=True)
        for skel in skeletons:
            rel = f"data/{spec.font_id}/{skel.char_id}.pgm"
            write_pgm(render_glyph(spec, skel, size), out_dir / rel)
            rows.append(ManifestRow(spec.font_id, skel.char_id, rel, skel.char_id in reference))
    manifest = DatasetManifest(out_dir, rows)
    write_font_specs(fonts, out_dir / "fonts.tsv")
    manifest.write()
    return manifest


def load_font_images(manifest: DatasetManifest, font_id: str, char_ids: Sequence[str],
                     expected_shape=None) -> np.ndarray:
    """Stack the flattened glyphs of one font, shape (len(char_ids), H*W)."""
    return np.stack([manifest.load(font_id, c, expected_shape).flat() for c in char_ids])


def _safe_component(name: str) -> str:
    if not name or os.sep in name or name in (".", ".."):
        raise ValidationError(f"unsafe identifier {name!r}")
    return name
