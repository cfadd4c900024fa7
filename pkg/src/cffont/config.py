"""Run configuration: ``key = value`` text files with ``#`` comments.

Environment variables ``CFK_<KEY>`` (upper-case key) override file values.
Unknown keys and out-of-range values are rejected when parsing.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError

ENV_PREFIX = "CFK_"


@dataclass(frozen=True)
class RunConfig:
    out_dir: str = "cffont_run"
    seed: int = 0
    image_size: int = 80
    n_fonts: int = 52
    n_heldout: int = 12
    thickness_min: float = 2.0
    thickness_max: float = 6.0
    slant_min: float = -0.2
    slant_max: float = 0.2
    scale_min: float = 0.8
    scale_max: float = 1.0
    directions: int = 12
    content_dim: int = 64
    style_dim: int = 16
    variant: str = "wdl"
    lambda_pcl: float = -1.0
    tau: float = 0.3
    basis_size: int = 10
    embed_scale: str = "mean"
    stage1_iters: int = 2000
    stage2_iters: int = 1000
    batch_size: int = 32
    optimizer: str = "sgd"
    lr: float = 3.0
    weight_decay: float = 1e-4
    isr_epochs: int = 10
    isr_step: float = 0.05

    def __post_init__(self):
        checks = [
            (self.image_size >= 11, "image_size must be >= 11 (SSIM window)"),
            (self.n_fonts >= 2, "n_fonts must be >= 2"),
            (0 <= self.n_heldout < self.n_fonts, "n_heldout must be in [0, n_fonts)"),
            (1.0 <= self.thickness_min <= self.thickness_max <= 6.0, "thickness range must lie in [1, 6]"),
            (-0.4 <= self.slant_min <= self.slant_max <= 0.4, "slant range must lie in [-0.4, 0.4]"),
            (0.6 <= self.scale_min <= self.scale_max <= 1.0, "scale range must lie in [0.6, 1.0]"),
            (self.directions >= 1, "directions must be >= 1"),
            (self.content_dim >= 1 and self.style_dim >= 1, "feature dimensions must be >= 1"),
            (self.variant in ("wdl", "kl"), "variant must be 'wdl' or 'kl'"),
            (self.lambda_pcl == -1.0 or self.lambda_pcl >= 0, "lambda_pcl must be >= 0 (or -1 for the default)"),
            (self.tau > 0, "tau must be positive"),
            (1 <= self.basis_size <= self.n_fonts - self.n_heldout, "basis_size must be in [1, training fonts]"),
            (self.stage1_iters >= 0 and self.stage2_iters >= 0, "iteration counts must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.optimizer in ("sgd", "adam"), "optimizer must be 'sgd' or 'adam'"),
            (self.lr > 0 and self.weight_decay >= 0, "lr must be positive, weight_decay nonnegative"),
            (self.isr_epochs >= 0 and self.isr_step >= 0, "ISR epochs and step must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)
        if self.embed_scale != "mean":
            try:
                value = float(self.embed_scale)
            except ValueError:
                raise ValidationError("embed_scale must be 'mean' or a positive number") from None
            if value <= 0:
                raise ValidationError("embed_scale must be 'mean' or a positive number")

    @property
    def weight(self) -> float:
        if self.lambda_pcl >= 0:
            return self.lambda_pcl
        return 0.01 if self.variant == "wdl" else 0.05

    @property
    def embed_scale_value(self):
        return "mean" if self.embed_scale == "mean" else float(self.embed_scale)

    def font_ranges(self) -> dict:
        return {"thickness": (self.thickness_min, self.thickness_max),
                "slant": (self.slant_min, self.slant_max),
                "scale": (self.scale_min, self.scale_max)}

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ValidationError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """File values, then ``CFK_*`` environment variables, then explicit overrides."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(), str(path)))
    environ = os.environ if environ is None else environ
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in _FIELDS:
            raise ValidationError(f"unknown config key {key!r} from environment variable {name}")
        values[key] = _coerce(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in _FIELDS:
            raise ValidationError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values)
