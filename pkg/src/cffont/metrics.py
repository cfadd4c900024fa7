"""Pixel-level image metrics: L1, RMSE and Gaussian-window SSIM."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError, ValidationError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _pair(a, b):
    a = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    b = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def l1(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.abs(a - b).mean())


def rmse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(((a - b) ** 2).mean()))


def _filter_valid(img, kernel_1d):
    # separable valid-mode correlation: rows, then columns
    n = len(kernel_1d)
    rows = sliding_window_view(img, n, axis=1) @ kernel_1d
    return sliding_window_view(rows, n, axis=0) @ kernel_1d


def ssim(a, b, data_range: float = 1.0, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over all window positions fully inside the image."""
    a, b = _pair(a, b)
    if a.ndim != 2 or a.shape[0] < window or a.shape[1] < window:
        raise ValidationError(f"image {a.shape} is smaller than the {window}x{window} SSIM window")
    x = np.arange(window) - (window - 1) / 2.0
    k = np.exp(-(x ** 2) / (2 * sigma ** 2))
    k /= k.sum()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a ** 2
    var_b = _filter_valid(b * b, k) - mu_b ** 2
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


@dataclass
class MetricReport:
    names: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    rmse: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, name, generated, truth):
        self.names.append(name)
        self.l1.append(l1(generated, truth))
        self.rmse.append(rmse(generated, truth))
        self.ssim.append(ssim(generated, truth))

    @property
    def count(self) -> int:
        return len(self.names)

    def means(self) -> dict:
        if not self.names:
            return {"l1": float("nan"), "rmse": float("nan"), "ssim": float("nan")}
        return {"l1": float(np.mean(self.l1)), "rmse": float(np.mean(self.rmse)), "ssim": float(np.mean(self.ssim))}

    def to_tsv(self) -> str:
        lines = ["name\tl1\trmse\tssim"]
        for row in zip(self.names, self.l1, self.rmse, self.ssim):
            lines.append(f"{row[0]}\t{row[1]:.10f}\t{row[2]:.10f}\t{row[3]:.10f}")
        m = self.means()
        lines.append(f"MEAN[n={self.count}]\t{m['l1']:.10f}\t{m['rmse']:.10f}\t{m['ssim']:.10f}")
        return "\n".join(lines) + "\n"
