"""Reference-based image quality metrics on unit-interval images."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .imaging import as_image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# columns of the comparison table that need pretrained networks
UNAVAILABLE = ("fid", "lpips", "dists")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0; ``inf`` when identical."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def l1(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    h, w = x.shape
    rows = np.zeros((h, w - n + 1))
    for i, wt in enumerate(g):
        rows += wt * x[:, i : i + w - n + 1]
    out = np.zeros((h - n + 1, w - n + 1))
    for i, wt in enumerate(g):
        out += wt * rows[i : i + h - n + 1]
    return out


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Local SSIM of two single-channel images over fully-inside windows."""
    g = gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b) -> float:
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValidationError(
            f"image {a.shape[1]}x{a.shape[0]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    scores = [float(np.mean(ssim_map(a[..., c], b[..., c]))) for c in range(a.shape[2])]
    return float(np.mean(scores))


@dataclass
class PairMetrics:
    id: str
    mse: float
    psnr_db: float
    ssim: float
    l1: float

    def to_dict(self) -> dict:
        finite = math.isfinite(self.psnr_db)
        return {
            "id": self.id,
            "mse": self.mse,
            "psnr_db": self.psnr_db if finite else None,
            "psnr_inf": not finite,
            "ssim": self.ssim,
            "l1": self.l1,
        }


@dataclass
class MetricReport:
    per_pair: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pairs": [p.to_dict() for p in self.per_pair],
            "aggregate": self.aggregate,
            "config": self.config_echo,
        }


def _aggregate(rows: list) -> dict:
    agg = {"count": len(rows), "mse": None, "psnr_db": None, "psnr_inf_count": 0,
           "ssim": None, "l1": None}
    agg.update({name: None for name in UNAVAILABLE})
    if not rows:
        return agg
    # fixed order (rows are sorted by id) keeps the sums bit-stable
    agg["mse"] = math.fsum(r.mse for r in rows) / len(rows)
    agg["ssim"] = math.fsum(r.ssim for r in rows) / len(rows)
    agg["l1"] = math.fsum(r.l1 for r in rows) / len(rows)
    finite = [r.psnr_db for r in rows if math.isfinite(r.psnr_db)]
    agg["psnr_inf_count"] = len(rows) - len(finite)
    if finite:
        agg["psnr_db"] = math.fsum(finite) / len(finite)
    return agg


def evaluate_pair(gt, out, pair_id: str = "") -> PairMetrics:
    try:
        gt, out = _pair(gt, out)
    except DimensionMismatchError as exc:
        raise DimensionMismatchError(f"pair {pair_id!r}: {exc}") from exc
    return PairMetrics(pair_id, mse(gt, out), psnr(gt, out), ssim(gt, out), l1(gt, out))


def evaluate_pairs(pairs: Iterable, config: dict | None = None) -> MetricReport:
    """Score ``(gt, out, id)`` triples and average them, ordered by id."""
    rows = [evaluate_pair(gt, out, str(pair_id)) for gt, out, pair_id in pairs]
    rows.sort(key=lambda r: r.id)
    return MetricReport(per_pair=rows, aggregate=_aggregate(rows), config_echo=dict(config or {}))
