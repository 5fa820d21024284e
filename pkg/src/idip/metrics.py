"""Restoration quality metrics: windowed SSIM, DSSIM and windowed MSE (LMSE).

SSIM uses a uniform (unweighted) square window over the BT.601 luminance
of unit-scale images, with the conventional stabilisers C1=(0.01*L)^2 and
C2=(0.03*L)^2 at L=1.  DSSIM is its dissimilarity form (1-SSIM)/2, so
lower is better.  LMSE is the mean over all k x k sliding windows of the
per-window MSE, computed on the 0-255 pixel scale; at k=1 it coincides
with plain MSE.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Iterable, Optional

import numpy as np

__all__ = [
    "ssim",
    "dssim",
    "dssim_from_ssim",
    "fitted_window",
    "mse",
    "lmse",
    "luminance",
    "MetricReport",
    "evaluate",
    "write_records",
    "read_records",
    "format_table",
]

DEFAULT_WINDOW = 11
DEFAULT_C1 = 0.01 ** 2
DEFAULT_C2 = 0.03 ** 2

_BT601 = np.array([0.299, 0.587, 0.114])


def luminance(img: np.ndarray) -> np.ndarray:
    """Collapse HxWx3 to HxW with BT.601 weights; HxW passes through."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ _BT601
    raise ValueError(f"expected HxW or HxWx3 image, got shape {arr.shape}")


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def _box_sum(a: np.ndarray, k: int) -> np.ndarray:
    """Sums over all k x k sliding windows via a summed-area table."""
    if k == 1:
        return a
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    np.cumsum(a, axis=0, out=s[1:, 1:])
    np.cumsum(s[1:, 1:], axis=1, out=s[1:, 1:])
    return s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int = DEFAULT_WINDOW,
    c1: float = DEFAULT_C1,
    c2: float = DEFAULT_C2,
) -> float:
    """Mean structural similarity over all sliding windows.

    Inputs are HxW or HxWx3 arrays with values in [0, 1]; colour images
    are reduced to luminance first.  Symmetric in its arguments and
    exactly 1 for identical images.
    """
    _check_pair(np.asarray(a), np.asarray(b))
    x = luminance(a)
    y = luminance(b)
    h, w = x.shape
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if window > min(h, w):
        raise ValueError(f"window {window} exceeds image size {h}x{w}")
    n = window * window
    mx = _box_sum(x, window) / n
    my = _box_sum(y, window) / n
    exx = _box_sum(x * x, window) / n
    eyy = _box_sum(y * y, window) / n
    exy = _box_sum(x * y, window) / n
    vx = exx - mx * mx
    vy = eyy - my * my
    cov = exy - mx * my
    per_window = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / (
        (mx * mx + my * my + c1) * (vx + vy + c2)
    )
    return float(per_window.mean())


def fitted_window(height: int, width: int, window: int = DEFAULT_WINDOW) -> int:
    """Largest odd window <= `window` that fits an height x width image."""
    side = min(height, width, window)
    return max(1, side if side % 2 else side - 1)


def dssim_from_ssim(value: float) -> float:
    return (1.0 - value) / 2.0


def dssim(a: np.ndarray, b: np.ndarray, **kwargs) -> float:
    """Structural dissimilarity in [0, 1]; 0 for identical images."""
    return dssim_from_ssim(ssim(a, b, **kwargs))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Plain mean squared error on the 0-255 pixel scale."""
    _check_pair(np.asarray(a), np.asarray(b))
    diff = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) * 255.0
    return float(np.mean(diff * diff))


def lmse(a: np.ndarray, b: np.ndarray, k: int = 1) -> float:
    """Mean over all k x k sliding windows of the per-window MSE (0-255 scale)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    h, w = a.shape[:2]
    if k < 1:
        raise ValueError(f"window k must be positive, got {k}")
    if k > min(h, w):
        raise ValueError(f"window k={k} exceeds image size {h}x{w}")
    diff = (a - b) * 255.0
    sq = diff * diff
    if sq.ndim == 3:
        sq = sq.mean(axis=2)
    per_window = _box_sum(sq, k) / (k * k)
    return float(per_window.mean())


@dataclass(frozen=True)
class MetricReport:
    """Quality scores for one (restored, ground-truth) pair."""

    image_id: str
    dssim: float
    lmse: float
    mse: float
    window_k: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    restored: np.ndarray,
    truth: np.ndarray,
    image_id: str = "",
    window_k: int = 1,
    ssim_window: int = DEFAULT_WINDOW,
) -> MetricReport:
    return MetricReport(
        image_id=image_id,
        dssim=dssim(restored, truth, window=ssim_window),
        lmse=lmse(restored, truth, k=window_k),
        mse=mse(restored, truth),
        window_k=window_k,
    )


def write_records(reports: Iterable[MetricReport], path) -> None:
    """Line-delimited JSON, one record per image."""
    with open(path, "w") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_dict(), sort_keys=True))
            fh.write("\n")


def read_records(path) -> list[MetricReport]:
    reports = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                reports.append(MetricReport(**json.loads(line)))
    return reports


def format_table(reports: Iterable[MetricReport], mean_row: bool = True) -> str:
    """Human-readable DSSIM/LMSE/MSE table, one row per image."""
    reports = list(reports)
    rows = [(r.image_id or "-", f"{r.dssim:.4f}", f"{r.lmse:.2f}", f"{r.mse:.2f}") for r in reports]
    if mean_row and reports:
        rows.append(
            (
                "mean",
                f"{np.mean([r.dssim for r in reports]):.4f}",
                f"{np.mean([r.lmse for r in reports]):.2f}",
                f"{np.mean([r.mse for r in reports]):.2f}",
            )
        )
    header = ("image", "DSSIM", "LMSE", "MSE")
    widths = [max(len(header[i]), *(len(row[i]) for row in rows)) if rows else len(header[i]) for i in range(4)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * widths[i] for i in range(4)),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)
