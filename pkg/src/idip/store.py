"""Lossless image/mask I/O, the dataset triplet layout and synthetic fixtures.

All raster I/O is 8-bit PNG.  Lossy formats are rejected rather than
silently accepted: compression artefacts would corrupt mask edges and
every metric downstream.  Dataset layout::

    <root>/<id>/corrupted.png
    <root>/<id>/mask.png
    <root>/<id>/truth.png      (optional)

Masks store known pixels as white (>= 128) and damaged pixels as dark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .dip import DamageMask

__all__ = [
    "ImageFormatError",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "DatasetTriplet",
    "find_triplets",
    "make_fixture",
    "make_fixture_set",
    "FIXTURE_KINDS",
]

FIXTURE_KINDS = ("gradient", "texture", "checker")

_ACCEPTED_MODES = {"L", "LA", "RGB", "RGBA", "P", "1"}
_HIGH_DEPTH_MODES = {"I", "I;16", "I;16B", "I;16L", "I;16N", "F"}


class ImageFormatError(ValueError):
    """File is not a supported lossless 8-bit raster."""


def _open_checked(path) -> Image.Image:
    try:
        img = Image.open(path)
    except FileNotFoundError:
        raise
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a decodable raster file") from exc
    if img.format != "PNG":
        raise ImageFormatError(f"{path}: unsupported format {img.format!r}; only lossless PNG is accepted")
    if img.mode in _HIGH_DEPTH_MODES:
        raise ImageFormatError(f"{path}: unsupported bit depth (mode {img.mode!r}); use 8-bit images")
    if img.mode not in _ACCEPTED_MODES:
        raise ImageFormatError(f"{path}: unsupported pixel mode {img.mode!r}")
    return img


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG as an HxWx3 float32 array in [0, 1]."""
    img = _open_checked(path)
    rgb = img.convert("RGB")
    return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image(arr: np.ndarray, path) -> None:
    """Write an HxWx3 (or HxW) array as 8-bit PNG.

    Float inputs are taken to be unit-scale and are rounded to the
    nearest 8-bit level; a save/load round-trip of 8-bit data is
    bit-exact.
    """
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def load_mask(path) -> DamageMask:
    """Read a mask PNG: values >= 128 are known, below are damaged."""
    img = _open_checked(path)
    gray = np.asarray(img.convert("L"))
    return DamageMask((gray >= 128).astype(np.uint8))


def save_mask(mask: DamageMask, path) -> None:
    save_image((mask.grid * 255).astype(np.uint8), path)


@dataclass(frozen=True)
class DatasetTriplet:
    """Paths of one dataset entry; ground truth is optional."""

    id: str
    corrupted: Path
    mask: Path
    truth: Optional[Path] = None

    def load(self) -> tuple[np.ndarray, DamageMask, Optional[np.ndarray]]:
        image = load_image(self.corrupted)
        mask = load_mask(self.mask)
        truth = load_image(self.truth) if self.truth is not None else None
        if mask.shape != image.shape[:2]:
            raise ValueError(
                f"{self.id}: mask {mask.shape} does not match image {image.shape[:2]}"
            )
        if truth is not None and truth.shape != image.shape:
            raise ValueError(
                f"{self.id}: truth {truth.shape[:2]} does not match image {image.shape[:2]}"
            )
        return image, mask, truth


def find_triplets(root) -> list[DatasetTriplet]:
    """Discover `<root>/<id>/{corrupted,mask[,truth]}.png`, sorted by id."""
    root = Path(root)
    triplets = []
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    for entry in sorted(root.iterdir()):
        corrupted = entry / "corrupted.png"
        mask = entry / "mask.png"
        if not (entry.is_dir() and corrupted.exists() and mask.exists()):
            continue
        truth = entry / "truth.png"
        triplets.append(
            DatasetTriplet(
                id=entry.name,
                corrupted=corrupted,
                mask=mask,
                truth=truth if truth.exists() else None,
            )
        )
    return triplets


# ---------------------------------------------------------------------------
# synthetic fixtures


def _gradient_truth(size: int, rng: np.random.Generator) -> np.ndarray:
    """Two-axis color ramp with soft random-color discs on top.

    The discs carry content a smooth extrapolation cannot predict, so a
    fully damaged disc is only recoverable with outside information.
    """
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    r = xs / max(1, size - 1)
    g = ys / max(1, size - 1)
    b = (xs + ys) / max(1, 2 * size - 2)
    img = np.stack([r, g, b], axis=2)
    for _ in range(max(3, size // 16)):
        cy, cx = rng.uniform(0, size, 2)
        sigma = rng.uniform(size / 24, size / 12)
        color = rng.uniform(0, 1, 3)
        alpha = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma * sigma))
        img = img * (1 - alpha[..., None]) + color * alpha[..., None]
    return np.clip(img, 0.0, 1.0)


def _checker_truth(size: int, rng: np.random.Generator, cell: int = 8) -> np.ndarray:
    """Checkerboard whose cells carry random tints around two palettes.

    The grid is regular but each cell's exact color is sampled, so a
    cell hidden by the damage mask is not inferable from its neighbours.
    """
    ys, xs = np.mgrid[0:size, 0:size]
    cy, cx = ys // cell, xs // cell
    parity = (cy + cx) % 2
    dark = np.array([0.15, 0.20, 0.65])
    light = np.array([0.90, 0.85, 0.25])
    cells = (size + cell - 1) // cell
    tint = rng.uniform(-0.25, 0.25, size=(cells, cells, 3))
    base = np.where(parity[..., None] == 0, dark, light)
    return np.clip(base + tint[cy, cx], 0.0, 1.0)


def _texture_truth(size: int, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, size=(max(2, size // 8), max(2, size // 8), 3))
    img = np.kron(coarse, np.ones((8, 8, 1)))[:size, :size]
    for _ in range(2):
        img = _blur3(img)
    lo, hi = img.min(), img.max()
    return (img - lo) / max(hi - lo, 1e-9)


def _blur3(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy : dy + img.shape[0], dx : dx + img.shape[1]]
    return out / 9.0


def _blotch_mask(size: int, damage_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Random rectangles unioned until ~damage_fraction of pixels are damaged.

    The running total never exceeds the target and the loop stops within
    0.5% of it, so the final count sits inside the +-2% band.
    """
    total = size * size
    target = damage_fraction * total
    damaged = np.zeros((size, size), dtype=bool)
    attempts = 0
    while damaged.sum() < 0.995 * target:
        deficit = int(target - damaged.sum())
        if attempts > 50 * size:
            flat = np.flatnonzero(~damaged)
            damaged.flat[flat[: max(1, deficit)]] = True
            break
        hi = max(2, min(size // 4, math.isqrt(max(deficit, 4))))
        rh = int(rng.integers(2, hi + 1))
        rw = int(rng.integers(2, hi + 1))
        y = int(rng.integers(0, size - rh + 1))
        x = int(rng.integers(0, size - rw + 1))
        patch = damaged[y : y + rh, x : x + rw]
        new = int(rh * rw - patch.sum())
        if new <= deficit + 4:
            patch[:] = True
        attempts += 1
    return damaged


def make_fixture(kind: str, size: int, damage_fraction: float, seed: int, root) -> DatasetTriplet:
    """Write one synthetic triplet under `<root>/<kind>/` and return it."""
    if kind not in FIXTURE_KINDS:
        raise ValueError(f"fixture kind must be one of {FIXTURE_KINDS}, got {kind!r}")
    if not 0.0 < damage_fraction < 1.0:
        raise ValueError(f"damage_fraction must be in (0, 1), got {damage_fraction}")
    if size < 8:
        raise ValueError(f"fixture size must be >= 8, got {size}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), FIXTURE_KINDS.index(kind)]))
    if kind == "gradient":
        truth = _gradient_truth(size, rng)
    elif kind == "checker":
        truth = _checker_truth(size, rng)
    else:
        truth = _texture_truth(size, rng)
    truth8 = np.clip(np.rint(truth * 255.0), 0, 255).astype(np.uint8)

    damaged = _blotch_mask(size, damage_fraction, rng)
    corrupted8 = truth8.copy()
    corrupted8[damaged] = 0
    known8 = np.where(damaged, 0, 255).astype(np.uint8)

    base = Path(root) / kind
    save_image(corrupted8, base / "corrupted.png")
    save_image(known8, base / "mask.png")
    save_image(truth8, base / "truth.png")
    return DatasetTriplet(
        id=kind,
        corrupted=base / "corrupted.png",
        mask=base / "mask.png",
        truth=base / "truth.png",
    )


def make_fixture_set(root, size: int = 64, damage_fraction: float = 0.25, seed: int = 0) -> list[DatasetTriplet]:
    return [make_fixture(kind, size, damage_fraction, seed, root) for kind in FIXTURE_KINDS]
