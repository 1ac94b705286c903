"""Clean/noisy pair generation, PNG loading, and PSNR/SSIM."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

# 11x11 Gaussian window, sigma 1.5, constants for unit peak
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass
class ImagePair:
    clean: np.ndarray  # C x H x W in [0, 1]
    noisy: np.ndarray
    sigma: float  # on the 0-255 scale
    image_id: str = ""


@dataclass
class DatasetConfig:
    source: str = "procedural"  # or "directory"
    directory: str | None = None
    patch_size: int = 32
    num_patches: int = 256
    patches_per_image: int = 8
    sigmas: list[float] = field(default_factory=lambda: [25.0])
    split: float = 0.8
    channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("procedural", "directory"):
            raise ValueError(f"unknown data source {self.source!r}")
        if self.source == "directory" and not self.directory:
            raise ValueError("directory source needs 'directory'")
        if self.patch_size < 1 or self.num_patches < 1:
            raise ValueError("patch_size and num_patches must be positive")
        if not 0.0 < self.split < 1.0:
            raise ValueError(f"split must lie in (0, 1), got {self.split}")
        if not self.sigmas or any(s < 0 for s in self.sigmas):
            raise ValueError("sigmas must be a nonempty list of nonnegative values")


def add_gaussian_noise(clean: np.ndarray, sigma_255: float, seed) -> np.ndarray:
    """clean + N(0, (sigma/255)^2) per element, clipped to [0, 1]."""
    if sigma_255 < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma_255}")
    clean = np.asarray(clean)
    if sigma_255 == 0:
        return clean.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(clean.shape) * (sigma_255 / 255.0)
    return np.clip(clean + noise, 0.0, 1.0).astype(clean.dtype, copy=False)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    r = len(g) // 2
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def _ssim_2d(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean SSIM over all valid 11x11 Gaussian windows, averaged over channels.

    Accepts H x W or C x H x W arrays.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ValueError(f"expected H x W or C x H x W, got {a.shape}")
    if a.shape[1] < SSIM_WIN or a.shape[2] < SSIM_WIN:
        raise ValueError(f"image {a.shape[1]}x{a.shape[2]} is smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    if np.array_equal(a, b):
        return 1.0
    return float(np.mean([_ssim_2d(a[c], b[c], peak) for c in range(a.shape[0])]))


# ----------------------------------------------------------------- clean patch synthesis


def _gradient(rng, c, p):
    yy, xx = np.mgrid[0:p, 0:p] / max(p - 1, 1)
    out = np.empty((c, p, p))
    for ch in range(c):
        a, bx, by = rng.uniform(0, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)
        out[ch] = a + bx * xx + by * yy
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo + 1e-12) * rng.uniform(0.5, 1.0) + rng.uniform(0, 0.25)


def _shapes(rng, c, p):
    out = np.ones((c, p, p)) * rng.uniform(0, 1, (c, 1, 1))
    yy, xx = np.mgrid[0:p, 0:p]
    for _ in range(rng.integers(2, 6)):
        color = rng.uniform(0, 1, (c, 1, 1))
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, p, 2)
            h, w = rng.integers(p // 8 + 1, p // 2 + 2, 2)
            mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            cy, cx = rng.uniform(0, p, 2)
            r = rng.uniform(p / 8, p / 3)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        out = np.where(mask[None], color, out)
    return out


def _checker(rng, c, p):
    cell = int(rng.integers(3, max(4, p // 3)))
    yy, xx = np.mgrid[0:p, 0:p]
    off = rng.integers(0, cell, 2)
    mask = (((yy + off[0]) // cell + (xx + off[1]) // cell) % 2).astype(bool)
    c0, c1 = rng.uniform(0, 1, (2, c, 1, 1))
    return np.where(mask[None], c0, c1)


def _texture(rng, c, p):
    s = rng.uniform(1.0, 4.0)
    base = ndimage.gaussian_filter(rng.standard_normal((p, p)), s, mode="wrap")
    base = (base - base.mean()) / (base.std() + 1e-12)
    tint = rng.uniform(0.3, 1.0, (c, 1, 1))
    return 0.5 + 0.2 * base[None] * tint + rng.uniform(-0.2, 0.2, (c, 1, 1))


_GENERATORS = (_gradient, _shapes, _checker, _texture)


def procedural_patch(rng: np.random.Generator, channels: int = 3, size: int = 32,
                     min_std: float = 0.05) -> np.ndarray:
    """One structured clean patch in [0, 1] with per-patch std above ``min_std``."""
    while True:
        gen = _GENERATORS[rng.integers(len(_GENERATORS))]
        img = gen(rng, channels, size)
        if rng.random() < 0.5:
            other = _GENERATORS[rng.integers(len(_GENERATORS))](rng, channels, size)
            t = rng.uniform(0.2, 0.8)
            img = t * img + (1 - t) * other
        img = np.clip(img, 0.0, 1.0)
        if img.std() > min_std:
            return img


def load_png(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def save_png(img: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    arr = np.clip(np.round(np.asarray(img).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


def _directory_patches(cfg: DatasetConfig, rng: np.random.Generator) -> list[np.ndarray]:
    root = Path(cfg.directory)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory {root} does not exist")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise FileNotFoundError(f"no PNG files in {root}")
    patches, errors = [], []
    p = cfg.patch_size
    for f in files:
        try:
            img = load_png(f)
        except Exception as exc:  # PIL raises several unrelated types
            errors.append(f"{f}: {exc}")
            continue
        _, h, w = img.shape
        if h < p or w < p:
            errors.append(f"{f}: {h}x{w} is smaller than patch size {p}")
            continue
        for _ in range(cfg.patches_per_image):
            y, x = rng.integers(0, h - p + 1), rng.integers(0, w - p + 1)
            patches.append(img[:, y:y + p, x:x + p].copy())
    if errors:
        raise OSError("unreadable images:\n  " + "\n  ".join(errors))
    return patches[:cfg.num_patches]


@dataclass
class Dataset:
    train: list[ImagePair]
    heldout: list[ImagePair]

    def batches(self, split: str, batch_size: int, seed: int, epoch: int = 0,
                shuffle: bool = True, dtype=np.float64) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """(noisy, clean) NCHW batches; order depends only on (seed, epoch)."""
        pairs = self.train if split == "train" else self.heldout
        order = np.arange(len(pairs))
        if shuffle:
            np.random.default_rng([seed, epoch]).shuffle(order)
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            noisy = np.stack([pairs[j].noisy for j in idx]).astype(dtype)
            clean = np.stack([pairs[j].clean for j in idx]).astype(dtype)
            yield noisy, clean


def make_dataset(cfg: DatasetConfig) -> Dataset:
    """Deterministic, disjoint train/held-out split of clean/noisy pairs.

    Patch ``i`` gets noise level ``sigmas[i % len(sigmas)]``.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    if cfg.source == "procedural":
        cleans = [procedural_patch(rng, cfg.channels, cfg.patch_size) for _ in range(cfg.num_patches)]
    else:
        cleans = _directory_patches(cfg, rng)
    n_train = int(round(cfg.split * len(cleans)))
    pairs = []
    for i, clean in enumerate(cleans):
        sigma = float(cfg.sigmas[i % len(cfg.sigmas)])
        noisy = add_gaussian_noise(clean, sigma, [cfg.seed, 1, i])
        pairs.append(ImagePair(clean, noisy, sigma, f"p{i:05d}"))
    perm = np.random.default_rng([cfg.seed, 2]).permutation(len(pairs))
    train = [pairs[i] for i in sorted(perm[:n_train])]
    heldout = [pairs[i] for i in sorted(perm[n_train:])]
    return Dataset(train, heldout)


def write_metrics_csv(rows: Sequence[dict], path: str | Path) -> None:
    """Rows with keys image_id, sigma, psnr, ssim; +inf PSNR is written as 'inf'."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "sigma", "psnr", "ssim"])
        for r in rows:
            w.writerow([r["image_id"], repr(float(r["sigma"])), repr(float(r["psnr"])), repr(float(r["ssim"]))])
