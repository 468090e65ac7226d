"""Synthetic labeled scenes for dataset-free runs."""
from __future__ import annotations

import numpy as np

from .datamodel import LabelMap, SpectralCube


def class_signatures(bands: int, classes: int, seed: int) -> np.ndarray:
    """``classes x bands`` smooth spectra: a baseline plus one Gaussian bump per class."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, bands)
    centers = (np.arange(classes) + rng.uniform(0.25, 0.75, classes)) / classes
    widths = rng.uniform(0.08, 0.2, classes)
    heights = rng.uniform(0.4, 0.7, classes)
    base = rng.uniform(0.15, 0.3, classes)
    return base[:, None] + heights[:, None] * np.exp(-0.5 * ((grid[None, :] - centers[:, None]) / widths[:, None]) ** 2)


def synthetic_scene(
    rows: int = 64,
    cols: int = 64,
    bands: int = 16,
    classes: int = 4,
    regions: int = 16,
    pixel_noise: float = 0.03,
    seed: int = 0,
) -> tuple[SpectralCube, LabelMap]:
    """Piecewise-constant class regions (Voronoi cells) filled with per-class spectra.

    Each pixel gets its class signature times a random gain plus independent
    Gaussian spectral jitter of standard deviation ``pixel_noise``. Every
    class owns at least one region and, grid permitting, two pixels so a
    stratified split always has a test pixel.
    """
    rng = np.random.default_rng(seed)
    sites = rng.uniform(0, 1, (regions, 2)) * (rows, cols)
    region_class = np.concatenate([np.arange(classes), rng.integers(0, classes, max(regions - classes, 0))])
    rng.shuffle(region_class)
    rr, cc = np.meshgrid(np.arange(rows) + 0.5, np.arange(cols) + 0.5, indexing="ij")
    d2 = (rr[..., None] - sites[:, 0]) ** 2 + (cc[..., None] - sites[:, 1]) ** 2
    labels = region_class[np.argmin(d2, axis=2)] + 1
    # a cell can miss every pixel centre; give each class the pixels nearest its first site
    need = min(2, rows * cols // classes)
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=classes + 1)
    for c in range(1, classes + 1):
        site = np.flatnonzero(region_class == c - 1)[0]
        for i in np.argsort(d2[..., site], axis=None, kind="stable"):
            if counts[c] >= need:
                break
            owner = flat[i]
            if owner != c and counts[owner] > need:
                flat[i] = c
                counts[owner] -= 1
                counts[c] += 1
    sig = class_signatures(bands, classes, seed + 1)
    gain = 1.0 + 0.05 * rng.standard_normal((rows, cols, 1))
    cube = sig[labels - 1] * gain + pixel_noise * rng.standard_normal((rows, cols, bands))
    return SpectralCube(np.clip(cube, 0.0, None)), LabelMap(labels, classes)
