"""Filter banks and colored coded-aperture pattern design for the two arms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import ConfigurationError, FilterBank, PatternCube

# fixed offsets so both arms draw from independent, reproducible streams
HS_SEED_OFFSET = 1
MS_SEED_OFFSET = 2


def make_box_filter_bank(bands: int, count: int) -> FilterBank:
    """Partition ``bands`` into ``count`` contiguous, equal-width filters."""
    if bands < 1 or count < 1 or bands % count:
        raise ConfigurationError(f"filter count {count} must divide band count {bands}")
    width = bands // count
    resp = np.zeros((bands, count), dtype=np.int8)
    for i in range(count):
        resp[i * width:(i + 1) * width, i] = 1
    return FilterBank(resp)


def derive_ms_filter_bank(hs: FilterBank, q: int) -> FilterBank:
    """Merge each run of ``q`` consecutive HS filters into one MS filter."""
    if q < 1 or hs.count % q:
        raise ConfigurationError(f"spectral factor q={q} must divide HS filter count {hs.count}")
    r = hs.responses.reshape(hs.bands, hs.count // q, q).sum(axis=2)
    return FilterBank(r)


def design_patterns(rows: int, cols: int, snapshots: int, filter_count: int, seed: int) -> PatternCube:
    """Assign each pixel the first ``snapshots`` entries of a random permutation of the filters.

    With ``snapshots == filter_count`` every pixel sees every filter exactly once.
    """
    if snapshots > filter_count:
        raise ConfigurationError(
            f"snapshots K={snapshots} exceeds filter count P={filter_count}; only K <= P is supported"
        )
    if min(rows, cols, snapshots) < 1:
        raise ConfigurationError("rows, cols and snapshots must be positive")
    rng = np.random.default_rng(seed)
    perm = np.argsort(rng.random((rows, cols, filter_count)), axis=2, kind="stable")
    return PatternCube(perm[:, :, :snapshots] + 1, filter_count)


@dataclass(frozen=True, eq=False)
class ApertureDesign:
    hs_bank: FilterBank
    ms_bank: FilterBank
    hs_patterns: PatternCube  # on the (M/p) x (N/p) grid, K snapshots
    ms_patterns: PatternCube  # on the M x N grid, W snapshots
    q: int
    p: int
    seed: int

    @property
    def K(self) -> int:
        return self.hs_patterns.snapshots

    @property
    def W(self) -> int:
        return self.ms_patterns.snapshots

    @property
    def rows(self) -> int:
        return self.ms_patterns.rows

    @property
    def cols(self) -> int:
        return self.ms_patterns.cols

    @property
    def bands(self) -> int:
        return self.hs_bank.bands


def design_dual_apertures(
    rows: int,
    cols: int,
    bands: int,
    q: int,
    p: int,
    seed: int,
    K: int | None = None,
    W: int | None = None,
) -> ApertureDesign:
    """Design filter banks and patterns for both arms.

    Defaults give ``K = bands / q`` HS filters (one snapshot each) and
    ``W = K / q`` MS snapshots, i.e. a 1/q spectral compression on each arm.
    The HS grid is ``floor(rows/p) x floor(cols/p)``.
    """
    if q < 1 or p < 1:
        raise ConfigurationError("q and p must be positive integers")
    if bands % q:
        raise ConfigurationError(f"spectral factor q={q} must divide band count L={bands}")
    if p > rows or p > cols:
        raise ConfigurationError(f"spatial factor p={p} exceeds the {rows}x{cols} grid")
    n_hs = bands // q
    if n_hs % q:
        raise ConfigurationError(f"q={q} must divide the HS filter count {n_hs} (L/q)")
    hs_bank = make_box_filter_bank(bands, n_hs)
    ms_bank = derive_ms_filter_bank(hs_bank, q)
    K = hs_bank.count if K is None else int(K)
    W = ms_bank.count if W is None else int(W)
    hs_patterns = design_patterns(rows // p, cols // p, K, hs_bank.count, seed + HS_SEED_OFFSET)
    ms_patterns = design_patterns(rows, cols, W, ms_bank.count, seed + MS_SEED_OFFSET)
    return ApertureDesign(hs_bank, ms_bank, hs_patterns, ms_patterns, q, p, seed)
