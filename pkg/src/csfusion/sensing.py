"""Matrix-free forward models of the dual-arm 3D-CASSI system.

Everything here works directly on cubes by summation; the sparse matrices in
:mod:`csfusion.operators` describe the same maps and are checked against
these functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aperture import ApertureDesign
from .datamodel import (
    DimensionError,
    FilterBank,
    PatternCube,
    SpectralCube,
    ValidationError,
    cube_as_vector,
)


class NoiseDomainError(ValueError):
    """Noise model applied outside its domain (e.g. Poisson on negative data)."""


def _filter_responses(F: SpectralCube, bank: FilterBank) -> np.ndarray:
    if F.bands != bank.bands:
        raise DimensionError(f"scene has {F.bands} bands but filter bank expects {bank.bands}")
    return np.einsum("mnl,lk->mnk", F.data, bank.responses.astype(np.float64))


def _block_mean(a: np.ndarray, p: int) -> np.ndarray:
    """Mean over whole ``p x p`` blocks; trailing rows/cols that do not fill a block are dropped."""
    M, N = a.shape[:2]
    if p < 1 or p > M or p > N:
        raise DimensionError(f"spatial factor p={p} must lie in 1..min({M}, {N})")
    Mp, Np = M // p, N // p
    return a[:Mp * p, :Np * p].reshape(Mp, p, Np, p, -1).mean(axis=(1, 3))


def _select(responses: np.ndarray, S: PatternCube) -> np.ndarray:
    if responses.shape[:2] != (S.rows, S.cols):
        raise DimensionError(
            f"pattern grid {S.rows}x{S.cols} does not match measurement grid "
            f"{responses.shape[0]}x{responses.shape[1]}"
        )
    if S.filter_count > responses.shape[2]:
        raise DimensionError(f"patterns index {S.filter_count} filters but only {responses.shape[2]} exist")
    return np.take_along_axis(responses, S.indices - 1, axis=2)


def fused_features_reference(F: SpectralCube, hs_bank: FilterBank) -> SpectralCube:
    """Scene response to each HS filter, band ``k`` <-> filter ``k``."""
    return SpectralCube(_filter_responses(F, hs_bank))


def acquire_cmsi(F: SpectralCube, ms_bank: FilterBank, S_ms: PatternCube) -> SpectralCube:
    """High-resolution multispectral snapshots, one pattern-selected MS filter per pixel."""
    return SpectralCube(_select(_filter_responses(F, ms_bank), S_ms))


def acquire_chsi(F: SpectralCube, hs_bank: FilterBank, S_hs: PatternCube, p: int) -> SpectralCube:
    """Low-resolution hyperspectral snapshots: p x p block average of the selected HS filter response.

    The grid is ``floor(M/p) x floor(N/p)``; a remainder strip narrower than
    ``p`` is not seen by this arm.
    """
    return SpectralCube(_select(_block_mean(_filter_responses(F, hs_bank), p), S_hs))


def spectral_decimate(F: SpectralCube, q: int) -> SpectralCube:
    """Sum each run of ``q`` contiguous bands."""
    if q < 1 or F.bands % q:
        raise DimensionError(f"spectral factor q={q} must divide {F.bands} bands")
    return SpectralCube(F.data.reshape(F.rows, F.cols, F.bands // q, q).sum(axis=3))


def spatial_decimate(F: SpectralCube, p: int) -> SpectralCube:
    """Per-band mean over non-overlapping ``p x p`` blocks (remainder strip dropped)."""
    return SpectralCube(_block_mean(F.data, p))


def add_gaussian_noise(y: SpectralCube, snr_db: float, seed: int) -> SpectralCube:
    """Additive white Gaussian noise with variance ``mean(y**2) / 10**(snr_db/10)``.

    ``snr_db = inf`` disables the noise.
    """
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise NoiseDomainError(f"invalid SNR {snr_db}")
    if snr_db == math.inf:
        return y
    sigma = math.sqrt(float(np.mean(y.data ** 2)) / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    return SpectralCube(y.data + sigma * rng.standard_normal(y.shape))


def poisson_scale(y: SpectralCube, snr_db: float) -> float:
    """Photon scale ``alpha`` giving ``snr_db`` on the same power-ratio scale as the Gaussian model.

    ``var(Poisson(alpha*y)/alpha) = y/alpha``, so the expected SNR is
    ``alpha * mean(y**2) / mean(y)``.
    """
    mean_y = float(np.mean(y.data))
    if mean_y <= 0:
        return math.inf
    return 10.0 ** (snr_db / 10.0) * mean_y / float(np.mean(y.data ** 2))


def add_poisson_noise(
    y: SpectralCube, snr_db: float | None, seed: int, alpha: float | None = None
) -> SpectralCube:
    """Signal-dependent noise ``Poisson(alpha*y)/alpha``.

    ``alpha`` is derived from ``snr_db`` via :func:`poisson_scale` unless given.
    """
    if np.any(y.data < 0):
        raise NoiseDomainError("Poisson noise requires non-negative measurements")
    if alpha is None:
        if snr_db is None:
            raise ValueError("give snr_db or alpha")
        if snr_db == math.inf:
            return y
        alpha = poisson_scale(y, snr_db)
    if not alpha > 0:
        raise NoiseDomainError(f"photon scale must be positive, got {alpha}")
    if alpha == math.inf:
        return y
    rng = np.random.default_rng(seed)
    return SpectralCube(rng.poisson(alpha * y.data) / alpha)


def empirical_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    clean = np.asarray(clean, dtype=np.float64)
    err = np.asarray(noisy, dtype=np.float64) - clean
    return 10.0 * math.log10(float(np.mean(clean ** 2)) / float(np.mean(err ** 2)))


NOISE_KINDS = ("none", "gaussian", "poisson")


@dataclass(frozen=True)
class NoiseDescriptor:
    kind: str = "none"
    snr_db: float | None = None
    seed: int = 0
    # photon scale actually used per arm (Poisson only), recorded for provenance
    poisson_alpha: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.kind != "none" and self.snr_db is None:
            raise ValidationError(f"{self.kind} noise needs snr_db")


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    y_ms: SpectralCube
    y_hs: SpectralCube
    design: ApertureDesign
    noise: NoiseDescriptor = NoiseDescriptor()

    def __post_init__(self):
        d = self.design
        if self.y_ms.shape != (d.rows, d.cols, d.W):
            raise ValidationError(f"y_ms shape {self.y_ms.shape} inconsistent with design")
        if self.y_hs.shape != (d.rows // d.p, d.cols // d.p, d.K):
            raise ValidationError(f"y_hs shape {self.y_hs.shape} inconsistent with design")

    def stacked(self) -> np.ndarray:
        """Measurement vector ``[vec(y_ms); vec(y_hs)]``."""
        return np.concatenate([cube_as_vector(self.y_ms), cube_as_vector(self.y_hs)])


def simulate(
    F: SpectralCube,
    design: ApertureDesign,
    noise: str = "none",
    snr_db: float | None = None,
    seed: int = 0,
) -> MeasurementSet:
    """Acquire both arms and corrupt them with the requested noise model."""
    if (F.rows, F.cols, F.bands) != (design.rows, design.cols, design.bands):
        raise DimensionError(
            f"scene {F.rows}x{F.cols}x{F.bands} does not match design "
            f"{design.rows}x{design.cols}x{design.bands}"
        )
    y_ms = acquire_cmsi(F, design.ms_bank, design.ms_patterns)
    y_hs = acquire_chsi(F, design.hs_bank, design.hs_patterns, design.p)
    alphas = {}
    if noise == "gaussian":
        y_ms = add_gaussian_noise(y_ms, snr_db, seed)
        y_hs = add_gaussian_noise(y_hs, snr_db, seed + 1)
    elif noise == "poisson":
        alphas = {"ms": poisson_scale(y_ms, snr_db), "hs": poisson_scale(y_hs, snr_db)}
        y_ms = add_poisson_noise(y_ms, snr_db, seed, alpha=alphas["ms"])
        y_hs = add_poisson_noise(y_hs, snr_db, seed + 1, alpha=alphas["hs"])
    desc = NoiseDescriptor(noise, snr_db, seed, alphas)
    return MeasurementSet(y_ms, y_hs, design, desc)
