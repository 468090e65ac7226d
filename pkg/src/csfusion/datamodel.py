"""Core value types: spectral cubes, filter banks, pattern cubes and label maps.

Cubes are stored as ``(rows, cols, bands)`` float64 arrays. The flat-vector
view uses the linear index ``m + (n-1)*M + (b-1)*M*N`` (1-based), which is
numpy's Fortran order on the 3-D array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Shapes or lengths do not agree."""


class ConfigurationError(ValueError):
    """Parameters violate a divisibility or range constraint."""


class ValidationError(ValueError):
    """A domain type invariant is violated."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralCube:
    """Real-valued ``rows x cols x bands`` raster."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValidationError(f"cube must be 3-D with positive dims, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("cube contains NaN or Inf entries")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __repr__(self):
        return f"SpectralCube(rows={self.rows}, cols={self.cols}, bands={self.bands})"


def cube_as_vector(cube: SpectralCube) -> np.ndarray:
    """Flatten a cube in band-sequential, column-major-within-band order."""
    return cube.data.ravel(order="F")


def vector_as_cube(v, rows: int, cols: int, bands: int) -> SpectralCube:
    """Inverse of :func:`cube_as_vector`."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != rows * cols * bands:
        raise DimensionError(
            f"vector of length {v.size} cannot fill a {rows}x{cols}x{bands} cube "
            f"({rows * cols * bands} entries)"
        )
    return SpectralCube(v.reshape((rows, cols, bands), order="F"))


def linear_index(m: int, n: int, b: int, rows: int, cols: int) -> int:
    """1-based linear index of voxel ``(m, n, b)`` (all 1-based)."""
    return m + (n - 1) * rows + (b - 1) * rows * cols


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Binary ``bands x count`` matrix whose columns are filter responses.

    Columns must be non-empty, pairwise disjoint and jointly cover every band.
    """

    responses: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.responses)
        if r.ndim != 2 or min(r.shape) < 1:
            raise ValidationError(f"filter bank must be a non-empty 2-D matrix, got shape {r.shape}")
        if not np.all((r == 0) | (r == 1)):
            raise ValidationError("filter responses must be binary")
        r = _readonly(r.astype(np.int8))
        if np.any(r.sum(axis=0) == 0):
            raise ValidationError("every filter must pass at least one band")
        if np.any(r.sum(axis=1) != 1):
            raise ValidationError("filters must be non-overlapping and cover every band")
        object.__setattr__(self, "responses", r)

    @property
    def bands(self) -> int:
        return self.responses.shape[0]

    @property
    def count(self) -> int:
        return self.responses.shape[1]

    def band_to_filter(self) -> np.ndarray:
        """0-based filter index covering each band."""
        return np.argmax(self.responses, axis=1)


@dataclass(frozen=True, eq=False)
class PatternCube:
    """Per-pixel filter indices, 1-based, shape ``rows x cols x snapshots``."""

    indices: np.ndarray
    filter_count: int

    def __post_init__(self):
        s = np.asarray(self.indices)
        if s.ndim != 3 or min(s.shape) < 1:
            raise ValidationError(f"pattern cube must be 3-D with positive dims, got shape {s.shape}")
        if not np.issubdtype(s.dtype, np.integer):
            if not np.all(s == np.round(s)):
                raise ValidationError("pattern indices must be integers")
        s = s.astype(np.int64)
        p = int(self.filter_count)
        if p < 1:
            raise ValidationError("filter_count must be positive")
        if s.min() < 1 or s.max() > p:
            raise ValidationError(f"pattern indices must lie in 1..{p}")
        if s.shape[2] <= p:
            srt = np.sort(s, axis=2)
            if np.any(srt[:, :, 1:] == srt[:, :, :-1]):
                raise ValidationError("pattern entries must be distinct per pixel when snapshots <= filter_count")
        object.__setattr__(self, "indices", _readonly(s))
        object.__setattr__(self, "filter_count", p)

    @property
    def rows(self) -> int:
        return self.indices.shape[0]

    @property
    def cols(self) -> int:
        return self.indices.shape[1]

    @property
    def snapshots(self) -> int:
        return self.indices.shape[2]


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Integer class map; 0 marks unlabeled pixels, classes are ``1..class_count``."""

    labels: np.ndarray
    class_count: int | None = None

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or min(lab.shape) < 1:
            raise ValidationError(f"label map must be 2-D, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            if not np.all(lab == np.round(lab)):
                raise ValidationError("labels must be integers")
        lab = lab.astype(np.int64)
        if lab.min() < 0:
            raise ValidationError("labels must be non-negative")
        if not np.any(lab > 0):
            raise ValidationError("label map has no labeled pixels")
        c = int(lab.max()) if self.class_count is None else int(self.class_count)
        if lab.max() > c:
            raise ValidationError(f"label {lab.max()} exceeds class_count {c}")
        object.__setattr__(self, "labels", _readonly(lab))
        object.__setattr__(self, "class_count", c)

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]
