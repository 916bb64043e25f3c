"""Core data model: fingerprints, the reference map, and its grid partition.

A fingerprint is a set of (feature id, RSS) pairs. Feature ids are opaque
strings (typically a MAC address plus a band tag); RSS values are dBm.
Values at or below the measurability floor of -100 dBm are never stored:
"non-measurable" is encoded by key absence so that key-set operations stay
exact.

All types are immutable after construction and safe to share across
concurrent readers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import FplocError

#: dBm; a feature measured at or below this level is treated as absent.
RSS_FLOOR = -100.0


@dataclass(frozen=True)
class Fingerprint:
    """Observations of location-dependent features at one place and time.

    Attributes:
        observations: feature id -> RSS in dBm. Each id appears once; all
            values lie in (-100, 0]. Exactly -100 dBm is forbidden in
            storage because it encodes "non-measurable".
        timestamp: optional capture time in seconds.
    """

    observations: Mapping[str, float]
    timestamp: float | None = None

    def __post_init__(self) -> None:
        for fid, rss in self.observations.items():
            if not isinstance(fid, str) or not fid:
                raise ValueError(f"feature id must be a non-empty string, got {fid!r}")
            if not (RSS_FLOOR < rss <= 0.0):
                raise ValueError(
                    f"rss {rss} dBm for {fid!r} outside ({RSS_FLOOR:g}, 0]; "
                    "non-measurable features must be omitted, not stored"
                )

    @property
    def keys(self) -> frozenset[str]:
        """The fingerprint's feature-id key set."""
        return frozenset(self.observations)

    def __len__(self) -> int:
        return len(self.observations)


@dataclass(frozen=True)
class LabeledSample:
    """A fingerprint tagged with the 2-D location (metres) it was taken at."""

    location: tuple[float, float]
    fingerprint: Fingerprint


@dataclass(frozen=True)
class RoiGeometry:
    """Axis-aligned region of interest tiled by square grid cells.

    The cell grid has ``ceil(width / cell_size)`` columns and
    ``ceil(height / cell_size)`` rows; cells are indexed row-major from the
    origin corner. When width or height is not a multiple of ``cell_size``
    the outermost cells extend past the RoI rectangle so that all cells
    keep the full cell footprint.
    """

    width: float
    height: float
    origin: tuple[float, float] = (0.0, 0.0)
    cell_size: float = 2.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"RoI extent must be positive, got {self.width}x{self.height}")
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def n_cols(self) -> int:
        return math.ceil(self.width / self.cell_size - 1e-9)

    @property
    def n_rows(self) -> int:
        return math.ceil(self.height / self.cell_size - 1e-9)

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    def contains(self, location: Sequence[float]) -> bool:
        """True when the point lies in the RoI rectangle (edges inclusive)."""
        x, y = location
        ox, oy = self.origin
        return ox <= x <= ox + self.width and oy <= y <= oy + self.height

    def cell_of(self, location: Sequence[float]) -> int:
        """Cell index containing a point; boundary points go to the lower cell.

        Raises:
            FplocError("outside-roi"): point outside the RoI rectangle.
        """
        if not self.contains(location):
            raise FplocError("outside-roi", f"location {tuple(location)} outside the RoI")
        x, y = location
        ox, oy = self.origin
        col = _axis_cell(x - ox, self.cell_size, self.n_cols)
        row = _axis_cell(y - oy, self.cell_size, self.n_rows)
        return row * self.n_cols + col

    def cell_bounds(self, cell: int) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of a cell; x1/y1 may exceed the RoI rectangle."""
        if not 0 <= cell < self.n_cells:
            raise FplocError("bad-cell", f"cell {cell} out of range [0, {self.n_cells})")
        row, col = divmod(cell, self.n_cols)
        ox, oy = self.origin
        x0 = ox + col * self.cell_size
        y0 = oy + row * self.cell_size
        return (x0, y0, x0 + self.cell_size, y0 + self.cell_size)


def _axis_cell(offset: float, size: float, count: int) -> int:
    # Points exactly on an interior gridline belong to the lower cell. The
    # lower clamp also covers subnormal offsets whose division underflows.
    if offset <= 0.0:
        return 0
    return min(max(math.ceil(offset / size) - 1, 0), count - 1)


@dataclass(frozen=True)
class Rfm:
    """Reference fingerprint map: location-tagged fingerprints over an RoI."""

    samples: tuple[LabeledSample, ...]
    roi: RoiGeometry
    feature_universe: frozenset[str]

    def __post_init__(self) -> None:
        if not self.samples:
            raise FplocError("empty-rfm", "reference map holds no samples")
        for i, sample in enumerate(self.samples):
            if not self.roi.contains(sample.location):
                raise ValueError(
                    f"sample {i} at {sample.location} lies outside the RoI rectangle"
                )
        union = frozenset().union(*(s.fingerprint.keys for s in self.samples))
        if union != self.feature_universe:
            raise ValueError("feature_universe must equal the union of sample key sets")

    @classmethod
    def build(cls, samples: Iterable[LabeledSample], roi: RoiGeometry) -> "Rfm":
        """Construct an Rfm, discovering the feature universe from the data."""
        samples = tuple(samples)
        if not samples:
            raise FplocError("empty-rfm", "reference map holds no samples")
        universe = frozenset().union(*(s.fingerprint.keys for s in samples))
        return cls(samples=samples, roi=roi, feature_universe=universe)


@dataclass(frozen=True)
class Subregion:
    """One cell of the RoI partition with its assigned samples."""

    cell_index: int
    bounds: tuple[float, float, float, float]
    sample_indices: tuple[int, ...]
    observable_features: frozenset[str]

    @property
    def is_empty(self) -> bool:
        return not self.sample_indices

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bounds
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


@dataclass(frozen=True)
class SubregionIndex:
    """Partition of the RoI into cells plus the sample-to-cell assignment.

    Empty cells are retained (with empty sample lists); they rank last in
    any key-set similarity ranking and cost nothing downstream.
    """

    roi: RoiGeometry
    cells: tuple[Subregion, ...]
    assignment: Mapping[int, int] = field(repr=False)

    def observable_features(self, cell: int) -> frozenset[str]:
        """Union of fingerprint key sets over the samples assigned to a cell."""
        if not 0 <= cell < len(self.cells):
            raise FplocError("bad-cell", f"cell {cell} out of range [0, {len(self.cells)})")
        return self.cells[cell].observable_features

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def non_empty_cells(self) -> tuple[int, ...]:
        return tuple(c.cell_index for c in self.cells if not c.is_empty)


def partition(rfm: Rfm, cell_size: float | None = None) -> SubregionIndex:
    """Assign every sample of ``rfm`` to its grid cell.

    Samples on a shared cell edge go to the cell with the lower index so
    the partition is deterministic.

    Raises:
        FplocError("empty-rfm"): the map holds no samples.
    """
    if not rfm.samples:
        raise FplocError("empty-rfm", "cannot partition an empty reference map")
    roi = rfm.roi if cell_size is None else replace(rfm.roi, cell_size=cell_size)

    members: dict[int, list[int]] = {c: [] for c in range(roi.n_cells)}
    assignment: dict[int, int] = {}
    for i, sample in enumerate(rfm.samples):
        cell = roi.cell_of(sample.location)
        members[cell].append(i)
        assignment[i] = cell

    cells = []
    for c in range(roi.n_cells):
        idx = tuple(members[c])
        if idx:
            observed = frozenset().union(*(rfm.samples[i].fingerprint.keys for i in idx))
        else:
            observed = frozenset()
        cells.append(
            Subregion(
                cell_index=c,
                bounds=roi.cell_bounds(c),
                sample_indices=idx,
                observable_features=observed,
            )
        )
    return SubregionIndex(roi=roi, cells=tuple(cells), assignment=assignment)
