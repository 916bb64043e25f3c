"""Kernel-smoothed interpolation of a raw map onto per-cell lattices.

Every non-empty subregion receives the same regular lattice of points
(pitch ``grid_spacing``, centred in the cell bounds), so all subregions
expose an equal number of reference points. Each feature value at a
lattice point is the Nadaraya-Watson kernel-regression estimate over the
raw samples that observe the feature within a cutoff radius, using a
Matern kernel. Estimates are rounded to integer dBm; results at or below
-100 dBm are dropped as non-measurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import FplocError
from .model import Fingerprint, LabeledSample, Rfm, SubregionIndex

#: samples beyond cutoff_factor * length_scale contribute nothing
DEFAULT_CUTOFF_FACTOR = 3.0


@dataclass(frozen=True)
class GriddedRfm:
    """A reference map resampled onto equal per-cell lattices.

    Attributes:
        grid_spacing: lattice pitch in metres.
        xy: (N, 2) lattice locations in cell-major, then row-major order.
        observations: per-point feature id -> integer dBm in [-99, 0].
        cell_of_point: (N,) cell index of every lattice point.
        alpha: lattice points per non-empty subregion.
    """

    grid_spacing: float
    xy: np.ndarray
    observations: tuple[dict[str, int], ...]
    cell_of_point: np.ndarray
    alpha: int

    def __len__(self) -> int:
        return len(self.observations)

    def points(self) -> Iterator[tuple[tuple[float, float], Fingerprint]]:
        """Iterate (location, fingerprint) pairs."""
        for i, obs in enumerate(self.observations):
            loc = (float(self.xy[i, 0]), float(self.xy[i, 1]))
            yield loc, Fingerprint({k: float(v) for k, v in obs.items()})

    def as_samples(self) -> list[LabeledSample]:
        return [LabeledSample(loc, fp) for loc, fp in self.points()]

    def feature_ids(self) -> frozenset[str]:
        out: set[str] = set()
        for obs in self.observations:
            out.update(obs)
        return frozenset(out)

    def subset(self, point_indices: Sequence[int]) -> "GriddedRfm":
        """A new GriddedRfm holding only the given points (order preserved)."""
        idx = np.asarray(point_indices, dtype=int)
        cells = self.cell_of_point[idx]
        counts = np.bincount(cells, minlength=0)
        alpha = int(counts.max()) if len(idx) else 0
        return GriddedRfm(
            grid_spacing=self.grid_spacing,
            xy=self.xy[idx],
            observations=tuple(self.observations[i] for i in idx),
            cell_of_point=cells,
            alpha=alpha,
        )


def matern_kernel(r: np.ndarray, length_scale: float, nu: float = 2.5) -> np.ndarray:
    """Matern covariance of distance ``r`` for nu in {0.5, 1.5, 2.5}."""
    s = np.asarray(r, dtype=float) / length_scale
    if nu == 0.5:
        return np.exp(-s)
    if nu == 1.5:
        t = math.sqrt(3.0) * s
        return (1.0 + t) * np.exp(-t)
    if nu == 2.5:
        t = math.sqrt(5.0) * s
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    raise ValueError(f"unsupported Matern smoothness nu={nu}; use 0.5, 1.5 or 2.5")


def cell_lattice(
    bounds: tuple[float, float, float, float], spacing: float
) -> np.ndarray:
    """(n, 2) lattice of pitch ``spacing`` centred in ``bounds``, row-major."""
    x0, y0, x1, y1 = bounds
    xs = _axis_lattice(x0, x1 - x0, spacing)
    ys = _axis_lattice(y0, y1 - y0, spacing)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _axis_lattice(start: float, extent: float, spacing: float) -> np.ndarray:
    n = max(1, math.floor(extent / spacing + 1e-9))
    margin = (extent - (n - 1) * spacing) / 2.0
    return start + margin + spacing * np.arange(n)


def _round_half_away(values: np.ndarray) -> np.ndarray:
    return np.where(values < 0, np.ceil(values - 0.5), np.floor(values + 0.5))


def densify(
    rfm: Rfm,
    index: SubregionIndex,
    spacing: float = 0.2,
    length_scale: float = 1.0,
    nu: float = 2.5,
    cutoff_factor: float = DEFAULT_CUTOFF_FACTOR,
) -> GriddedRfm:
    """Resample ``rfm`` onto per-cell lattices by kernel regression.

    For each lattice point p and feature f the estimate is
    ``sum_j K(|p - l_j|) v_j / sum_j K(|p - l_j|)`` over raw samples j that
    observe f within ``cutoff_factor * length_scale`` of p. A feature no
    sample observes within the radius is absent at p. Being a convex
    combination, each estimate lies within the range of its contributors.

    Raises:
        FplocError("empty-rfm"): no samples at all.
    """
    if spacing <= 0 or length_scale <= 0:
        raise ValueError("spacing and length_scale must be positive")
    if not rfm.samples:
        raise FplocError("empty-rfm", "cannot densify an empty reference map")

    sample_xy = np.array([s.location for s in rfm.samples], dtype=float)
    by_feature: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    collect: dict[str, tuple[list[int], list[float]]] = {}
    for i, s in enumerate(rfm.samples):
        for fid, rss in s.fingerprint.observations.items():
            rows, vals = collect.setdefault(fid, ([], []))
            rows.append(i)
            vals.append(rss)
    for fid, (rows, vals) in collect.items():
        by_feature[fid] = (np.array(rows, dtype=int), np.array(vals, dtype=float))

    cutoff = cutoff_factor * length_scale
    xy_blocks: list[np.ndarray] = []
    obs_out: list[dict[str, int]] = []
    cell_ids: list[int] = []
    alpha: int | None = None

    for cell in index.cells:
        if cell.is_empty:
            continue
        lattice = cell_lattice(cell.bounds, spacing)
        if alpha is None:
            alpha = len(lattice)
        elif len(lattice) != alpha:
            raise AssertionError("per-cell lattice sizes must be equal")

        diff = lattice[:, None, :] - sample_xy[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        weights = np.where(dist <= cutoff, matern_kernel(dist, length_scale, nu), 0.0)

        point_obs: list[dict[str, int]] = [{} for _ in range(len(lattice))]
        for fid in sorted(by_feature):
            rows, vals = by_feature[fid]
            w = weights[:, rows]
            den = w.sum(axis=1)
            reachable = den > 0.0
            if not reachable.any():
                continue
            est = np.zeros(len(lattice))
            est[reachable] = (w[reachable] @ vals) / den[reachable]
            est = np.minimum(_round_half_away(est), 0.0)
            for p in np.nonzero(reachable & (est > -100.0))[0]:
                point_obs[p][fid] = int(est[p])

        xy_blocks.append(lattice)
        obs_out.extend(point_obs)
        cell_ids.extend([cell.cell_index] * len(lattice))

    if alpha is None:
        raise FplocError("empty-rfm", "no non-empty subregion to densify")

    return GriddedRfm(
        grid_spacing=spacing,
        xy=np.vstack(xy_blocks),
        observations=tuple(obs_out),
        cell_of_point=np.array(cell_ids, dtype=int),
        alpha=alpha,
    )


def as_gridded(rfm: Rfm, index: SubregionIndex, spacing: float = 0.2) -> GriddedRfm:
    """Reinterpret already-gridded samples (a densify output read back from
    disk) as a GriddedRfm, using the partition for the cell assignment."""
    xy = np.array([s.location for s in rfm.samples], dtype=float)
    cells = np.array([index.assignment[i] for i in range(len(rfm.samples))], dtype=int)
    observations = tuple(
        {fid: int(round(v)) for fid, v in s.fingerprint.observations.items()}
        for s in rfm.samples
    )
    counts = np.bincount(cells)
    return GriddedRfm(
        grid_spacing=spacing,
        xy=xy,
        observations=observations,
        cell_of_point=cells,
        alpha=int(counts.max()) if len(counts) else 0,
    )
