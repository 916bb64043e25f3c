"""Online position estimation against a precomputed bundle.

A query runs three steps, touching nothing but the bundle:

1. rank subregions by key-set similarity and keep the top m;
2. fuse the candidate feature set: features the user observed that are
   selected in at least one candidate subregion, ranked by how many
   candidate subregions selected them, truncated to h (h = -1 keeps all);
3. estimate the position by inverse-distance-weighted kNN or by grid MAP,
   restricted to the candidate subregions' grid points and the candidate
   features.

The work per query is therefore bounded by (grid points per subregion) x m
x h, independent of the total region size and feature count.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bundle import PrecomputedBundle
from .errors import FplocError
from .likelihood import log_discrete_gaussian
from .model import RSS_FLOOR, Fingerprint
from .subregion import rank_keysets

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidateFeatureSet:
    """Features used for one query, most-frequently-selected first."""

    features: tuple[str, ...]
    h: int


@dataclass(frozen=True)
class Estimate:
    """A position fix; ``fallback`` marks value-free cell-centroid estimates."""

    position: tuple[float, float]
    fallback: bool = False


def candidate_features(
    fingerprint: Fingerprint,
    cells: Sequence[int],
    selected_by_cell: Sequence[tuple[str, ...]],
    h: int,
) -> CandidateFeatureSet:
    """Intersect the user's keys with the candidate cells' selected features.

    Features are ranked by the number of candidate cells selecting them
    (descending), ties by feature id; the top h survive (all when h = -1).

    Raises:
        FplocError("no-common-features"): the fingerprint shares no feature
            with any candidate cell's selection.
    """
    if not cells:
        raise FplocError("bad-m", "no candidate cells given")
    if h != -1 and h < 1:
        raise ValueError(f"h must be -1 or >= 1, got {h}")
    counts: Counter[str] = Counter()
    user_keys = fingerprint.keys
    for c in cells:
        for fid in selected_by_cell[c]:
            if fid in user_keys:
                counts[fid] += 1
    if not counts:
        raise FplocError(
            "no-common-features",
            "fingerprint shares no selected feature with the candidate subregions",
        )
    ranked = sorted(counts, key=lambda fid: (-counts[fid], fid))
    if h != -1:
        ranked = ranked[:h]
    return CandidateFeatureSet(features=tuple(ranked), h=h)


def knn_estimate(
    fingerprint: Fingerprint,
    candidates: CandidateFeatureSet,
    bundle: PrecomputedBundle,
    cells: Sequence[int],
    k: int | None = None,
) -> np.ndarray:
    """Inverse-distance-weighted average of the k nearest grid points.

    Feature vectors cover exactly the candidate features; values missing on
    either side are imputed at the -100 dBm floor. An exact feature-space
    match short-circuits to the unweighted centroid of all zero-distance
    grid points.

    Raises:
        FplocError("insufficient-candidates"): fewer than k grid points.
    """
    k = bundle.knn_k if k is None else k
    if k < 1:
        raise ValueError("k must be >= 1")
    runtime = bundle.runtime()
    rows = runtime.rows_for_cells(cells)
    if len(rows) < k:
        raise FplocError(
            "insufficient-candidates",
            f"{len(rows)} grid points in the selected cells but k={k}",
        )
    feats = sorted(candidates.features)
    cols = [runtime.feature_cols[f] for f in feats if f in runtime.feature_cols]
    grid = runtime.values[np.ix_(rows, cols)]
    grid = np.where(np.isnan(grid), RSS_FLOOR, grid)
    user = np.array(
        [fingerprint.observations.get(f, RSS_FLOOR) for f in feats if f in runtime.feature_cols]
    )
    diff = grid - user[None, :]
    d2 = (diff * diff).sum(axis=1)

    if (d2 == 0.0).any():
        return runtime.xy[rows[d2 == 0.0]].mean(axis=0)

    order = np.lexsort((rows, d2))[:k]
    d = np.sqrt(d2[order])
    weights = 1.0 / d
    weights = weights / weights.sum()
    return weights @ runtime.xy[rows[order]]


def map_estimate(
    fingerprint: Fingerprint,
    candidates: CandidateFeatureSet,
    bundle: PrecomputedBundle,
    cells: Sequence[int],
    sigma: float | None = None,
    p_miss: float | None = None,
) -> np.ndarray:
    """Highest-posterior grid location under per-feature independence.

    Each candidate feature contributes a truncated-discretised Gaussian
    likelihood around the stored reference value; features absent at a grid
    point (or unobserved by the user) contribute the flat miss likelihood
    ``p_miss``. Scores accumulate in the log domain; ties go to the lowest
    global grid index.

    Raises:
        FplocError("insufficient-candidates"): no grid point in the cells.
        FplocError("degenerate-posterior"): all posteriors are zero (only
            possible with p_miss = 0).
    """
    sigma = bundle.sigma if sigma is None else sigma
    p_miss = bundle.p_miss if p_miss is None else p_miss
    runtime = bundle.runtime()
    rows = runtime.rows_for_cells(cells)
    if len(rows) == 0:
        raise FplocError(
            "insufficient-candidates", "selected cells contain no grid points"
        )
    log_p_miss = np.log(p_miss) if p_miss > 0 else -np.inf

    feats = sorted(candidates.features)
    cols = [runtime.feature_cols[f] for f in feats if f in runtime.feature_cols]
    mu = runtime.values[np.ix_(rows, cols)]
    user = np.array(
        [
            fingerprint.observations.get(f, np.nan)
            for f in feats
            if f in runtime.feature_cols
        ]
    )
    present = ~np.isnan(mu) & ~np.isnan(user)[None, :]
    loglik = np.full(mu.shape, log_p_miss)
    if present.any():
        user_grid = np.broadcast_to(user[None, :], mu.shape)
        loglik[present] = log_discrete_gaussian(
            user_grid[present], mu[present], sigma
        )
    score = runtime.log_prior[rows] + loglik.sum(axis=1)
    n_dropped = len(feats) - len(cols)  # candidate features with no stored values
    if n_dropped:
        score = score + n_dropped * log_p_miss

    best = int(np.argmax(score))
    if np.isneginf(score[best]):
        raise FplocError(
            "degenerate-posterior",
            "all candidate locations have zero posterior (p_miss = 0)",
        )
    return runtime.xy[rows[best]].copy()


def online_position(
    fingerprint: Fingerprint,
    bundle: PrecomputedBundle,
    m: int,
    h: int = -1,
    method: str = "map",
    k: int | None = None,
    sigma: float | None = None,
    p_miss: float | None = None,
) -> Estimate:
    """Full online pipeline: rank cells, fuse features, estimate.

    When the fingerprint shares no selected feature with the candidate
    subregions, the estimate falls back to the centre of the top-ranked
    subregion and is flagged.
    """
    if method not in ("knn", "map"):
        raise ValueError(f"method must be 'knn' or 'map', got {method!r}")
    runtime = bundle.runtime()
    ranked = rank_keysets(fingerprint.keys, runtime.keysets, m)
    try:
        cands = candidate_features(fingerprint, ranked, runtime.selected, h)
    except FplocError as exc:
        if exc.code != "no-common-features":
            raise
        top = bundle.cells[ranked[0]]
        logger.warning(
            "no common features with the %d candidate subregions; "
            "falling back to the centre of cell %d",
            m,
            top.cell_index,
        )
        return Estimate(position=top.center, fallback=True)

    if method == "knn":
        xy = knn_estimate(fingerprint, cands, bundle, ranked, k=k)
    else:
        xy = map_estimate(fingerprint, cands, bundle, ranked, sigma=sigma, p_miss=p_miss)
    return Estimate(position=(float(xy[0]), float(xy[1])), fallback=False)
