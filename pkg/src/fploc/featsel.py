"""Per-subregion feature selection by greedy search on positioning error.

Selection minimises the mean squared error of the positions a configured
estimator (weighted kNN or grid MAP) produces for validation samples when
restricted to the candidate feature set. Three searches are provided:

* forward greedy: add the feature with the largest loss reduction until the
  reduction is no more than ``epsilon`` (that last feature is discarded) or
  the subset reaches ``k_max``;
* backward greedy: start from all features and drop the feature whose
  removal increases the loss least, until the increase reaches ``phi``
  (that removal is undone) or the subset shrinks to ``k_min``;
* adaptive forward-backward: after every accepted forward step, drop
  features for as long as each drop costs at most ``nu`` times the forward
  gain. Features dropped here become candidates again later, so early
  mistakes made under correlated features get corrected.

With the empty feature set, the estimator degenerates to the coordinate-wise
median of all reference points; its MSE is the initial loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .densify import GriddedRfm
from .errors import FplocError
from .likelihood import log_discrete_gaussian
from .model import RSS_FLOOR, Fingerprint, LabeledSample, SubregionIndex, Subregion

logger = logging.getLogger(__name__)

POSITIONERS = ("knn", "map")
SEARCHES = ("forward", "backward", "foba", "all")


@dataclass(frozen=True)
class SelectorConfig:
    """Knobs of the greedy searches and of the loss-side estimator.

    ``epsilon`` and ``phi`` are in m^2 (MSE units); ``nu`` is the relative
    backward-increment tolerance.
    """

    epsilon: float = 0.05
    nu: float = 0.5
    k_max: int = 30
    phi: float = 0.05
    k_min: int = 1
    positioning_method: str = "knn"
    search: str = "foba"
    knn_k: int = 5
    sigma: float = 4.0
    p_miss: float = 1e-4

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.nu < 1.0:
            raise ValueError("nu must lie in (0, 1)")
        if self.phi <= 0:
            raise ValueError("phi must be positive")
        if self.k_max < 1 or self.k_min < 1:
            raise ValueError("k_max and k_min must be >= 1")
        if self.positioning_method not in POSITIONERS:
            raise ValueError(f"positioning_method must be one of {POSITIONERS}")
        if self.search not in SEARCHES:
            raise ValueError(f"search must be one of {SEARCHES}")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.p_miss < 0:
            raise ValueError("p_miss must be >= 0")


@dataclass(frozen=True)
class FeatureSubset:
    """Selected features of one cell, in selection order."""

    cell_index: int
    features: tuple[str, ...]
    final_loss: float | None
    iterations: int = 0


@dataclass(frozen=True)
class SearchEvent:
    """One accepted step of a search, for auditing search dynamics."""

    op: str  # "add" or "drop"
    feature: str
    loss: float
    delta: float
    iteration: int


@dataclass(frozen=True)
class SelectionProfile:
    """Per-cell selected feature subsets plus the config that produced them."""

    per_cell: Mapping[int, FeatureSubset]
    config: SelectorConfig

    @classmethod
    def all_features(
        cls, index: SubregionIndex, config: SelectorConfig | None = None
    ) -> "SelectionProfile":
        """Profile selecting every observable feature of every non-empty cell."""
        config = replace(config or SelectorConfig(), search="all")
        per_cell = {
            c.cell_index: FeatureSubset(
                c.cell_index, tuple(sorted(c.observable_features)), None
            )
            for c in index.cells
            if not c.is_empty
        }
        return cls(per_cell=per_cell, config=config)

    def selected(self, cell: int) -> tuple[str, ...]:
        entry = self.per_cell.get(cell)
        return entry.features if entry is not None else ()

    def to_dict(self) -> dict:
        return {
            "config": {
                "epsilon": self.config.epsilon,
                "nu": self.config.nu,
                "k_max": self.config.k_max,
                "phi": self.config.phi,
                "k_min": self.config.k_min,
                "positioning_method": self.config.positioning_method,
                "search": self.config.search,
                "knn_k": self.config.knn_k,
                "sigma": self.config.sigma,
                "p_miss": self.config.p_miss,
            },
            "cells": {
                str(c): {
                    "features": list(s.features),
                    "final_loss": s.final_loss,
                    "iterations": s.iterations,
                }
                for c, s in sorted(self.per_cell.items())
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SelectionProfile":
        config = SelectorConfig(**data["config"])
        per_cell = {
            int(c): FeatureSubset(
                int(c),
                tuple(entry["features"]),
                entry["final_loss"],
                int(entry.get("iterations", 0)),
            )
            for c, entry in data["cells"].items()
        }
        return cls(per_cell=per_cell, config=config)


def termination_bound(initial_loss: float, config: SelectorConfig) -> int:
    """Hard cap on adaptive-search outer iterations for a given initial loss."""
    return math.ceil(1.0 + initial_loss / (config.nu * config.epsilon))


class LossModel:
    """Loss of a feature set, plus argmin probes used by the searches.

    Subclasses must implement :meth:`loss`. The probe methods have generic
    implementations that call ``loss`` per candidate; vectorised models
    override them. Ties in the probes are broken by lexicographic feature
    id: candidates are visited in sorted order and only strict improvements
    replace the incumbent.
    """

    def loss(self, features: Iterable[str]) -> float:
        raise NotImplementedError

    def best_addition(
        self, base: Sequence[str], candidates: Iterable[str]
    ) -> tuple[str, float] | None:
        best: tuple[str, float] | None = None
        for fid in sorted(candidates):
            value = self.loss(tuple(base) + (fid,))
            if best is None or value < best[1]:
                best = (fid, value)
        return best

    def best_removal(self, base: Sequence[str]) -> tuple[str, float] | None:
        best: tuple[str, float] | None = None
        for fid in sorted(base):
            rest = tuple(f for f in base if f != fid)
            value = self.loss(rest)
            if best is None or value < best[1]:
                best = (fid, value)
        return best


class TabularLoss(LossModel):
    """Loss model backed by an explicit table; unlisted sets are invalid."""

    def __init__(self, table: Mapping[frozenset[str], float]) -> None:
        self._table = {frozenset(k): v for k, v in table.items()}

    def loss(self, features: Iterable[str]) -> float:
        return self._table[frozenset(features)]


class MseLossEvaluator(LossModel):
    """Positioning MSE over a fixed reference grid, probed incrementally.

    The estimator sees one dimension per selected feature; values missing
    on either side are imputed at the -100 dBm floor for kNN distances and
    fall back to the miss likelihood for MAP. Recorded losses are always
    recomputed canonically (features in lexicographic order) and memoised,
    so identical sets always report bit-identical losses; the incremental
    arithmetic is only used to pick argmin candidates quickly.
    """

    def __init__(
        self,
        grid_xy: np.ndarray,
        grid_values: Mapping[str, np.ndarray],
        validation: Sequence[LabeledSample],
        config: SelectorConfig,
        features: Iterable[str] | None = None,
    ) -> None:
        if len(validation) == 0:
            raise FplocError("empty-validation", "validation set is empty")
        self._config = config
        self._grid_xy = np.asarray(grid_xy, dtype=float)
        n = len(self._grid_xy)
        self._val_xy = np.array([s.location for s in validation], dtype=float)
        v = len(validation)

        ids = set(features) if features is not None else set(grid_values)
        self._grid_vals: dict[str, np.ndarray] = {}
        self._val_vals: dict[str, np.ndarray] = {}
        for fid in ids:
            col = grid_values.get(fid)
            self._grid_vals[fid] = (
                np.asarray(col, dtype=float) if col is not None else np.full(n, np.nan)
            )
            vv = np.full(v, np.nan)
            for i, s in enumerate(validation):
                if fid in s.fingerprint.observations:
                    vv[i] = s.fingerprint.observations[fid]
            self._val_vals[fid] = vv

        self._median = np.median(self._grid_xy, axis=0)
        self._memo: dict[frozenset[str], float] = {}
        self._contrib: dict[str, np.ndarray] = {}
        self._base_key: frozenset[str] | None = None
        self._base_matrix: np.ndarray | None = None

    # -- public interface -------------------------------------------------

    def initial_loss(self) -> float:
        return self.loss(())

    def loss(self, features: Iterable[str]) -> float:
        key = frozenset(features)
        if key not in self._memo:
            if not key:
                # No features: the estimator degenerates to the coordinate-wise
                # median of the reference points.
                residual = self._median[None, :] - self._val_xy
                self._memo[key] = float(np.mean((residual * residual).sum(axis=1)))
            else:
                self._memo[key] = self._mse(self._matrix_for(sorted(key)))
        return self._memo[key]

    def best_addition(self, base, candidates):
        base = tuple(base)
        matrix = self._base(base)
        best_fid = None
        best_probe = math.inf
        for fid in sorted(candidates):
            probe = self._mse(matrix + self._feature_contrib(fid))
            if probe < best_probe:
                best_fid, best_probe = fid, probe
        if best_fid is None:
            return None
        return best_fid, self.loss(base + (best_fid,))

    def best_removal(self, base):
        base = tuple(base)
        if not base:
            return None
        matrix = self._base(base)
        best_fid = None
        best_probe = math.inf
        for fid in sorted(base):
            probe = self._mse(matrix - self._feature_contrib(fid))
            if probe < best_probe:
                best_fid, best_probe = fid, probe
        return best_fid, self.loss(tuple(f for f in base if f != best_fid))

    # -- internals ---------------------------------------------------------

    def _feature_contrib(self, fid: str) -> np.ndarray:
        """(V, N) additive term of one feature: squared distance or log-lik."""
        if fid not in self._contrib:
            grid = self._grid_vals[fid]
            val = self._val_vals[fid]
            if self._config.positioning_method == "knn":
                g = np.where(np.isnan(grid), RSS_FLOOR, grid)
                u = np.where(np.isnan(val), RSS_FLOOR, val)
                diff = u[:, None] - g[None, :]
                self._contrib[fid] = diff * diff
            else:
                log_p_miss = math.log(self._config.p_miss) if self._config.p_miss > 0 else -math.inf
                rows = []
                present = ~np.isnan(grid)
                for uv in val:
                    if np.isnan(uv):
                        rows.append(np.full(len(grid), log_p_miss))
                        continue
                    row = np.full(len(grid), log_p_miss)
                    if present.any():
                        row[present] = log_discrete_gaussian(
                            float(uv), grid[present], self._config.sigma
                        )
                    rows.append(row)
                self._contrib[fid] = np.array(rows)
        return self._contrib[fid]

    def _matrix_for(self, features: Sequence[str]) -> np.ndarray:
        matrix = np.zeros((len(self._val_xy), len(self._grid_xy)))
        for fid in sorted(features):
            matrix = matrix + self._feature_contrib(fid)
        return matrix

    def _base(self, base: Sequence[str]) -> np.ndarray:
        key = frozenset(base)
        if self._base_key != key:
            self._base_key = key
            self._base_matrix = self._matrix_for(sorted(base))
        return self._base_matrix

    def _mse(self, matrix: np.ndarray) -> float:
        if self._config.positioning_method == "knn":
            estimates = self._knn_estimates(matrix)
        else:
            estimates = self._grid_xy[np.argmax(matrix, axis=1)]
        residual = estimates - self._val_xy
        return float(np.mean((residual * residual).sum(axis=1)))

    def _knn_estimates(self, d2: np.ndarray) -> np.ndarray:
        estimates = np.empty((d2.shape[0], 2))
        n = d2.shape[1]
        k = min(self._config.knn_k, n)
        for r in range(d2.shape[0]):
            row = np.maximum(d2[r], 0.0)
            if k < n:
                nearest = np.argpartition(row, k - 1)[:k]
            else:
                nearest = np.arange(n)
            order = nearest[np.lexsort((nearest, row[nearest]))]
            d = np.sqrt(row[order])
            if d[0] == 0.0:
                estimates[r] = self._grid_xy[row == 0.0].mean(axis=0)
            else:
                w = 1.0 / d
                w = w / w.sum()
                estimates[r] = w @ self._grid_xy[order]
        return estimates


def fs_loss(
    features: Iterable[str],
    config: SelectorConfig,
    validation: Sequence[LabeledSample],
    gridded: GriddedRfm,
) -> float:
    """Positioning MSE (m^2) of the configured estimator restricted to
    ``features``, searched over the full grid of ``gridded``.

    The empty feature set yields the initial loss: the MSE of using the
    coordinate-wise median of all reference points as a constant estimate.
    """
    features = tuple(features)
    evaluator = MseLossEvaluator(
        gridded.xy, _grid_value_columns(gridded, features), validation, config, features
    )
    return evaluator.loss(features)


def _grid_value_columns(
    gridded: GriddedRfm, features: Iterable[str]
) -> dict[str, np.ndarray]:
    wanted = set(features)
    columns = {fid: np.full(len(gridded), np.nan) for fid in wanted}
    for i, obs in enumerate(gridded.observations):
        for fid, value in obs.items():
            if fid in wanted:
                columns[fid][i] = value
    return columns


# -- searches ---------------------------------------------------------------


def forward_greedy(
    model: LossModel,
    candidates: Iterable[str],
    config: SelectorConfig,
    cell_index: int = -1,
) -> FeatureSubset:
    """Add loss-minimising features until the gain drops to ``epsilon``.

    The feature whose addition failed the epsilon test is discarded, so
    every retained step improved the loss by strictly more than epsilon.
    """
    pool = sorted(set(candidates))
    selected: list[str] = []
    current = model.loss(())
    iterations = 0
    for _ in range(len(pool)):
        iterations += 1
        avail = [f for f in pool if f not in selected]
        probe = model.best_addition(tuple(selected), avail)
        if probe is None:
            break
        fid, new_loss = probe
        if current - new_loss <= config.epsilon:
            break
        selected.append(fid)
        current = new_loss
        if len(selected) >= config.k_max:
            break
    return FeatureSubset(cell_index, tuple(selected), current, iterations)


def backward_greedy(
    model: LossModel,
    candidates: Iterable[str],
    config: SelectorConfig,
    cell_index: int = -1,
) -> FeatureSubset:
    """Drop least-costly features until a drop costs ``phi`` (undone) or
    the subset reaches ``k_min``."""
    selected = sorted(set(candidates))
    current = model.loss(tuple(selected))
    iterations = 0
    while len(selected) > config.k_min:
        iterations += 1
        probe = model.best_removal(tuple(selected))
        if probe is None:
            break
        fid, new_loss = probe
        if new_loss - current >= config.phi:
            break  # undo: the removal costs too much
        selected.remove(fid)
        current = new_loss
    return FeatureSubset(cell_index, tuple(selected), current, iterations)


def foba(
    model: LossModel,
    candidates: Iterable[str],
    config: SelectorConfig,
    cell_index: int = -1,
) -> FeatureSubset:
    """Adaptive forward-backward greedy search. See :func:`foba_trace`."""
    return foba_trace(model, candidates, config, cell_index)[0]


def foba_trace(
    model: LossModel,
    candidates: Iterable[str],
    config: SelectorConfig,
    cell_index: int = -1,
) -> tuple[FeatureSubset, list[SearchEvent]]:
    """Adaptive forward-backward greedy search, returning its event trace.

    One outer iteration is one forward attempt; accepted forward steps must
    improve the loss by more than ``epsilon`` and are followed by a purge
    loop dropping features while each drop increases the loss by at most
    ``nu`` times the forward gain. The outer iteration count never exceeds
    ``ceil(1 + initial_loss / (nu * epsilon))``.
    """
    pool = sorted(set(candidates))
    selected: list[str] = []
    current = model.loss(())
    bound = termination_bound(current, config)
    events: list[SearchEvent] = []
    iterations = 0
    while True:
        iterations += 1
        if iterations > 10 * bound:  # defensive; the search must stop well before
            raise RuntimeError(
                f"adaptive search exceeded 10x its termination bound ({bound})"
            )
        avail = [f for f in pool if f not in selected]
        if not avail:
            break
        probe = model.best_addition(tuple(selected), avail)
        fid, new_loss = probe
        delta_fwd = current - new_loss
        if delta_fwd <= config.epsilon:
            break  # discard the non-improving feature
        selected.append(fid)
        current = new_loss
        events.append(SearchEvent("add", fid, current, delta_fwd, iterations))

        while len(selected) > 1:
            back = model.best_removal(tuple(selected))
            bfid, bloss = back
            delta_bwd = bloss - current
            if delta_bwd > config.nu * delta_fwd:
                break
            selected.remove(bfid)
            current = bloss
            events.append(SearchEvent("drop", bfid, current, delta_bwd, iterations))

        if len(selected) >= config.k_max:
            break
    return FeatureSubset(cell_index, tuple(selected), current, iterations), events


_SEARCH_FUNCS = {
    "forward": forward_greedy,
    "backward": backward_greedy,
    "foba": foba,
}


def select_features(
    cell: Subregion,
    gridded: GriddedRfm,
    validation: Sequence[LabeledSample],
    config: SelectorConfig,
) -> FeatureSubset:
    """Run the configured search for one cell against the given grid.

    ``gridded`` is the search space (typically the training split of the
    densified map); ``validation`` are the held-out samples scoring each
    candidate subset.
    """
    if cell.is_empty:
        raise FplocError("bad-cell", f"cell {cell.cell_index} holds no samples")
    candidates = sorted(cell.observable_features)
    if config.search == "all":
        return FeatureSubset(cell.cell_index, tuple(candidates), None)
    evaluator = MseLossEvaluator(
        gridded.xy,
        _grid_value_columns(gridded, candidates),
        validation,
        config,
        candidates,
    )
    return _SEARCH_FUNCS[config.search](
        evaluator, candidates, config, cell.cell_index
    )


def split_holdout(
    gridded: GriddedRfm, fraction: float = 0.2, seed: int = 0
) -> tuple[GriddedRfm, list[LabeledSample]]:
    """Per-cell split of a gridded map into training grid and validation.

    Each cell contributes ``floor(fraction * points)`` held-out points; the
    held-out fingerprints become labelled validation samples. Deterministic
    in ``seed``.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cell in sorted(set(int(c) for c in gridded.cell_of_point)):
        points = np.nonzero(gridded.cell_of_point == cell)[0]
        n_hold = int(len(points) * fraction)
        if n_hold == 0:
            train_idx.extend(points.tolist())
            continue
        rng = np.random.default_rng([seed, cell])
        perm = rng.permutation(len(points))
        val_idx.extend(sorted(points[perm[:n_hold]].tolist()))
        train_idx.extend(sorted(points[perm[n_hold:]].tolist()))
    train = gridded.subset(sorted(train_idx))
    validation = []
    for i in sorted(val_idx):
        loc = (float(gridded.xy[i, 0]), float(gridded.xy[i, 1]))
        obs = {k: float(v) for k, v in gridded.observations[i].items()}
        validation.append(LabeledSample(loc, Fingerprint(obs)))
    return train, validation


def build_profile(
    index: SubregionIndex,
    gridded: GriddedRfm,
    config: SelectorConfig,
    validation: Sequence[LabeledSample] | None = None,
    seed: int = 0,
    holdout: float = 0.2,
) -> SelectionProfile:
    """Run the configured selector for every non-empty cell.

    When ``validation`` is None, a per-cell holdout split of ``gridded``
    provides both the training grid and the validation samples; otherwise
    the full grid is searched and the given samples are grouped by the cell
    containing them. Cells without validation samples fall back to
    selecting all observable features (logged).
    """
    if config.search == "all":
        return SelectionProfile.all_features(index, config)
    if validation is None:
        train, val_samples = split_holdout(gridded, holdout, seed)
    else:
        train, val_samples = gridded, list(validation)

    by_cell: dict[int, list[LabeledSample]] = {}
    for sample in val_samples:
        try:
            cell = index.roi.cell_of(sample.location)
        except FplocError:
            logger.warning("validation sample at %s outside the RoI; skipped", sample.location)
            continue
        by_cell.setdefault(cell, []).append(sample)

    per_cell: dict[int, FeatureSubset] = {}
    for cell in index.cells:
        if cell.is_empty:
            continue
        cell_val = by_cell.get(cell.cell_index, [])
        if not cell_val:
            logger.warning(
                "cell %d has no validation samples; selecting all %d observable features",
                cell.cell_index,
                len(cell.observable_features),
            )
            per_cell[cell.cell_index] = FeatureSubset(
                cell.cell_index, tuple(sorted(cell.observable_features)), None
            )
            continue
        try:
            per_cell[cell.cell_index] = select_features(cell, train, cell_val, config)
        except FplocError as exc:
            raise FplocError(exc.code, f"cell {cell.cell_index}: {exc}") from exc
    return SelectionProfile(per_cell=per_cell, config=config)
