"""Candidate subregion ranking by key-set similarity, and its loss diagnostics.

The similarity score between a measured fingerprint's key set U and a
subregion's observable key set G defaults to coverage |U & G| / |G|: it is
1 when the measurement covers everything the subregion can show (extra
measured features do not hurt) and small when the measurement covers
little of it. Plain Jaccard |U & G| / |U | G| is available for comparison
runs; it penalises supersets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import FplocError
from .model import Fingerprint, LabeledSample, SubregionIndex

logger = logging.getLogger(__name__)

FORMULAS = ("coverage", "jaccard")


@dataclass(frozen=True)
class MjiScore:
    cell_index: int
    score: float


@dataclass(frozen=True)
class LossCurve:
    """Selection loss evaluated at increasing candidate counts m."""

    points: tuple[tuple[int, float], ...]

    def loss_at(self, m: int) -> float:
        for mm, loss in self.points:
            if mm == m:
                return loss
        raise KeyError(f"loss curve has no entry for m={m}")

    @property
    def m_max(self) -> int:
        return max(m for m, _ in self.points)


def mji(
    user_keys: Iterable[str], cell_keys: Iterable[str], formula: str = "coverage"
) -> float:
    """Key-set similarity in [0, 1]; 0 when the cell's key set is empty."""
    u = frozenset(user_keys)
    g = frozenset(cell_keys)
    common = len(u & g)
    if formula == "coverage":
        return common / len(g) if g else 0.0
    if formula == "jaccard":
        union = len(u | g)
        return common / union if union else 0.0
    raise ValueError(f"unknown similarity formula {formula!r}; use one of {FORMULAS}")


def rank_keysets(
    user_keys: frozenset[str],
    cell_keysets: Sequence[frozenset[str]],
    m: int,
    formula: str = "coverage",
) -> list[int]:
    """Indices of the m highest-scoring key sets.

    Sorted by descending score; ties broken by ascending index, so the
    result is deterministic.
    """
    if not 1 <= m <= len(cell_keysets):
        raise FplocError("bad-m", f"m={m} outside [1, {len(cell_keysets)}]")
    scores = [mji(user_keys, g, formula) for g in cell_keysets]
    order = sorted(range(len(cell_keysets)), key=lambda i: (-scores[i], i))
    return order[:m]


def rank_subregions(
    fingerprint: Fingerprint,
    index: SubregionIndex,
    m: int,
    formula: str = "coverage",
) -> list[int]:
    """The m cells most similar to the fingerprint's key set."""
    keysets = [c.observable_features for c in index.cells]
    return rank_keysets(fingerprint.keys, keysets, m, formula)


def score_subregions(
    fingerprint: Fingerprint, index: SubregionIndex, formula: str = "coverage"
) -> list[MjiScore]:
    """Similarity of every cell to the fingerprint, in cell order."""
    keys = fingerprint.keys
    return [
        MjiScore(c.cell_index, mji(keys, c.observable_features, formula))
        for c in index.cells
    ]


def selection_indicator(
    true_location: tuple[float, float],
    selected_cells: Iterable[int],
    index: SubregionIndex,
) -> int:
    """1 when the cell containing the true location is among the selected.

    Raises:
        FplocError("outside-roi"): the location is outside the RoI.
    """
    true_cell = index.roi.cell_of(true_location)
    return 1 if true_cell in set(selected_cells) else 0


def selection_loss(
    validation: Sequence[LabeledSample],
    index: SubregionIndex,
    m: int,
    formula: str = "coverage",
) -> float:
    """Fraction of validation samples whose true cell misses the top-m ranking.

    Samples falling in empty cells are excluded from the denominator (an
    empty cell can never be ranked by key similarity) and logged.

    Raises:
        FplocError("empty-validation"): no usable validation samples.
    """
    if not validation:
        raise FplocError("empty-validation", "validation set is empty")
    hits = 0
    counted = 0
    skipped = 0
    for sample in validation:
        true_cell = index.roi.cell_of(sample.location)
        if index.cells[true_cell].is_empty:
            skipped += 1
            continue
        counted += 1
        selected = rank_subregions(sample.fingerprint, index, m, formula)
        hits += selection_indicator(sample.location, selected, index)
    if skipped:
        logger.warning(
            "selection_loss: %d of %d validation samples fall in empty cells "
            "and were excluded",
            skipped,
            len(validation),
        )
    if counted == 0:
        raise FplocError(
            "empty-validation", "all validation samples fall in empty cells"
        )
    return 1.0 - hits / counted


def selection_loss_curve(
    validation: Sequence[LabeledSample],
    index: SubregionIndex,
    m_values: Sequence[int] | None = None,
    formula: str = "coverage",
) -> LossCurve:
    """Selection loss at each m, computed from one ranking pass per sample.

    Equivalent to calling :func:`selection_loss` per m: for each sample the
    full cell ranking is computed once and the indicator at m is "rank of
    the true cell <= m".
    """
    if not validation:
        raise FplocError("empty-validation", "validation set is empty")
    n_cells = index.n_cells
    if m_values is None:
        m_values = range(1, n_cells + 1)

    ranks = []
    skipped = 0
    keysets = [c.observable_features for c in index.cells]
    for sample in validation:
        true_cell = index.roi.cell_of(sample.location)
        if index.cells[true_cell].is_empty:
            skipped += 1
            continue
        order = rank_keysets(sample.fingerprint.keys, keysets, n_cells, formula)
        ranks.append(order.index(true_cell) + 1)
    if skipped:
        logger.warning(
            "selection_loss_curve: %d of %d validation samples fall in empty "
            "cells and were excluded",
            skipped,
            len(validation),
        )
    if not ranks:
        raise FplocError(
            "empty-validation", "all validation samples fall in empty cells"
        )

    points = []
    for m in m_values:
        hits = sum(1 for r in ranks if r <= m)
        points.append((int(m), 1.0 - hits / len(ranks)))
    return LossCurve(points=tuple(points))


def choose_m(curve: LossCurve, flatness_tol: float = 0.01, window: int = 5) -> int:
    """Smallest m from which the loss curve is flat.

    Returns the smallest m with ``loss(m) - loss(min(m + window, m_max)) <=
    flatness_tol``, or ``m_max`` when no m qualifies.
    """
    if not curve.points:
        raise FplocError("empty-validation", "loss curve has no points")
    if flatness_tol <= 0:
        raise ValueError("flatness_tol must be positive")
    m_max = curve.m_max
    for m, loss in sorted(curve.points):
        ahead = curve.loss_at(min(m + window, m_max))
        if loss - ahead <= flatness_tol:
            return m
    return m_max
