"""Offline pipeline: raw map in, precomputed bundle out.

Stage order: partition the RoI, densify onto per-cell lattices, hold out a
validation split, optionally pick the operating number of candidate
subregions from the selection-loss curve, select per-cell features, then
assemble everything the online stage needs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .bundle import PrecomputedBundle
from .densify import densify
from .featsel import SelectionProfile, SelectorConfig, build_profile, split_holdout
from .model import Rfm, partition
from .subregion import choose_m, selection_loss_curve

logger = logging.getLogger(__name__)

#: cap on validation samples used for the selection-loss curve
M_CURVE_SAMPLE_CAP = 300


@dataclass(frozen=True)
class PrecomputeSummary:
    """What the offline stage produced, for operator-facing logs."""

    n_cells: int
    n_non_empty: int
    alpha: int
    chosen_m: int | None
    selected_counts: tuple[int, ...]

    def lines(self) -> list[str]:
        counts = np.array(self.selected_counts) if self.selected_counts else np.array([0])
        out = [
            f"cells: {self.n_cells} ({self.n_non_empty} non-empty)",
            f"grid points per non-empty cell (alpha): {self.alpha}",
            f"selected features per cell: min {counts.min()} / "
            f"median {int(np.median(counts))} / max {counts.max()}",
        ]
        if self.chosen_m is not None:
            out.append(f"chosen m: {self.chosen_m}")
        return out


def precompute(
    rfm: Rfm,
    selector: SelectorConfig | None = None,
    validation: list | None = None,
    cell_size: float | None = None,
    spacing: float = 0.2,
    length_scale: float = 1.0,
    matern_nu: float = 2.5,
    sigma: float = 4.0,
    p_miss: float = 1e-4,
    knn_k: int = 5,
    seed: int = 0,
    holdout: float = 0.2,
    pick_m: bool = True,
) -> tuple[PrecomputedBundle, PrecomputeSummary]:
    """Run the full offline stage and return the bundle plus a summary.

    ``validation`` may carry separately collected labelled samples; without
    it, a per-cell holdout split of the densified map stands in.
    """
    selector = selector or SelectorConfig()
    index = partition(rfm, cell_size)
    gridded = densify(rfm, index, spacing=spacing, length_scale=length_scale, nu=matern_nu)
    if validation is None:
        _, curve_val = split_holdout(gridded, holdout, seed)
    else:
        curve_val = list(validation)

    chosen = None
    if pick_m:
        rng = np.random.default_rng([seed, 1])
        val = curve_val
        if len(val) > M_CURVE_SAMPLE_CAP:
            pick = rng.choice(len(val), size=M_CURVE_SAMPLE_CAP, replace=False)
            val = [curve_val[i] for i in sorted(pick)]
        curve = selection_loss_curve(val, index)
        chosen = choose_m(curve)
        logger.info("selection-loss curve picked m=%d of %d cells", chosen, index.n_cells)

    profile = build_profile(
        index, gridded, selector, validation=validation, seed=seed, holdout=holdout
    )
    bundle = PrecomputedBundle.assemble(
        index,
        gridded,
        profile,
        sigma=sigma,
        p_miss=p_miss,
        knn_k=knn_k,
        chosen_m=chosen,
        meta={
            "seed": seed,
            "spacing": spacing,
            "length_scale": length_scale,
            "matern_nu": matern_nu,
            "holdout": holdout,
        },
    )
    counts = tuple(len(s.features) for _, s in sorted(profile.per_cell.items()))
    summary = PrecomputeSummary(
        n_cells=index.n_cells,
        n_non_empty=len(index.non_empty_cells),
        alpha=gridded.alpha,
        chosen_m=chosen,
        selected_counts=counts,
    )
    return bundle, summary
