"""Persisted offline artifacts consumed by the online positioning stage.

A bundle is a versioned directory::

    <bundle>/
      manifest.json           format version, RoI geometry, feature universe,
                              estimator parameters, per-record checksums
      cells/cell_NNNNN.json   one record per subregion (including empty ones)

Each cell record carries the subregion's observable feature keys, its
selected relevant features, the lattice locations, and the integer dBm
reference value of every selected feature at every lattice point (null
where non-measurable). Loading verifies the format version and the SHA-256
checksum of every record. The layout is stable within a major format
version.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .densify import GriddedRfm
from .errors import FplocError
from .featsel import SelectionProfile, SelectorConfig
from .model import RoiGeometry, SubregionIndex

FORMAT_VERSION = 1


@dataclass(eq=False)
class CellRecord:
    """Everything the online stage needs about one subregion."""

    cell_index: int
    bounds: tuple[float, float, float, float]
    feature_keys: tuple[str, ...]
    selected: tuple[str, ...]
    selection_loss: float | None
    grid_xy: np.ndarray  # (n, 2); empty cells have n = 0
    grid_values: dict[str, np.ndarray]  # selected feature -> (n,), NaN = absent
    prior: np.ndarray | None = None  # per-point prior weight; None = uniform

    @property
    def is_empty(self) -> bool:
        return len(self.grid_xy) == 0

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bounds
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CellRecord):
            return NotImplemented
        return (
            self.cell_index == other.cell_index
            and self.bounds == other.bounds
            and self.feature_keys == other.feature_keys
            and self.selected == other.selected
            and _float_eq(self.selection_loss, other.selection_loss)
            and np.array_equal(self.grid_xy, other.grid_xy)
            and self.grid_values.keys() == other.grid_values.keys()
            and all(
                np.array_equal(v, other.grid_values[k], equal_nan=True)
                for k, v in self.grid_values.items()
            )
            and _optional_array_eq(self.prior, other.prior)
        )


def _float_eq(a: float | None, b: float | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a == b or (math.isnan(a) and math.isnan(b))


def _optional_array_eq(a: np.ndarray | None, b: np.ndarray | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


@dataclass(eq=False)
class PrecomputedBundle:
    """Cached offline outputs: subregion keys, selections, gridded values,
    likelihood parameters, and priors."""

    roi: RoiGeometry
    feature_universe: tuple[str, ...]
    alpha: int
    cells: list[CellRecord]
    selector: SelectorConfig
    sigma: float = 4.0
    p_miss: float = 1e-4
    knn_k: int = 5
    chosen_m: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        universe = set(self.feature_universe)
        for record in self.cells:
            stray = (set(record.feature_keys) | set(record.selected)) - universe
            if stray:
                raise ValueError(
                    f"cell {record.cell_index} references features outside the "
                    f"universe: {sorted(stray)[:3]}..."
                )
        self._runtime: "BundleRuntime | None" = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PrecomputedBundle):
            return NotImplemented
        return (
            self.roi == other.roi
            and self.feature_universe == other.feature_universe
            and self.alpha == other.alpha
            and self.cells == other.cells
            and self.selector == other.selector
            and self.sigma == other.sigma
            and self.p_miss == other.p_miss
            and self.knn_k == other.knn_k
            and self.chosen_m == other.chosen_m
            and self.meta == other.meta
        )

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def runtime(self) -> "BundleRuntime":
        """Dense-array view used by the online stage; built once, then shared."""
        if self._runtime is None:
            self._runtime = BundleRuntime(self)
        return self._runtime

    @classmethod
    def assemble(
        cls,
        index: SubregionIndex,
        gridded: GriddedRfm,
        profile: SelectionProfile,
        sigma: float = 4.0,
        p_miss: float = 1e-4,
        knn_k: int = 5,
        chosen_m: int | None = None,
        meta: dict | None = None,
    ) -> "PrecomputedBundle":
        """Bundle up partition, gridded values and selections.

        Gridded values are stored for every feature selected in at least
        one cell, at every grid point where that feature is measurable;
        everything else is dropped, which is all the storage the online
        estimators are allowed to read.
        """
        universe: set[str] = set()
        for cell in index.cells:
            universe |= cell.observable_features
        kept: set[str] = set()
        for cell_index in profile.per_cell:
            kept |= set(profile.selected(cell_index))

        records = []
        for cell in index.cells:
            point_idx = np.nonzero(gridded.cell_of_point == cell.cell_index)[0]
            selected = profile.selected(cell.cell_index)
            entry = profile.per_cell.get(cell.cell_index)
            values: dict[str, np.ndarray] = {}
            for fid in sorted(kept):
                col = np.full(len(point_idx), np.nan)
                measurable = False
                for j, p in enumerate(point_idx):
                    v = gridded.observations[p].get(fid)
                    if v is not None:
                        col[j] = v
                        measurable = True
                if measurable:
                    values[fid] = col
            records.append(
                CellRecord(
                    cell_index=cell.cell_index,
                    bounds=cell.bounds,
                    feature_keys=tuple(sorted(cell.observable_features)),
                    selected=tuple(selected),
                    selection_loss=entry.final_loss if entry else None,
                    grid_xy=gridded.xy[point_idx].copy(),
                    grid_values=values,
                )
            )
        return cls(
            roi=index.roi,
            feature_universe=tuple(sorted(universe)),
            alpha=gridded.alpha,
            cells=records,
            selector=profile.config,
            sigma=sigma,
            p_miss=p_miss,
            knn_k=knn_k,
            chosen_m=chosen_m,
            meta=dict(meta or {}),
        )


class BundleRuntime:
    """Flat arrays over all grid points, in ascending cell order.

    ``global index`` of a grid point means its row in these arrays; ties in
    the estimators are broken by this index.
    """

    def __init__(self, bundle: PrecomputedBundle) -> None:
        self.bundle = bundle
        self.keysets: list[frozenset[str]] = [
            frozenset(c.feature_keys) for c in bundle.cells
        ]
        self.selected: list[tuple[str, ...]] = [c.selected for c in bundle.cells]

        blocks = [c.grid_xy for c in bundle.cells if len(c.grid_xy)]
        self.xy = (
            np.vstack(blocks) if blocks else np.zeros((0, 2))
        )
        self.cell_slices: list[tuple[int, int]] = []
        columns = sorted({fid for c in bundle.cells for fid in c.selected})
        self.feature_cols = {fid: j for j, fid in enumerate(columns)}
        self.values = np.full((len(self.xy), len(columns)), np.nan)
        self.log_prior = np.zeros(len(self.xy))

        start = 0
        for record in bundle.cells:
            n = len(record.grid_xy)
            self.cell_slices.append((start, start + n))
            for fid, col in record.grid_values.items():
                self.values[start : start + n, self.feature_cols[fid]] = col
            if record.prior is not None and n:
                with np.errstate(divide="ignore"):
                    self.log_prior[start : start + n] = np.log(record.prior)
            start += n

    def rows_for_cells(self, cells: Sequence[int]) -> np.ndarray:
        """Global indices of all grid points in the given cells, ascending."""
        parts = []
        for c in sorted(set(cells)):
            lo, hi = self.cell_slices[c]
            if hi > lo:
                parts.append(np.arange(lo, hi))
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


# -- persistence --------------------------------------------------------------


def _roi_to_dict(roi: RoiGeometry) -> dict:
    return {
        "origin": list(roi.origin),
        "width": roi.width,
        "height": roi.height,
        "cell_size": roi.cell_size,
    }


def _roi_from_dict(data: dict) -> RoiGeometry:
    return RoiGeometry(
        width=data["width"],
        height=data["height"],
        origin=tuple(data["origin"]),
        cell_size=data["cell_size"],
    )


def _selector_to_dict(cfg: SelectorConfig) -> dict:
    return {
        "epsilon": cfg.epsilon,
        "nu": cfg.nu,
        "k_max": cfg.k_max,
        "phi": cfg.phi,
        "k_min": cfg.k_min,
        "positioning_method": cfg.positioning_method,
        "search": cfg.search,
        "knn_k": cfg.knn_k,
        "sigma": cfg.sigma,
        "p_miss": cfg.p_miss,
    }


def _cell_to_dict(record: CellRecord) -> dict:
    return {
        "cell_index": record.cell_index,
        "bounds": list(record.bounds),
        "feature_keys": list(record.feature_keys),
        "selected": list(record.selected),
        "selection_loss": record.selection_loss,
        "grid_xy": [[float(x), float(y)] for x, y in record.grid_xy],
        "grid_values": {
            fid: [None if np.isnan(v) else int(v) for v in col]
            for fid, col in sorted(record.grid_values.items())
        },
        "prior": None if record.prior is None else [float(p) for p in record.prior],
    }


def _cell_from_dict(data: dict) -> CellRecord:
    n = len(data["grid_xy"])
    values = {}
    for fid, col in data["grid_values"].items():
        arr = np.full(n, np.nan)
        for i, v in enumerate(col):
            if v is not None:
                arr[i] = float(v)
        values[fid] = arr
    return CellRecord(
        cell_index=int(data["cell_index"]),
        bounds=tuple(data["bounds"]),
        feature_keys=tuple(data["feature_keys"]),
        selected=tuple(data["selected"]),
        selection_loss=data["selection_loss"],
        grid_xy=np.array(data["grid_xy"], dtype=float).reshape(n, 2),
        grid_values=values,
        prior=None if data["prior"] is None else np.array(data["prior"], dtype=float),
    )


def _dump(data: dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_bundle(bundle: PrecomputedBundle, path: str | Path) -> None:
    """Write a bundle directory atomically (build in a temp dir, then rename).

    An interrupted save leaves either the previous bundle or none.
    """
    path = Path(path)
    parent = path.absolute().parent
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.tmp-", dir=parent))
    try:
        (tmp / "cells").mkdir()
        checksums = {}
        for record in bundle.cells:
            name = f"cells/cell_{record.cell_index:05d}.json"
            payload = _dump(_cell_to_dict(record))
            (tmp / name).write_bytes(payload)
            checksums[name] = hashlib.sha256(payload).hexdigest()
        manifest = {
            "format_version": FORMAT_VERSION,
            "roi": _roi_to_dict(bundle.roi),
            "feature_universe": list(bundle.feature_universe),
            "alpha": bundle.alpha,
            "selector": _selector_to_dict(bundle.selector),
            "sigma": bundle.sigma,
            "p_miss": bundle.p_miss,
            "knn_k": bundle.knn_k,
            "chosen_m": bundle.chosen_m,
            "meta": bundle.meta,
            "records": checksums,
        }
        (tmp / "manifest.json").write_bytes(_dump(manifest))
        if path.exists():
            shutil.rmtree(path)
        os.rename(tmp, path)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_bundle(path: str | Path) -> PrecomputedBundle:
    """Load and verify a bundle directory.

    Raises:
        FplocError("bundle-version"): unknown format version.
        FplocError("corrupt-bundle"): missing, truncated or altered records.
    """
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_bytes())
    except FileNotFoundError as exc:
        raise FplocError("corrupt-bundle", f"no manifest in {path}") from exc
    except json.JSONDecodeError as exc:
        raise FplocError("corrupt-bundle", f"manifest of {path} is not valid JSON") from exc

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FplocError(
            "bundle-version",
            f"bundle format version {version!r} not supported (expected {FORMAT_VERSION})",
        )

    records = []
    for name, digest in sorted(manifest["records"].items()):
        try:
            payload = (path / name).read_bytes()
        except FileNotFoundError as exc:
            raise FplocError("corrupt-bundle", f"missing record {name}") from exc
        if hashlib.sha256(payload).hexdigest() != digest:
            raise FplocError("corrupt-bundle", f"checksum mismatch for {name}")
        try:
            records.append(_cell_from_dict(json.loads(payload)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise FplocError("corrupt-bundle", f"unreadable record {name}: {exc}") from exc
    records.sort(key=lambda r: r.cell_index)

    return PrecomputedBundle(
        roi=_roi_from_dict(manifest["roi"]),
        feature_universe=tuple(manifest["feature_universe"]),
        alpha=int(manifest["alpha"]),
        cells=records,
        selector=SelectorConfig(**manifest["selector"]),
        sigma=float(manifest["sigma"]),
        p_miss=float(manifest["p_miss"]),
        knn_k=int(manifest["knn_k"]),
        chosen_m=manifest["chosen_m"],
        meta=manifest["meta"],
    )
