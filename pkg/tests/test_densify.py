"""Kernel-regression densification onto per-cell lattices."""

import numpy as np
import pytest

from fploc.densify import cell_lattice, densify, matern_kernel
from fploc.errors import FplocError
from fploc.model import partition
from fploc.synthworld import WorldConfig, auto_walls, generate
from fploc.model import RoiGeometry
from tests.conftest import make_rfm


def test_lattice_density_matches_25_points_per_m2():
    lattice = cell_lattice((0.0, 0.0, 2.0, 2.0), 0.2)
    assert len(lattice) == 100  # 25 points per m^2 on a 2x2 m cell
    assert lattice[:, 0].min() == pytest.approx(0.1)
    assert lattice[:, 0].max() == pytest.approx(1.9)
    steps = np.diff(sorted(set(np.round(lattice[:, 0], 12))))
    assert np.allclose(steps, 0.2)


def test_matern_kernel_decreasing_and_one_at_zero():
    r = np.linspace(0.0, 5.0, 100)
    for nu in (0.5, 1.5, 2.5):
        k = matern_kernel(r, 1.0, nu)
        assert k[0] == pytest.approx(1.0)
        assert np.all(np.diff(k) <= 1e-12)


def test_single_sample_value_propagates_exactly():
    rfm = make_rfm({(1.0, 1.0): {"a": -60.0}}, width=2.0, height=2.0)
    gridded = densify(rfm, partition(rfm), spacing=0.5, length_scale=1.0)
    values = {obs["a"] for obs in gridded.observations if "a" in obs}
    assert values == {-60}


def test_two_symmetric_samples_mirror_around_their_mean():
    rfm = make_rfm(
        {(0.5, 1.0): {"a": -50.0}, (1.5, 1.0): {"a": -70.0}},
        width=2.0,
        height=2.0,
    )
    gridded = densify(rfm, partition(rfm), spacing=1.0, length_scale=1.0)
    assert gridded.alpha == 4
    left = sorted(obs["a"] for xy, obs in zip(gridded.xy, gridded.observations) if xy[0] < 1.0)
    right = sorted(obs["a"] for xy, obs in zip(gridded.xy, gridded.observations) if xy[0] > 1.0)
    assert len(left) == len(right) == 2
    assert left[0] + right[1] == pytest.approx(-120.0)  # mirrored around -60


def test_exact_midpoint_averages_to_minus_60():
    # grid point equidistant from both samples: weights cancel, mean = -60
    rfm = make_rfm(
        {(0.1, 0.1): {"a": -50.0}, (1.9, 1.9): {"a": -70.0}},
        width=2.0,
        height=2.0,
    )
    gridded = densify(rfm, partition(rfm), spacing=2.0, length_scale=1.0)
    assert gridded.alpha == 1
    assert gridded.observations[0]["a"] == -60


def test_range_preservation_against_bruteforce_contributors():
    cfg = WorldConfig(
        seed=5,
        roi=RoiGeometry(width=6.0, height=4.0, cell_size=2.0),
        n_emitters=8,
        noise_sigma=2.0,
        sample_density=3.0,
        n_test=5,
        walls=auto_walls(RoiGeometry(width=6.0, height=4.0, cell_size=2.0)),
    )
    rfm, _ = generate(cfg)
    index = partition(rfm)
    gridded = densify(rfm, index, spacing=0.5, length_scale=1.0)
    cutoff = 3.0
    for p, obs in zip(gridded.xy, gridded.observations):
        for fid, value in obs.items():
            contributors = [
                s.fingerprint.observations[fid]
                for s in rfm.samples
                if fid in s.fingerprint.observations
                and np.hypot(s.location[0] - p[0], s.location[1] - p[1]) <= cutoff
            ]
            assert contributors, "a stored value must have in-radius contributors"
            assert min(contributors) - 0.5 <= value <= max(contributors) + 0.5


def test_equal_alpha_across_non_empty_cells():
    cfg = WorldConfig(
        seed=9,
        roi=RoiGeometry(width=8.0, height=6.0, cell_size=2.0),
        n_emitters=10,
        sample_density=2.0,
        n_test=5,
    )
    rfm, _ = generate(cfg)
    index = partition(rfm)
    gridded = densify(rfm, index, spacing=0.4)
    counts = np.bincount(gridded.cell_of_point)
    present = counts[counts > 0]
    assert set(present.tolist()) == {gridded.alpha}


def test_lattice_idempotent_on_gridded_input():
    rfm = make_rfm(
        {(0.3, 0.3): {"a": -40.0}, (1.7, 1.7): {"a": -80.0}},
        width=2.0,
        height=2.0,
    )
    index = partition(rfm)
    first = densify(rfm, index, spacing=0.5)
    regrid = make_rfm(
        {tuple(xy): {k: float(v) for k, v in obs.items()} or {"a": -50.0}
         for xy, obs in zip(map(tuple, first.xy), first.observations)},
        width=2.0,
        height=2.0,
    )
    second = densify(regrid, partition(regrid), spacing=0.5)
    assert np.allclose(np.sort(first.xy, axis=0), np.sort(second.xy, axis=0))


def test_values_rounded_to_floor_are_dropped():
    rfm = make_rfm({(1.0, 1.0): {"a": -99.8, "b": -99.4}}, width=2.0, height=2.0)
    gridded = densify(rfm, partition(rfm), spacing=2.0)
    # -99.8 rounds to -100 -> non-measurable; -99.4 rounds to -99 and stays
    assert gridded.observations[0] == {"b": -99}


def test_invalid_spacing_rejected():
    rfm = make_rfm({(1.0, 1.0): {"a": -50.0}}, width=2.0, height=2.0)
    with pytest.raises(ValueError):
        densify(rfm, partition(rfm), spacing=0.0)
