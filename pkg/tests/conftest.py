"""Shared builders: small deterministic worlds for unit and acceptance tests."""

from __future__ import annotations

import math

import numpy as np
import pytest

from fploc.model import Fingerprint, LabeledSample, Rfm, RoiGeometry


def make_rfm(obs_by_location, width=10.0, height=10.0, origin=(0.0, 0.0), cell_size=2.0):
    """Rfm from a {(x, y): {fid: rss}} mapping."""
    samples = [
        LabeledSample((float(x), float(y)), Fingerprint(obs))
        for (x, y), obs in obs_by_location.items()
    ]
    roi = RoiGeometry(width=width, height=height, origin=origin, cell_size=cell_size)
    return Rfm.build(samples, roi)


def make_cell_world(seed: int, max_features: int = 8):
    """One small selection problem: a 6x6 grid, a few smooth feature fields,
    and noisy off-grid validation samples.

    Returns (grid_xy, grid_values, validation, candidates).
    """
    rng = np.random.default_rng(seed)
    n_feat = int(rng.integers(3, max_features + 1))
    xs = np.linspace(0.25, 2.75, 6)
    gx, gy = np.meshgrid(xs, xs)
    grid_xy = np.column_stack([gx.ravel(), gy.ravel()])

    fields = {}
    for i in range(n_feat):
        fid = f"ap{i:02d}"
        base = rng.uniform(-70.0, -40.0)
        # gradient directions spread around the circle so features complement
        # rather than duplicate each other; magnitudes bounded away from zero
        angle = 2.0 * math.pi * i / n_feat + float(rng.uniform(-0.3, 0.3))
        magnitude = float(rng.uniform(3.5, 7.0))
        slope = (magnitude * math.cos(angle), magnitude * math.sin(angle))
        curve = rng.uniform(-1.0, 1.0)

        def field(x, y, base=base, slope=slope, curve=curve):
            v = base + slope[0] * (x - 1.5) + slope[1] * (y - 1.5) + curve * (x - 1.5) * (y - 1.5)
            return np.clip(v, -95.0, -5.0)

        fields[fid] = field

    grid_values = {
        fid: field(grid_xy[:, 0], grid_xy[:, 1]) for fid, field in fields.items()
    }

    validation = []
    for _ in range(20):
        x, y = rng.uniform(0.0, 3.0, size=2)
        obs = {}
        for fid, field in fields.items():
            v = float(field(x, y)) + float(rng.normal(0.0, 1.5))
            obs[fid] = min(max(v, -99.0), 0.0)
        validation.append(LabeledSample((float(x), float(y)), Fingerprint(obs)))
    return grid_xy, grid_values, validation, sorted(fields)


def decoy_world(seed: int = 11, n_val: int = 300):
    """A selection problem with a correlated decoy feature.

    A thin 8x1 m strip. Feature A carries a steep gradient on the left half
    only, B on the right half only; their pair pins the position everywhere.
    Feature C is a noisy mixture of A and B: a uniform (shallower) gradient
    over the whole strip with much higher measurement noise. Alone, C beats
    either half-blind feature, so a forward search grabs it first; next to
    A and B it only injects noise, which is what a backward step can undo.

    Returns (grid_xy, grid_values, validation, candidates); built for a MAP
    loss with sigma=4 and epsilon=0.1.
    """
    rng = np.random.default_rng(seed)
    xs = np.arange(0.25, 8.0, 0.5)
    ys = np.array([0.17, 0.5, 0.83])
    gx, gy = np.meshgrid(xs, ys)
    grid_xy = np.column_stack([gx.ravel(), gy.ravel()])

    def field_a(x):
        return -30.0 - 6.0 * np.minimum(x, 4.0)

    def field_b(x):
        return -54.0 - 6.0 * np.maximum(x - 4.0, 0.0)

    def mixture(x):
        return 0.5 * (field_a(x) + field_b(x))

    grid_values = {
        "apA": field_a(grid_xy[:, 0]),
        "apB": field_b(grid_xy[:, 0]),
        "apC": mixture(grid_xy[:, 0]),
    }

    validation = []
    for _ in range(n_val):
        x = float(rng.uniform(0.0, 8.0))
        y = float(rng.uniform(0.0, 1.0))
        obs = {
            "apA": float(field_a(x)) + float(rng.normal(0.0, 3.0)),
            "apB": float(field_b(x)) + float(rng.normal(0.0, 3.0)),
            "apC": float(mixture(x)) + float(rng.normal(0.0, 5.5)),
        }
        obs = {k: min(max(v, -99.0), 0.0) for k, v in obs.items()}
        validation.append(LabeledSample((x, y), Fingerprint(obs)))
    return grid_xy, grid_values, validation, ["apA", "apB", "apC"]


@pytest.fixture(scope="session")
def cell_world_factory():
    return make_cell_world
