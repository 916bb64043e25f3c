"""Deterministic synthetic radio worlds with known ground truth.

RSS follows a log-distance path-loss model with optional wall attenuation
and additive Gaussian noise: for an emitter at ``e`` with transmit power
``P0`` (dBm at the 1 m reference distance) the level at ``x`` is

    P0 - 10 * n * log10(max(|x - e|, 1) / 1) - sum(wall attenuations crossed)

Levels at or below -100 dBm are omitted (non-measurable), which makes the
set of visible emitters vary across the region: nearby cells share more
feature keys than distant ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FplocError
from .model import Fingerprint, LabeledSample, Rfm, RoiGeometry

REFERENCE_DISTANCE_M = 1.0


@dataclass(frozen=True)
class Wall:
    """A line segment that attenuates every signal path crossing it."""

    p1: tuple[float, float]
    p2: tuple[float, float]
    attenuation_db: float

    def __post_init__(self) -> None:
        if self.attenuation_db < 0:
            raise ValueError("wall attenuation must be non-negative dB")


@dataclass(frozen=True)
class WorldConfig:
    """Parameters of one seeded synthetic world."""

    seed: int
    roi: RoiGeometry
    n_emitters: int = 40
    tx_power_dbm: float = -40.0
    path_loss_exponent: float = 3.0
    noise_sigma: float = 3.0
    sample_density: float = 4.0
    n_test: int = 300
    walls: tuple[Wall, ...] = ()
    visibility_floor: float = -100.0

    def __post_init__(self) -> None:
        if self.roi.width <= 0 or self.roi.height <= 0:
            raise FplocError("bad-roi", "RoI must have positive area")
        if self.n_emitters < 1:
            raise ValueError("n_emitters must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not -40.0 <= self.tx_power_dbm <= 0.0:
            raise ValueError("tx_power_dbm must lie in [-40, 0]")
        if self.sample_density <= 0:
            raise ValueError("sample_density must be positive")


def _segments_cross(a1, a2, b1, b2) -> bool:
    # Proper crossing test; touching endpoints do not count.
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    d1 = orient(b1, b2, a1)
    d2 = orient(b1, b2, a2)
    d3 = orient(a1, a2, b1)
    d4 = orient(a1, a2, b2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != d2 and d3 != d4


def path_rss(
    location: tuple[float, float],
    emitter: tuple[float, float],
    cfg: WorldConfig,
) -> float:
    """Noise-free RSS at ``location`` from ``emitter`` (dBm, unclipped)."""
    d = math.hypot(location[0] - emitter[0], location[1] - emitter[1])
    d = max(d, REFERENCE_DISTANCE_M)
    loss = 10.0 * cfg.path_loss_exponent * math.log10(d / REFERENCE_DISTANCE_M)
    for wall in cfg.walls:
        if _segments_cross(location, emitter, wall.p1, wall.p2):
            loss += wall.attenuation_db
    return cfg.tx_power_dbm - loss


def _emitter_ids(rng: np.random.Generator, count: int) -> list[str]:
    # MAC-like ids with a band tag; locally-administered prefix 02.
    ids = []
    seen = set()
    while len(ids) < count:
        octets = rng.integers(0, 256, size=5)
        fid = "02:" + ":".join(f"{int(b):02x}" for b in octets) + "@2g4"
        if fid not in seen:
            seen.add(fid)
            ids.append(fid)
    return ids


def _observe(
    location: tuple[float, float],
    emitters: list[tuple[str, tuple[float, float]]],
    cfg: WorldConfig,
    rng: np.random.Generator,
) -> Fingerprint:
    # One noise draw per emitter regardless of visibility keeps the RNG
    # stream aligned across runs.
    noise = (
        rng.normal(0.0, cfg.noise_sigma, size=len(emitters))
        if cfg.noise_sigma > 0
        else np.zeros(len(emitters))
    )
    obs = {}
    for (fid, exy), eta in zip(emitters, noise):
        rss = path_rss(location, exy, cfg) + float(eta)
        if rss <= cfg.visibility_floor:
            continue
        obs[fid] = min(rss, 0.0)
    return Fingerprint(obs)


def world_emitters(cfg: WorldConfig) -> list[tuple[str, tuple[float, float]]]:
    """The world's emitters (id, position), a pure function of the seed."""
    rng = np.random.default_rng([cfg.seed, 0])
    roi = cfg.roi
    ids = _emitter_ids(rng, cfg.n_emitters)
    ex = rng.uniform(roi.origin[0], roi.origin[0] + roi.width, size=cfg.n_emitters)
    ey = rng.uniform(roi.origin[1], roi.origin[1] + roi.height, size=cfg.n_emitters)
    return [(fid, (float(x), float(y))) for fid, x, y in zip(ids, ex, ey)]


def generate(cfg: WorldConfig) -> tuple[Rfm, list[LabeledSample]]:
    """Generate the reference map and an independent test set.

    Reference samples sit on a jittered lattice matching ``sample_density``;
    test samples are drawn uniformly in the RoI. Fully reproducible from
    ``cfg.seed``.
    """
    roi = cfg.roi
    ox, oy = roi.origin
    emitters = world_emitters(cfg)

    rng = np.random.default_rng([cfg.seed, 1])
    nx = max(1, round(roi.width * math.sqrt(cfg.sample_density)))
    ny = max(1, round(roi.height * math.sqrt(cfg.sample_density)))
    px, py = roi.width / nx, roi.height / ny

    samples = []
    for j in range(ny):
        for i in range(nx):
            jx, jy = rng.uniform(-0.5, 0.5, size=2)
            x = min(max(ox + (i + 0.5 + jx) * px, ox), ox + roi.width)
            y = min(max(oy + (j + 0.5 + jy) * py, oy), oy + roi.height)
            samples.append(LabeledSample((x, y), _observe((x, y), emitters, cfg, rng)))

    tests = sample_labeled(cfg, cfg.n_test, stream=2)
    return Rfm.build(samples, roi), tests


def sample_labeled(cfg: WorldConfig, n: int, stream: int = 3) -> list[LabeledSample]:
    """Draw n labelled samples uniformly in the RoI from an independent
    RNG substream; different streams never share noise draws."""
    roi = cfg.roi
    ox, oy = roi.origin
    emitters = world_emitters(cfg)
    rng = np.random.default_rng([cfg.seed, stream])
    out = []
    for _ in range(n):
        x = float(rng.uniform(ox, ox + roi.width))
        y = float(rng.uniform(oy, oy + roi.height))
        out.append(LabeledSample((x, y), _observe((x, y), emitters, cfg, rng)))
    return out


def auto_walls(roi: RoiGeometry) -> tuple[Wall, ...]:
    """A plausible interior layout: three cross walls and a broken corridor.

    Walls are what makes emitter visibility (and hence key-set similarity)
    vary across the region; without them a desk-scale region sees every
    emitter everywhere.
    """
    ox, oy = roi.origin
    w, h = roi.width, roi.height
    return (
        Wall((ox + 0.25 * w, oy), (ox + 0.25 * w, oy + 0.7 * h), 21.0),
        Wall((ox + 0.50 * w, oy + 0.3 * h), (ox + 0.50 * w, oy + h), 21.0),
        Wall((ox + 0.75 * w, oy), (ox + 0.75 * w, oy + 0.7 * h), 21.0),
        Wall((ox, oy + 0.5 * h), (ox + 0.20 * w, oy + 0.5 * h), 18.0),
        Wall((ox + 0.30 * w, oy + 0.5 * h), (ox + 0.70 * w, oy + 0.5 * h), 18.0),
        Wall((ox + 0.80 * w, oy + 0.5 * h), (ox + w, oy + 0.5 * h), 18.0),
    )


def standard_world(seed: int = 7) -> WorldConfig:
    """The 20x10 m, 40-emitter, 50-cell benchmark world."""
    roi = RoiGeometry(width=20.0, height=10.0, cell_size=2.0)
    return WorldConfig(
        seed=seed,
        roi=roi,
        n_emitters=40,
        tx_power_dbm=-40.0,
        path_loss_exponent=3.0,
        noise_sigma=3.0,
        sample_density=4.0,
        n_test=300,
        walls=auto_walls(roi),
    )
