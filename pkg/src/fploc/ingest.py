"""Reading and writing location-tagged fingerprint records (JSON Lines).

One record per line::

    {"x": <m>, "y": <m>, "t": <s, optional>, "obs": {"<feature-id>": <rss dBm>}}

On ingest, RSS values at or below -100 dBm are dropped (the feature is
non-measurable there) and values above 0 dBm are rejected.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from .errors import FplocError
from .model import RSS_FLOOR, Fingerprint, LabeledSample, Rfm, RoiGeometry


def parse_record(line: str, lineno: int = 0) -> LabeledSample:
    """Parse one JSON record into a LabeledSample.

    Raises:
        FplocError("bad-record"): malformed JSON or missing fields.
        FplocError("bad-rss"): an RSS value above 0 dBm.
    """
    try:
        raw = json.loads(line)
        x = float(raw["x"])
        y = float(raw["y"])
        obs_in = raw.get("obs", {})
        t = raw.get("t")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FplocError("bad-record", f"line {lineno}: malformed record ({exc})") from exc

    obs: dict[str, float] = {}
    for fid, rss in obs_in.items():
        rss = float(rss)
        if rss > 0.0:
            raise FplocError(
                "bad-rss", f"line {lineno}: rss {rss} dBm for {fid!r} above 0 dBm"
            )
        if rss <= RSS_FLOOR:
            continue  # non-measurable: encoded by absence
        obs[str(fid)] = rss
    timestamp = float(t) if t is not None else None
    return LabeledSample(location=(x, y), fingerprint=Fingerprint(obs, timestamp))


def read_samples(path: str | Path) -> list[LabeledSample]:
    """Read all records of a JSON Lines file; blank lines are skipped."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                samples.append(parse_record(line, lineno))
    return samples


def sample_to_record(sample: LabeledSample) -> dict:
    rec: dict = {"x": sample.location[0], "y": sample.location[1]}
    if sample.fingerprint.timestamp is not None:
        rec["t"] = sample.fingerprint.timestamp
    rec["obs"] = dict(sorted(sample.fingerprint.observations.items()))
    return rec


def write_samples(path: str | Path, samples: Iterable[LabeledSample]) -> None:
    """Write samples as JSON Lines; key order is fixed so output is stable."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_record(sample), sort_keys=False))
            fh.write("\n")


def infer_roi(samples: Sequence[LabeledSample], cell_size: float = 2.0) -> RoiGeometry:
    """Smallest axis-aligned RoI rectangle covering the samples."""
    if not samples:
        raise FplocError("empty-rfm", "cannot infer an RoI from zero samples")
    xs = [s.location[0] for s in samples]
    ys = [s.location[1] for s in samples]
    width = max(max(xs) - min(xs), 1e-9)
    height = max(max(ys) - min(ys), 1e-9)
    return RoiGeometry(
        width=width, height=height, origin=(min(xs), min(ys)), cell_size=cell_size
    )


def load_rfm(
    path: str | Path, roi: RoiGeometry | None = None, cell_size: float = 2.0
) -> Rfm:
    """Read a JSON Lines file into an Rfm, inferring the RoI when not given."""
    samples = read_samples(path)
    if roi is None:
        roi = infer_roi(samples, cell_size=cell_size)
    return Rfm.build(samples, roi)
