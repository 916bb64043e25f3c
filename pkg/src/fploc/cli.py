"""Command-line front end chaining the offline and online pipeline stages.

Exit codes: 0 on success, 1 on a computation error, 2 on usage or I/O
errors. A JSON config file (``--config``) can provide any option; explicit
command-line flags win over config values.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click

from . import bundle as bundle_io
from . import ingest
from .densify import as_gridded, densify
from .errors import FplocError
from .evalbench import run_benchmark, write_report_csv
from .featsel import SelectorConfig, build_profile
from .locate import online_position
from .model import RoiGeometry, partition
from .pipeline import precompute as run_precompute
from .subregion import choose_m, selection_loss_curve
from .synthworld import WorldConfig, auto_walls, generate

logger = logging.getLogger(__name__)

#: error codes caused by unreadable or inconsistent input files
_IO_ERROR_CODES = {"bad-record", "corrupt-bundle", "bundle-version"}


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(130)
    except FplocError as exc:
        click.echo(f"error [{exc.code}]: {exc}", err=True)
        sys.exit(2 if exc.code in _IO_ERROR_CODES else 1)
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Global random seed.")
@click.option("--verbose", is_flag=True, default=False)
@click.pass_context
def cli(ctx, config_path, seed, verbose):
    """Fingerprint positioning pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    config = {}
    if config_path:
        try:
            config = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FplocError("bad-record", f"config file {config_path}: {exc}") from exc
    ctx.obj = {"config": config, "seed": seed}


def _opt(ctx, section: str, name: str, flag_value, default):
    """Resolve an option: explicit flag > config section > config root > default."""
    if flag_value is not None:
        return flag_value
    config = ctx.obj["config"]
    for scope in (config.get(section, {}), config):
        if isinstance(scope, dict) and name in scope:
            return scope[name]
    return default


def _seed(ctx, section: str, flag_value) -> int:
    if flag_value is not None:
        return flag_value
    if ctx.obj["seed"] is not None:
        return ctx.obj["seed"]
    return int(_opt(ctx, section, "seed", None, 0))


def _parse_area(text: str) -> tuple[float, float]:
    try:
        w, h = text.lower().split("x")
        return float(w), float(h)
    except ValueError as exc:
        raise click.UsageError(f"--area must look like '20x10', got {text!r}") from exc


def _parse_origin(text: str) -> tuple[float, float]:
    try:
        x, y = text.split(",")
        return float(x), float(y)
    except ValueError as exc:
        raise click.UsageError(f"--origin must look like '0,0', got {text!r}") from exc


def _roi_from_flags(ctx, section, area, origin, cell_size, samples=None) -> RoiGeometry:
    area = _opt(ctx, section, "area", area, None)
    origin = _opt(ctx, section, "origin", origin, "0,0")
    cell_size = float(_opt(ctx, section, "cell_size", cell_size, 2.0))
    if area is None:
        if samples is None:
            raise click.UsageError("an --area WxH is required here")
        return ingest.infer_roi(samples, cell_size=cell_size)
    width, height = _parse_area(area)
    return RoiGeometry(
        width=width, height=height, origin=_parse_origin(origin), cell_size=cell_size
    )


def _selector_from_flags(
    ctx, section, method, positioner, epsilon, nu, phi, k_max, k_min, knn_k, sigma, p_miss
) -> SelectorConfig:
    return SelectorConfig(
        epsilon=float(_opt(ctx, section, "epsilon", epsilon, 0.05)),
        nu=float(_opt(ctx, section, "nu", nu, 0.5)),
        phi=float(_opt(ctx, section, "phi", phi, 0.05)),
        k_max=int(_opt(ctx, section, "k_max", k_max, 30)),
        k_min=int(_opt(ctx, section, "k_min", k_min, 1)),
        positioning_method=_opt(ctx, section, "positioner", positioner, "knn"),
        search=_opt(ctx, section, "method", method, "foba"),
        knn_k=int(_opt(ctx, section, "knn_k", knn_k, 5)),
        sigma=float(_opt(ctx, section, "sigma", sigma, 4.0)),
        p_miss=float(_opt(ctx, section, "p_miss", p_miss, 1e-4)),
    )


# -- commands -----------------------------------------------------------------


@cli.command()
@click.option("--seed", type=int, default=None)
@click.option("--area", default=None, help="RoI extent, e.g. 20x10 (metres).")
@click.option("--origin", default=None)
@click.option("--cell-size", type=float, default=None)
@click.option("--emitters", type=int, default=None)
@click.option("--density", type=float, default=None, help="RFM samples per m^2.")
@click.option("--noise", type=float, default=None, help="RSS noise sigma (dBm).")
@click.option("--tx-power", type=float, default=None)
@click.option("--exponent", type=float, default=None, help="Path-loss exponent.")
@click.option("--tests", "n_test", type=int, default=None)
@click.option("--walls", type=click.Choice(["auto", "none"]), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
def synth(ctx, seed, area, origin, cell_size, emitters, density, noise, tx_power,
          exponent, n_test, walls, out_dir):
    """Generate a synthetic world: rfm.jsonl, tests.jsonl, world.meta."""
    roi = _roi_from_flags(ctx, "synth", area or "20x10", origin, cell_size)
    walls_mode = _opt(ctx, "synth", "walls", walls, "auto")
    cfg = WorldConfig(
        seed=_seed(ctx, "synth", seed),
        roi=roi,
        n_emitters=int(_opt(ctx, "synth", "emitters", emitters, 40)),
        tx_power_dbm=float(_opt(ctx, "synth", "tx_power", tx_power, -30.0)),
        path_loss_exponent=float(_opt(ctx, "synth", "exponent", exponent, 2.5)),
        noise_sigma=float(_opt(ctx, "synth", "noise", noise, 3.0)),
        sample_density=float(_opt(ctx, "synth", "density", density, 4.0)),
        n_test=int(_opt(ctx, "synth", "tests", n_test, 300)),
        walls=auto_walls(roi) if walls_mode == "auto" else (),
    )
    rfm, tests = generate(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ingest.write_samples(out / "rfm.jsonl", rfm.samples)
    ingest.write_samples(out / "tests.jsonl", tests)
    meta = {
        "seed": cfg.seed,
        "area": [roi.width, roi.height],
        "origin": list(roi.origin),
        "cell_size": roi.cell_size,
        "emitters": cfg.n_emitters,
        "tx_power_dbm": cfg.tx_power_dbm,
        "path_loss_exponent": cfg.path_loss_exponent,
        "noise_sigma": cfg.noise_sigma,
        "sample_density": cfg.sample_density,
        "n_test": cfg.n_test,
        "walls": [[list(w.p1), list(w.p2), w.attenuation_db] for w in cfg.walls],
    }
    (out / "world.meta").write_text(json.dumps(meta, sort_keys=True, indent=1))
    click.echo(f"wrote {len(rfm.samples)} reference and {len(tests)} test samples to {out}")


@cli.command("ingest")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
@click.pass_context
def ingest_cmd(ctx, in_path, out_path):
    """Validate fingerprint records; optionally rewrite them normalised."""
    samples = ingest.read_samples(in_path)
    if not samples:
        raise FplocError("empty-rfm", f"{in_path} holds no records")
    features = set()
    for s in samples:
        features |= s.fingerprint.keys
    if out_path:
        ingest.write_samples(out_path, samples)
    click.echo(f"{len(samples)} records, {len(features)} distinct features")


@cli.command("densify")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--spacing", type=float, default=None)
@click.option("--length-scale", type=float, default=None)
@click.option("--nu", type=float, default=None, help="Matern smoothness.")
@click.option("--area", default=None)
@click.option("--origin", default=None)
@click.option("--cell-size", type=float, default=None)
@click.pass_context
def densify_cmd(ctx, in_path, out_path, spacing, length_scale, nu, area, origin, cell_size):
    """Interpolate a raw map onto per-cell lattices."""
    samples = ingest.read_samples(in_path)
    roi = _roi_from_flags(ctx, "densify", area, origin, cell_size, samples=samples)
    rfm = ingest.load_rfm(in_path, roi=roi)
    index = partition(rfm)
    gridded = densify(
        rfm,
        index,
        spacing=float(_opt(ctx, "densify", "spacing", spacing, 0.2)),
        length_scale=float(_opt(ctx, "densify", "length_scale", length_scale, 1.0)),
        nu=float(_opt(ctx, "densify", "nu", nu, 2.5)),
    )
    ingest.write_samples(out_path, gridded.as_samples())
    click.echo(
        f"{len(gridded)} grid points ({gridded.alpha} per non-empty cell) -> {out_path}"
    )


@cli.command("segment-eval")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--m-max", type=int, default=None)
@click.option("--holdout", type=float, default=None)
@click.option("--formula", type=click.Choice(["coverage", "jaccard"]), default=None)
@click.option("--area", default=None)
@click.option("--origin", default=None)
@click.option("--cell-size", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def segment_eval(ctx, in_path, out_path, m_max, holdout, formula, area, origin, cell_size, seed):
    """Selection loss versus the number of candidate subregions (CSV m,loss)."""
    import numpy as np

    samples = ingest.read_samples(in_path)
    if not samples:
        raise FplocError("empty-rfm", f"{in_path} holds no records")
    roi = _roi_from_flags(ctx, "segment_eval", area, origin, cell_size, samples=samples)
    fraction = float(_opt(ctx, "segment_eval", "holdout", holdout, 0.2))
    rng = np.random.default_rng(_seed(ctx, "segment_eval", seed))
    perm = rng.permutation(len(samples))
    n_val = max(1, int(len(samples) * fraction))
    if n_val >= len(samples):
        raise FplocError("empty-rfm", "holdout split leaves no training samples")
    val = [samples[i] for i in sorted(perm[:n_val])]
    train = [samples[i] for i in sorted(perm[n_val:])]

    from .model import Rfm

    index = partition(Rfm.build(train, roi))
    m_hi = int(_opt(ctx, "segment_eval", "m_max", m_max, index.n_cells))
    curve = selection_loss_curve(
        val,
        index,
        m_values=range(1, min(m_hi, index.n_cells) + 1),
        formula=_opt(ctx, "segment_eval", "formula", formula, "coverage"),
    )
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("m,loss\n")
        for m, loss in curve.points:
            fh.write(f"{m},{loss:.6g}\n")
    click.echo(f"loss curve over m=1..{curve.m_max} -> {out_path} "
               f"(flat from m={choose_m(curve)})")


@cli.command("featsel")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Gridded map (densify output).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--method", type=click.Choice(["foba", "forward", "backward", "all"]), default=None)
@click.option("--positioner", type=click.Choice(["knn", "map"]), default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--nu", type=float, default=None)
@click.option("--phi", type=float, default=None)
@click.option("--k-max", type=int, default=None)
@click.option("--k-min", type=int, default=None)
@click.option("--knn-k", type=int, default=None)
@click.option("--sigma", type=float, default=None)
@click.option("--p-miss", type=float, default=None)
@click.option("--spacing", type=float, default=None)
@click.option("--holdout", type=float, default=None)
@click.option("--area", default=None)
@click.option("--origin", default=None)
@click.option("--cell-size", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def featsel_cmd(ctx, in_path, out_path, method, positioner, epsilon, nu, phi, k_max,
                k_min, knn_k, sigma, p_miss, spacing, holdout, area, origin, cell_size, seed):
    """Select relevant features per subregion; write a profile JSON."""
    samples = ingest.read_samples(in_path)
    roi = _roi_from_flags(ctx, "featsel", area, origin, cell_size, samples=samples)
    rfm = ingest.load_rfm(in_path, roi=roi)
    index = partition(rfm)
    gridded = as_gridded(rfm, index, spacing=float(_opt(ctx, "featsel", "spacing", spacing, 0.2)))
    selector = _selector_from_flags(
        ctx, "featsel", method, positioner, epsilon, nu, phi, k_max, k_min, knn_k, sigma, p_miss
    )
    profile = build_profile(
        index,
        gridded,
        selector,
        seed=_seed(ctx, "featsel", seed),
        holdout=float(_opt(ctx, "featsel", "holdout", holdout, 0.2)),
    )
    Path(out_path).write_text(json.dumps(profile.to_dict(), sort_keys=True, indent=1))
    sizes = [len(s.features) for s in profile.per_cell.values()]
    click.echo(
        f"selected features for {len(sizes)} cells "
        f"(sizes {min(sizes)}..{max(sizes)}) -> {out_path}"
    )


@cli.command("precompute")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--val", "val_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Separately collected validation samples (JSON Lines).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--method", type=click.Choice(["foba", "forward", "backward", "all"]), default=None)
@click.option("--positioner", type=click.Choice(["knn", "map"]), default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--nu", type=float, default=None)
@click.option("--phi", type=float, default=None)
@click.option("--k-max", type=int, default=None)
@click.option("--k-min", type=int, default=None)
@click.option("--knn-k", type=int, default=None)
@click.option("--sigma", type=float, default=None)
@click.option("--p-miss", type=float, default=None)
@click.option("--spacing", type=float, default=None)
@click.option("--length-scale", type=float, default=None)
@click.option("--matern-nu", type=float, default=None)
@click.option("--holdout", type=float, default=None)
@click.option("--no-choose-m", is_flag=True, default=False)
@click.option("--area", default=None)
@click.option("--origin", default=None)
@click.option("--cell-size", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def precompute_cmd(ctx, in_path, val_path, out_dir, method, positioner, epsilon, nu, phi,
                   k_max, k_min, knn_k, sigma, p_miss, spacing, length_scale, matern_nu,
                   holdout, no_choose_m, area, origin, cell_size, seed):
    """Run the full offline stage and write the bundle directory."""
    samples = ingest.read_samples(in_path)
    roi = _roi_from_flags(ctx, "precompute", area, origin, cell_size, samples=samples)
    rfm = ingest.load_rfm(in_path, roi=roi)
    selector = _selector_from_flags(
        ctx, "precompute", method, positioner, epsilon, nu, phi, k_max, k_min, knn_k,
        sigma, p_miss,
    )
    bundle, summary = run_precompute(
        rfm,
        selector=selector,
        validation=ingest.read_samples(val_path) if val_path else None,
        spacing=float(_opt(ctx, "precompute", "spacing", spacing, 0.2)),
        length_scale=float(_opt(ctx, "precompute", "length_scale", length_scale, 1.0)),
        matern_nu=float(_opt(ctx, "precompute", "matern_nu", matern_nu, 2.5)),
        sigma=selector.sigma,
        p_miss=selector.p_miss,
        knn_k=selector.knn_k,
        seed=_seed(ctx, "precompute", seed),
        holdout=float(_opt(ctx, "precompute", "holdout", holdout, 0.2)),
        pick_m=not no_choose_m,
    )
    bundle_io.save_bundle(bundle, out_dir)
    for line in summary.lines():
        click.echo(line)
    click.echo(f"bundle -> {out_dir}")


@cli.command("locate")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--m", "m_value", default=None, help="Candidate subregions (int or 'M').")
@click.option("--h", "h_value", type=int, default=None, help="Candidate features (-1 = all).")
@click.option("--method", type=click.Choice(["knn", "map"]), default=None)
@click.option("--k", type=int, default=None)
@click.option("--sigma", type=float, default=None)
@click.option("--p-miss", type=float, default=None)
@click.pass_context
def locate_cmd(ctx, bundle_dir, in_path, out_path, m_value, h_value, method, k, sigma, p_miss):
    """Estimate positions for a query file; write estimates CSV."""
    bundle = bundle_io.load_bundle(bundle_dir)
    queries = ingest.read_samples(in_path)
    m = _resolve_m(_opt(ctx, "locate", "m", m_value, None), bundle)
    h = int(_opt(ctx, "locate", "h", h_value, -1))
    method = _opt(ctx, "locate", "method", method, "map")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("query_id,x,y,elapsed_seconds,fallback_flag\n")
        for qid, sample in enumerate(queries):
            start = time.perf_counter()
            est = online_position(
                sample.fingerprint, bundle, m=m, h=h, method=method,
                k=k, sigma=sigma, p_miss=p_miss,
            )
            elapsed = time.perf_counter() - start
            fh.write(
                f"{qid},{est.position[0]:.4f},{est.position[1]:.4f},"
                f"{elapsed:.6g},{int(est.fallback)}\n"
            )
    click.echo(f"{len(queries)} estimates -> {out_path}")


def _resolve_m(value, bundle) -> int:
    if value is None:
        return bundle.chosen_m or bundle.n_cells
    if isinstance(value, str) and value.strip().upper() == "M":
        return bundle.n_cells
    return int(value)


def _parse_grid(text: str, bundle) -> list[tuple[str, int, int]]:
    """Parse 'methods=knn,map;m=11,16,M;h=-1' into (method, m, h) triples."""
    fields = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        try:
            key, values = part.split("=", 1)
        except ValueError as exc:
            raise click.UsageError(f"bad grid fragment {part!r}") from exc
        fields[key.strip()] = [v.strip() for v in values.split(",") if v.strip()]
    methods = fields.get("methods", ["map"])
    ms = [_resolve_m(v, bundle) for v in fields.get("m", ["M"])]
    hs = [int(v) for v in fields.get("h", ["-1"])]
    unknown = set(fields) - {"methods", "m", "h"}
    if unknown:
        raise click.UsageError(f"unknown grid keys {sorted(unknown)}")
    for method in methods:
        if method not in ("knn", "map"):
            raise click.UsageError(f"unknown method {method!r} in grid")
    return [(method, m, h) for method in methods for m in ms for h in hs]


@cli.command("eval")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--tests", "tests_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_text", default=None)
@click.option("--warmup", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def eval_cmd(ctx, bundle_dir, tests_path, grid_text, warmup, out_path):
    """Benchmark configurations over a test set; write the report CSV."""
    bundle = bundle_io.load_bundle(bundle_dir)
    tests = ingest.read_samples(tests_path)
    grid_text = _opt(ctx, "eval", "grid", grid_text, "methods=map;m=M;h=-1")
    configs = _parse_grid(grid_text, bundle)
    reports = run_benchmark(
        bundle, tests, configs, warmup=int(_opt(ctx, "eval", "warmup", warmup, 5))
    )
    with open(out_path, "w", encoding="utf-8") as fh:
        write_report_csv(fh, reports)
    click.echo(f"{len(reports)} report rows -> {out_path}")


if __name__ == "__main__":
    main()
