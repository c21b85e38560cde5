"""Batch command-line front end.

Every subcommand writes one JSON report (schema "v1") that embeds the
resolved configuration and, where boundary normalization happens, the applied
snowflake factor. Reports for identical argv + seed are byte-identical. CSV
output is reserved for estimator curves; figures are rendered from report
data when a figure path is supplied.

Exit codes: 0 success, 2 validation error, 3 inconclusive classifier verdict.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import experiments, viz
from .classify import qi_equivalent
from .heintze import ExpandingStructure, HoroPoint, euclid_cygan, tent_distance, visual_distance
from .madic import MAdicPoint, madic_distance
from .maps import (
    Sampler,
    Window,
    catalog_from_config,
    check_uniform,
    estimate_bilipschitz,
    estimate_measure_distortion,
    estimate_qs_modulus,
    rigidity_experiment,
    standard_catalog,
    verify_coordinate_form,
    verify_decomposition,
)
from .mille import (
    BoundaryPoint,
    MillePoint,
    boundary_visual,
    dmax_formula,
    mille_distance,
    normalize_for_boundary,
)

SCHEMA = "v1"
DEFAULT_WINDOW = {"x_half": 10.0, "t_low": -4, "t_high": 4}


class CliError(click.ClickException):
    exit_code = 2


def _fail(msg: str) -> "CliError":
    return CliError(msg)


def _load_structure(path: str) -> ExpandingStructure:
    try:
        return ExpandingStructure.from_json(Path(path).read_text())
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise _fail(f"cannot load structure from {path}: {exc}")


def _parse_window(text: str | None) -> Window:
    data = DEFAULT_WINDOW if text is None else None
    if data is None:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise _fail(f"malformed window JSON: {exc}")
    try:
        return Window.from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise _fail(f"invalid window: {exc}")


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise _fail(f"malformed vector {text!r}: {exc}")


def _parse_json_point(text: str, keys: set[str]) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _fail(f"malformed point JSON {text!r}: {exc}")
    if set(data) != keys:
        raise _fail(f"point JSON must have keys {sorted(keys)}, got {sorted(data)}")
    return data


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


def _report(command: str, config: dict, results, snowflake: float | None = None) -> dict:
    return {"schema": SCHEMA, "command": command, "config": config,
            "snowflake_factor": snowflake, "results": results}


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_catalog(maps_arg: str, E: ExpandingStructure, m: int) -> dict:
    if maps_arg == "builtin":
        return standard_catalog(E, m)
    try:
        config = json.loads(Path(maps_arg).read_text())
        return catalog_from_config(config, E, m)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise _fail(f"cannot load map catalog from {maps_arg}: {exc}")


@click.group()
def main() -> None:
    """Metric geometry of fibered tree products at desk scale."""


# -- dist ---------------------------------------------------------------------


@main.command()
@click.option("--mode", type=click.Choice(["madic", "tent", "mille"]), default="madic",
              show_default=True)
@click.option("--a", "a_text", required=True, help="First point (encoding depends on mode)")
@click.option("--b", "b_text", required=True, help="Second point")
@click.option("--base", type=float, default=None, help="Ultrametric base (madic mode; default m)")
@click.option("--spec", "spec_path", type=click.Path(), default=None, help="Structure JSON")
@click.option("--m", "m_val", type=int, default=None, help="Tree valence parameter (mille mode)")
@click.option("--out", type=click.Path(), default=None)
def dist(mode, a_text, b_text, base, spec_path, m_val, out):
    """Distance between two points: tree boundary, tent model, or fibered model."""
    config = {"mode": mode, "a": a_text, "b": b_text, "base": base,
              "spec": spec_path, "m": m_val}
    if mode == "madic":
        try:
            pa, pb = MAdicPoint.parse(a_text), MAdicPoint.parse(b_text)
            value = madic_distance(pa, pb, base)
        except ValueError as exc:
            raise _fail(str(exc))
    else:
        if spec_path is None:
            raise _fail(f"--spec is required for mode {mode}")
        E = _load_structure(spec_path)
        if mode == "tent":
            da = _parse_json_point(a_text, {"x", "t"})
            db = _parse_json_point(b_text, {"x", "t"})
            try:
                value = tent_distance(E, HoroPoint(np.asarray(da["x"], float), da["t"]),
                                      HoroPoint(np.asarray(db["x"], float), db["t"]))
            except ValueError as exc:
                raise _fail(str(exc))
        else:
            if m_val is None:
                raise _fail("--m is required for mode mille")
            da = _parse_json_point(a_text, {"x", "xi", "t"})
            db = _parse_json_point(b_text, {"x", "xi", "t"})
            try:
                pa = MillePoint(np.asarray(da["x"], float), MAdicPoint.parse(da["xi"]), da["t"])
                pb = MillePoint(np.asarray(db["x"], float), MAdicPoint.parse(db["xi"]), db["t"])
                value = mille_distance(E, m_val, pa, pb)
            except ValueError as exc:
                raise _fail(str(exc))
    _emit(_report("dist", config, {"distance": float(value)}), out)


# -- visual -------------------------------------------------------------------


@main.command()
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--x", "x_text", required=True, help="Comma-separated coordinates")
@click.option("--y", "y_text", required=True)
@click.option("--epsilon", type=float, default=None, help="Snowflake exponent override")
@click.option("--cygan/--no-cygan", default=False, help="Also report the horospherical limit value")
@click.option("--out", type=click.Path(), default=None)
def visual(spec_path, x_text, y_text, epsilon, cygan, out):
    """Visual boundary distance on the homogeneous model."""
    E = _load_structure(spec_path)
    x, y = _parse_vector(x_text), _parse_vector(y_text)
    config = {"spec": spec_path, "x": x_text, "y": y_text, "epsilon": epsilon, "cygan": cygan}
    try:
        results = {"distance": visual_distance(E, x, y, epsilon)}
        if cygan:
            results["euclid_cygan"] = euclid_cygan(E, x, y)
    except ValueError as exc:
        raise _fail(str(exc))
    _emit(_report("visual", config, results), out)


# -- boundary -----------------------------------------------------------------


@main.command()
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--m", "m_val", type=int, required=True)
@click.option("--a", "a_text", default=None, help='Boundary point JSON {"x":[...],"xi":"m:{...}"}')
@click.option("--b", "b_text", default=None)
@click.option("--count", type=int, default=None, help="Batch mode: number of sampled pairs")
@click.option("--seed", type=int, default=None)
@click.option("--window", "window_text", default=None)
@click.option("--case", type=click.Choice(["same_ray", "same_fiber", "mixed"]), default="mixed",
              show_default=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--fig", "fig_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
def boundary(spec_path, m_val, a_text, b_text, count, seed, window_text, case,
             csv_path, fig_path, out):
    """Boundary distances on the fibered model: model value vs closed formula.

    The structure is normalized automatically (smallest exponent becomes
    ln m); the applied factor is recorded in the report.
    """
    E0 = _load_structure(spec_path)
    try:
        E, factor = normalize_for_boundary(E0, m_val)
    except ValueError as exc:
        raise _fail(str(exc))
    config = {"spec": spec_path, "m": m_val, "a": a_text, "b": b_text, "count": count,
              "seed": seed, "window": window_text, "case": case}
    if a_text is not None or b_text is not None:
        if a_text is None or b_text is None:
            raise _fail("single-pair mode needs both --a and --b")
        try:
            pa, pb = BoundaryPoint.from_json(a_text), BoundaryPoint.from_json(b_text)
            model = boundary_visual(E, m_val, pa, pb)
            formula = dmax_formula(E, m_val, pa, pb)
        except (ValueError, json.JSONDecodeError) as exc:
            raise _fail(str(exc))
        ratio = model / formula if formula else None
        _emit(_report("boundary", config,
                      {"model_value": model, "formula_value": formula, "ratio": ratio},
                      snowflake=factor), out)
        return
    if count is None:
        raise _fail("provide either --a/--b or --count for batch mode")
    if seed is None:
        raise _fail("--seed is mandatory for sampling runs")
    sampler = Sampler(seed, _parse_window(window_text), count)
    try:
        results = experiments.boundary_comparison(E, m_val, sampler, case)
    except ValueError as exc:
        raise _fail(str(exc))
    if csv_path:
        _write_csv(csv_path, ["model_value", "formula_value", "ratio"],
                   [[r["model_value"], r["formula_value"], r["ratio"]] for r in results["records"]])
    if fig_path:
        viz.save_ratio_histogram(results["records"], fig_path)
    _emit(_report("boundary", config, results, snowflake=factor), out)


# -- classify -----------------------------------------------------------------


@main.command()
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--spec2", "spec2_path", type=click.Path(), required=True)
@click.option("--m", "m_val", type=int, required=True)
@click.option("--mp", "mp_val", type=int, required=True)
@click.option("--tol", type=float, default=None, help="Relative tolerance override")
@click.option("--out", type=click.Path(), default=None)
def classify(spec_path, spec2_path, m_val, mp_val, tol, out):
    """Equivalence verdict for two fibered models; exit 3 when inconclusive."""
    E, E2 = _load_structure(spec_path), _load_structure(spec2_path)
    config = {"spec": spec_path, "spec2": spec2_path, "m": m_val, "mp": mp_val, "tol": tol}
    try:
        kwargs = {} if tol is None else {"rel_tol": tol}
        verdict = qi_equivalent(E, m_val, E2, mp_val, **kwargs)
    except ValueError as exc:
        raise _fail(str(exc))
    _emit(_report("classify", config, verdict.as_dict()), out)
    if verdict.equivalent == "inconclusive":
        sys.exit(3)


# -- estimate -----------------------------------------------------------------


@main.command()
@click.option("--kind", type=click.Choice(["bilipschitz", "qs", "uniform", "measure", "rigidity"]),
              required=True)
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--m", "m_val", type=int, required=True)
@click.option("--maps", "maps_arg", default="builtin", show_default=True,
              help="Catalog JSON path, or 'builtin'")
@click.option("--family", default=None, help="Restrict to one catalog family")
@click.option("--seed", type=int, default=None)
@click.option("--window", "window_text", default=None)
@click.option("--count", type=int, default=2000, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--fig", "fig_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
def estimate(kind, spec_path, m_val, maps_arg, family, seed, window_text, count,
             csv_path, fig_path, out):
    """Distortion estimators over a map catalog (normalized structure)."""
    if seed is None:
        raise _fail("--seed is mandatory for sampling runs")
    E0 = _load_structure(spec_path)
    try:
        E, factor = normalize_for_boundary(E0, m_val)
        catalog = _load_catalog(maps_arg, E, m_val)
    except ValueError as exc:
        raise _fail(str(exc))
    if family is not None:
        if family not in catalog:
            raise _fail(f"unknown family {family!r}; catalog has {sorted(catalog)}")
        catalog = {family: catalog[family]}
    sampler = Sampler(seed, _parse_window(window_text), count)
    config = {"kind": kind, "spec": spec_path, "m": m_val, "maps": maps_arg,
              "family": family, "seed": seed, "window": window_text, "count": count}
    csv_header: list[str] = []
    csv_rows: list[list] = []
    try:
        if kind == "bilipschitz":
            results = {}
            for fam, fmaps in catalog.items():
                results[fam] = [estimate_bilipschitz(f, sampler, E, m_val) for f in fmaps]
                for i, est in enumerate(results[fam]):
                    csv_rows.append([fam, i, est["a_low"], est["b_high"]])
            csv_header = ["family", "map", "a_low", "b_high"]
        elif kind == "qs":
            results = {}
            for fam, fmaps in catalog.items():
                results[fam] = [estimate_qs_modulus(f, sampler, E, m_val) for f in fmaps]
                for i, bins in enumerate(results[fam]):
                    for row in bins:
                        csv_rows.append([fam, i, row["t"], row["eta_hat"], row["count"]])
            csv_header = ["family", "map", "t", "eta_hat", "count"]
        elif kind == "uniform":
            results = {}
            for fam, fmaps in catalog.items():
                k_hat, per = check_uniform(fmaps, sampler, E, m_val)
                results[fam] = {"K_hat": k_hat, "elements": per}
                for i, row in enumerate(per):
                    csv_rows.append([fam, i, row["s"], row["K"]])
            csv_header = ["family", "map", "s", "K"]
        elif kind == "measure":
            results = {}
            for fam, fmaps in catalog.items():
                results[fam] = [estimate_measure_distortion(f, sampler, E, m_val,
                                                            samples_per_box=1 << 14)
                                for f in fmaps]
                for i, est in enumerate(results[fam]):
                    for bi, r in enumerate(est["per_box"]):
                        csv_rows.append([fam, i, bi, r])
            csv_header = ["family", "map", "box", "ratio"]
        else:
            results = rigidity_experiment(catalog, sampler, E, m_val)
            csv_header = ["family", "window_factor", "bilip_ratio", "qs_excess"]
            csv_rows = [[r["family"], r["window_factor"], r["bilip_ratio"], r["qs_excess"]]
                        for r in results["rows"]]
    except ValueError as exc:
        raise _fail(str(exc))
    if csv_path:
        _write_csv(csv_path, csv_header, csv_rows)
    if fig_path:
        if kind == "qs":
            first = next(iter(results.values()))[0]
            viz.save_qs_modulus(first, fig_path)
        elif kind == "rigidity":
            viz.save_window_curves(results["rows"], fig_path)
        else:
            raise _fail(f"--fig is only available for curve kinds (qs, rigidity), not {kind}")
    _emit(_report("estimate", config, results, snowflake=factor), out)


# -- verify --------------------------------------------------------------------


@main.command()
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--m", "m_val", type=int, required=True)
@click.option("--maps", "maps_arg", default="builtin", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--window", "window_text", default=None)
@click.option("--count", type=int, default=500, show_default=True)
@click.option("--tol", type=float, default=1e-9, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def verify(spec_path, m_val, maps_arg, seed, window_text, count, tol, out):
    """Structural checks: tree-coordinate decomposition and triangular form."""
    if seed is None:
        raise _fail("--seed is mandatory for sampling runs")
    E0 = _load_structure(spec_path)
    try:
        E, factor = normalize_for_boundary(E0, m_val)
        catalog = _load_catalog(maps_arg, E, m_val)
    except ValueError as exc:
        raise _fail(str(exc))
    sampler = Sampler(seed, _parse_window(window_text), count)
    config = {"spec": spec_path, "m": m_val, "maps": maps_arg, "seed": seed,
              "window": window_text, "count": count, "tol": tol}
    results = {}
    for fam, fmaps in catalog.items():
        results[fam] = [{
            "decomposition": verify_decomposition(f, sampler, E, m_val),
            "coordinate_form": verify_coordinate_form(f, sampler, E, m_val, tol),
        } for f in fmaps]
    _emit(_report("verify", config, results, snowflake=factor), out)


# -- distort -------------------------------------------------------------------


@main.command()
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--m", "m_val", type=int, default=2, show_default=True)
@click.option("--cap", type=int, default=0, show_default=True)
@click.option("--lnd-min", type=float, default=2.0, show_default=True)
@click.option("--lnd-max", type=float, default=10.0, show_default=True)
@click.option("--count", type=int, default=40, show_default=True)
@click.option("--direction", type=click.Choice(["first_layer", "random"]),
              default="first_layer", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--fig", "fig_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
def distort(spec_path, m_val, cap, lnd_min, lnd_max, count, direction, seed,
            csv_path, fig_path, out):
    """Exponential distortion of doubled horoball complements vs ambient distance."""
    if seed is None:
        raise _fail("--seed is mandatory for sampling runs")
    E = _load_structure(spec_path)
    config = {"spec": spec_path, "m": m_val, "cap": cap, "lnd_min": lnd_min,
              "lnd_max": lnd_max, "count": count, "direction": direction, "seed": seed}
    try:
        results = experiments.distortion_experiment(
            E, m_val, cap, (lnd_min, lnd_max), count, direction, seed)
    except ValueError as exc:
        raise _fail(str(exc))
    if csv_path:
        _write_csv(csv_path, ["level_distance", "ambient", "constrained", "ratio"],
                   [[r["level_distance"], r["ambient"], r["constrained"], r["ratio"]]
                    for r in results["rows"]])
    if fig_path:
        viz.save_distortion_fit(results["rows"], results["slope"], results["intercept"], fig_path)
    _emit(_report("distort", config, results), out)


if __name__ == "__main__":
    main()
