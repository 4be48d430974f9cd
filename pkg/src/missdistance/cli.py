"""Command-line entry point: ``missdistance {assess,curve,calibrate,pc-study}``.

Inputs are JSON documents with explicit units.  Numbers in CSV output are
written with 17 significant digits; JSON output uses the shortest repr that
round-trips, which is equally lossless.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np
from scipy.stats import norm

from . import calibration as cal
from .collision_probability import BiasStudyConfig, DEFAULT_SCALE_GRID, SUMMARY_QUANTILES, bias_study, pc_estimate
from .errors import ConjunctionError, NumericalFailure, ValidationError
from .geometry import (
    DispersionSpec,
    PlanarParams,
    RelativeState,
    encounter_frame,
    length_scale,
    project_state,
    speed_scale,
    state_to_spherical,
)
from .inference import assess, curve_for
from .likelihood import LikelihoodContext, PlanarLikelihoodContext

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

SEED_ENV = "MISSDISTANCE_SEED"
WORKERS_ENV = "MISSDISTANCE_WORKERS"

PIVOT_LABELS = {"wald": "w", "root": "r", "modified": "rstar", "modified_bayes": "rstar_B"}


# ----------------------------------------------------------------------------- parsing helpers


def _get(doc, key, path, default=...):
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: expected an object")
    if key not in doc:
        if default is ...:
            raise ValidationError(f"{path}.{key}: required field missing")
        return default
    return doc[key]


def _number(value, path, positive=False):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ValidationError(f"{path}: must be finite")
    if positive and not out > 0:
        raise ValidationError(f"{path}: must be positive")
    return out


def _array(value, shape, path):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: expected numeric array") from None
    if arr.shape != shape:
        raise ValidationError(f"{path}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{path}: non-finite entries")
    return arr


def _unit_checked(fn, unit, path):
    try:
        return fn(unit)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _length(value, path, default_unit="m"):
    """A length given as a bare number in ``default_unit`` or as {"value": .., "unit": ..}."""
    if isinstance(value, dict):
        unit = value.get("unit", default_unit)
        return _number(_get(value, "value", path), f"{path}.value") * _unit_checked(length_scale, unit, f"{path}.unit")
    return _number(value, path) * length_scale(default_unit)


def _state(doc, path):
    pos_unit = doc.get("position_unit", "m")
    vel_unit = doc.get("velocity_unit", "m/s")
    pos = _array(_get(doc, "position", path), (3,), f"{path}.position")
    vel = _array(_get(doc, "velocity", path), (3,), f"{path}.velocity")
    return (
        pos * _unit_checked(length_scale, pos_unit, f"{path}.position_unit"),
        vel * _unit_checked(speed_scale, vel_unit, f"{path}.velocity_unit"),
    )


def _covariance(doc, path):
    """6x6 covariance in m/s units from a full matrix, blocks, or (sigma2, tau)."""
    unit = doc.get("unit", "m")
    scale = _unit_checked(length_scale, unit, f"{path}.unit") ** 2
    try:
        if "matrix" in doc:
            return DispersionSpec(_array(doc["matrix"], (6, 6), f"{path}.matrix") * scale)
        if "sigma2" in doc:
            return DispersionSpec.from_sigma_tau(
                _number(doc["sigma2"], f"{path}.sigma2"), _number(doc.get("tau", 1.0), f"{path}.tau"), unit
            )
        if "position" in doc:
            p1 = _array(doc["position"], (3, 3), f"{path}.position") * scale
            p2 = _array(_get(doc, "velocity", path), (3, 3), f"{path}.velocity") * scale
            p12 = _array(doc["cross"], (3, 3), f"{path}.cross") * scale if "cross" in doc else None
            return DispersionSpec.from_blocks(p1, p2, p12)
    except ValidationError as exc:
        if str(exc).startswith((f"{path}:", f"{path}.")):
            raise
        raise ValidationError(f"{path}: {exc}") from None
    raise ValidationError(f"{path}: give one of 'matrix', 'sigma2' (with 'tau'), or 'position'/'velocity' blocks")


def _relative(doc):
    """Relative state vector and covariance; two absolute states are differenced as object1 - object2."""
    if "relative_state" in doc:
        pos, vel = _state(doc["relative_state"], "relative_state")
        cov = _covariance(_get(doc, "covariance", "input"), "covariance")
        return np.concatenate([pos, vel]), cov
    if "states" in doc:
        states = doc["states"]
        parts = []
        for name in ("object1", "object2"):
            obj = _get(states, name, "states")
            pos, vel = _state(obj, f"states.{name}")
            parts.append((np.concatenate([pos, vel]), _covariance(_get(obj, "covariance", f"states.{name}"),
                                                                   f"states.{name}.covariance")))
        y = parts[0][0] - parts[1][0]
        # the two estimation errors are independent, so covariances add
        cov = DispersionSpec(parts[0][1].covariance + parts[1][1].covariance)
        return y, cov
    raise ValidationError("input: need 'relative_state', 'states', or (planar mode) 'encounter_plane'")


def _planar(doc):
    """Encounter-plane observation and variances in metres."""
    if "encounter_plane" in doc:
        ep = doc["encounter_plane"]
        scale = _unit_checked(length_scale, ep.get("unit", "m"), "encounter_plane.unit")
        x = _array(_get(ep, "x", "encounter_plane"), (2,), "encounter_plane.x") * scale
        var = _array(_get(ep, "variances", "encounter_plane"), (2,), "encounter_plane.variances") * scale**2
        if np.any(var <= 0):
            raise ValidationError("encounter_plane.variances: must be positive")
        return x, var
    y, cov = _relative(doc)
    frame = encounter_frame(y[3:], cov)
    return project_state(y[:3], frame), np.asarray(frame.planar_variances)


def load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def build_context(doc):
    """Likelihood context and (planar x, variances) for p_c from a conjunction input document."""
    mode = doc.get("mode", "six_dim")
    if mode == "planar":
        x, var = _planar(doc)
        return PlanarLikelihoodContext(x, var), (x, var)
    if mode != "six_dim":
        raise ValidationError(f"mode: must be 'six_dim' or 'planar', got {mode!r}")
    y, cov = _relative(doc)
    ctx = LikelihoodContext(y, cov.precision)
    frame = encounter_frame(y[3:], cov)
    return ctx, (project_state(y[:3], frame), np.asarray(frame.planar_variances))


# ----------------------------------------------------------------------------- output helpers


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _fmt(v):
    v = float(v)
    return format(v, ".17g") if math.isfinite(v) else "nan"


def _write(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ValidationError(f"cannot write {out}: {exc.strerror}") from None


def _csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _seed(flag, config_value):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"{SEED_ENV}: expected an integer, got {env!r}") from None
    return int(config_value)


def _workers(flag):
    if flag is not None:
        return flag
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"{WORKERS_ENV}: expected an integer, got {env!r}") from None
    return 1


# ----------------------------------------------------------------------------- commands


def cmd_assess(args):
    doc = load_json(args.input)
    ctx, (x, var) = build_context(doc)
    radius = _length(doc["hard_body_radius"], "hard_body_radius") if "hard_body_radius" in doc else None
    if args.psi0 is not None:
        psi0 = args.psi0
    else:
        psi0 = _length(_get(doc, "safety_threshold", "input"), "safety_threshold")
    if radius is not None and not radius > 0:
        raise ValidationError("hard_body_radius: must be positive")
    if not psi0 > 0 or (radius is not None and psi0 < radius):
        raise ValidationError("safety_threshold: need psi0 >= hard_body_radius > 0")
    eps = args.eps if args.eps is not None else _number(doc.get("epsilon", 1e-4), "epsilon")
    alphas = tuple(_number(a, "alpha_levels") for a in doc.get("alpha_levels", (0.05, 0.025, 0.005)))
    kinds = ("wald", "root", "modified")
    report = assess(ctx, psi0, eps, alphas, kinds=kinds)
    out = report.to_dict()
    out["mode"] = doc.get("mode", "six_dim")
    if radius is not None:
        out["hard_body_radius"] = radius
        out["pc_estimate"] = pc_estimate(x, tuple(var), radius)
    out["encounter_plane"] = {"x": list(x), "variances": list(var)}
    _write(json.dumps(_clean(out), indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_curve(args):
    doc = load_json(args.input)
    ctx, _ = build_context(doc)
    if not 0 < args.alpha_min < 0.5:
        raise ValidationError("--alpha-min: must lie in (0, 0.5)")
    curve = curve_for(ctx, args.alpha_min, args.points, bayes=args.bayes)
    kinds = ["wald", "root", "modified"] + (["modified_bayes"] if args.bayes else [])
    mask = np.ones(curve.grid.size, dtype=bool)
    for kind in kinds:
        mask &= curve.usable(kind)
    header = ["psi"] + [f"Phi_{PIVOT_LABELS[k]}" for k in kinds]
    cols = [curve.grid[mask]] + [norm.cdf(curve.values(k)[mask]) for k in kinds]
    rows = [[_fmt(v) for v in row] for row in zip(*cols)]
    _write(_csv(header, rows), args.out)
    return EXIT_OK


def _percent_label(a):
    return format(100.0 * a, ".10g")


def _calibration_blocks(doc, seed, replicates):
    """(label, CalibrationConfig) for every noise block in a calibration document."""
    mode = doc.get("mode", "six_dim")
    alphas = tuple(_number(a, "alphas") for a in doc.get("alphas", cal.DEFAULT_ALPHAS))
    kinds = tuple(doc.get("pivots", cal.DEFAULT_PIVOTS))
    n = replicates if replicates is not None else int(doc.get("replicates", 2000))
    blocks = doc.get("blocks", [doc["noise"]] if "noise" in doc else None)
    if not blocks:
        raise ValidationError("config: need 'noise' or a non-empty 'blocks' list")
    truth_doc = _get(doc, "truth", "config")
    out = []
    if mode == "six_dim":
        if "relative_state" in truth_doc:
            pos, vel = _state(truth_doc["relative_state"], "truth.relative_state")
            truth = state_to_spherical(RelativeState(pos, vel))
        else:
            raise ValidationError("truth: six_dim mode needs 'relative_state'")
        for i, block in enumerate(blocks):
            noise = _covariance(block, f"blocks[{i}]")
            label = block.get("label") or (
                f"sigma2={block['sigma2']:g} tau={block.get('tau', 1):g}" if "sigma2" in block else f"block{i}"
            )
            out.append((label, cal.CalibrationConfig(truth, noise, n, alphas, kinds, seed, "six_dim")))
    elif mode == "planar":
        scale = _unit_checked(length_scale, truth_doc.get("unit", "m"), "truth.unit")
        xi = _array(_get(truth_doc, "x", "truth"), (2,), "truth.x") * scale
        truth = PlanarParams(float(np.hypot(*xi)), float(np.arctan2(xi[1], xi[0])))
        var = _array(_get(doc, "variances", "config"), (2,), "config.variances") * scale**2
        for i, block in enumerate(blocks):
            c2 = _number(block.get("c2", 1.0), f"blocks[{i}].c2", positive=True)
            cp = _number(block.get("c_prime", 1.0), f"blocks[{i}].c_prime", positive=True)
            label = block.get("label") or f"c2={c2:g} c'={cp:g}"
            noise = cal.PlanarNoise(tuple(var), c2, cp)
            out.append((label, cal.CalibrationConfig(truth, noise, n, alphas, kinds, seed, "planar")))
    else:
        raise ValidationError(f"mode: must be 'six_dim' or 'planar', got {mode!r}")
    return out


def cmd_calibrate(args):
    doc = load_json(args.config)
    seed = _seed(args.seed, doc.get("seed", 0))
    workers = _workers(args.workers)
    if workers < 1:
        raise ValidationError("--workers: must be at least 1")
    blocks = _calibration_blocks(doc, seed, args.replicates)
    alphas = blocks[0][1].alphas
    header = (["block", "statistic"] + [f"left_{_percent_label(a)}" for a in alphas]
              + [f"right_{_percent_label(a)}" for a in alphas])
    rows, reports = [], {}
    for label, config in blocks:
        try:
            rep = cal.coverage_experiment(config, workers)
        except NumericalFailure as exc:
            raise NumericalFailure(f"block {label!r}: {exc}") from exc
        reports[label] = rep.to_dict()
        for kind in config.pivots:
            rows.append([label, PIVOT_LABELS[kind]]
                        + [_fmt(100.0 * rep.left[kind][a]) for a in alphas]
                        + [_fmt(100.0 * rep.right[kind][a]) for a in alphas])
        se = [_fmt(100.0 * rep.standard_error(a)) for a in alphas]
        rows.append([label, "SE"] + se + se)
    _write(_csv(header, rows), args.out)
    if args.json:
        summary = {"seed": seed, "blocks": reports}
        _write(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n", args.json)
    return EXIT_OK


def cmd_pc_study(args):
    doc = load_json(args.config)
    scale = _unit_checked(length_scale, doc.get("unit", "m"), "unit")
    xi = _array(_get(doc, "xi", "config"), (2,), "config.xi") * scale
    var = _array(_get(doc, "variances", "config"), (2,), "config.variances") * scale**2
    radii = doc.get("radius", 5.0)
    radii = [radii] if not isinstance(radii, list) else radii
    quantiles = tuple(_number(q, "quantiles") for q in doc.get("quantiles", SUMMARY_QUANTILES))
    if any(not 0 <= q <= 1 for q in quantiles):
        raise ValidationError("quantiles: must lie in [0, 1]")
    thresholds = tuple(_number(t, "thresholds", positive=True) for t in doc.get("thresholds", (1e-4,)))
    seed = _seed(args.seed, doc.get("seed", 0))
    header = (["radius", "c2", "pc_truth", "mean"] + [f"q{format(q, 'g')}" for q in sorted(quantiles)]
              + [f"frac_below_{format(t, 'g')}" for t in thresholds])
    rows = []
    for radius in radii:
        cfg = BiasStudyConfig(
            xi=tuple(xi), base_variances=tuple(var), radius=_number(radius, "radius", positive=True) * scale,
            scale_grid=tuple(doc.get("scale_grid", DEFAULT_SCALE_GRID)),
            replicates=int(doc.get("replicates", 20000)), seed=seed, quantiles=quantiles, thresholds=thresholds,
        )
        for s in bias_study(cfg):
            rows.append([_fmt(cfg.radius), _fmt(s.c2), _fmt(s.pc_truth), _fmt(s.mean)]
                        + [_fmt(s.quantiles[q]) for q in sorted(quantiles)]
                        + [_fmt(s.fraction_below[t]) for t in thresholds])
    _write(_csv(header, rows), args.out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="missdistance", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assess", help="significance, intervals and decision for one conjunction")
    p.add_argument("--input", required=True)
    p.add_argument("--psi0", type=float, help="safety threshold in metres (overrides the input)")
    p.add_argument("--eps", type=float, help="decision threshold on the significance probability")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("curve", help="significance functions on a grid, as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--alpha-min", type=float, default=1e-5)
    p.add_argument("--points", type=int, default=80)
    p.add_argument("--bayes", action="store_true", help="add the Bayesian modified root")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("calibrate", help="Monte Carlo error rates of the pivots")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="-")
    p.add_argument("--json", help="also write the full report as JSON")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("pc-study", help="distribution of the plug-in collision probability")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_pc_study)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"missdistance: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConjunctionError, ValueError, KeyError) as exc:
        print(f"missdistance: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
