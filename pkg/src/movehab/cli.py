"""Batch command-line front end.

One subcommand per pipeline product. Every run is reproducible from its
flags alone: the seed defaults to 0, all randomness flows from it, and no
output contains timestamps, so identical invocations produce byte-identical
output trees. Outputs are staged in a temporary directory and moved into
place with atomic renames once the whole pipeline has succeeded.

Exit codes: 0 success, 1 model-fit failure (an ``error.json`` report is
written), 2 usage or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import tempfile
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (DuplicateTimestamp, ExtentMismatch, MovehabError,
                     NonFiniteCoordinate, ParseError, UnknownCovariate,
                     UsageError)
from .geodata import RasterGrid, read_ascii_grid, write_ascii_grid
from .hmm import (HmmFit, HmmFitConfig, fit_hmm, state_probabilities,
                  viterbi_decode)
from .predict import (CurveTable, MovementContext, hmm_state_maps,
                      logrss_curve, rsf_map, ssud_map, state_prob_curve)
from .results import FitResult, save_fit
from .rng import Rng
from .rsf import availability_stability_scan, build_use_avail, fit_logistic
from .ssf import (MOVEMENT_TERMS, fit_conditional_logistic, fit_tentative_kernel,
                  generate_controls, update_movement_kernel)
from .synth import make_dataset
from .track import Track, StepSeries, read_track_csv, thin, to_steps, validate_regular

logger = logging.getLogger(__name__)

_USAGE_ERRORS = (UsageError, ParseError, ExtentMismatch, UnknownCovariate,
                 DuplicateTimestamp, NonFiniteCoordinate, OSError, ValueError)


class RunConfig(argparse.Namespace):
    """Parsed options for one run. The seed is always present."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def parse_args(argv: Sequence[str]) -> RunConfig:
    parser = _Parser(prog="movehab",
                     description="Fit movement-habitat models and emit "
                                 "their downstream products.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--out", required=True, metavar="DIR",
                        help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=0,
                        help="root seed; every draw derives from it (default 0)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="upper bound on worker threads used by modules")

    tr = _Parser(add_help=False)
    tr.add_argument("--track", required=True, metavar="CSV",
                    help="track file with columns id,t,x,y")
    tr.add_argument("--id", default=None,
                    help="track id to use when the file holds several")

    ras = _Parser(add_help=False)
    ras.add_argument("--raster", action="append", default=[],
                     metavar="NAME=PATH",
                     help="covariate raster; repeatable, names bind to model terms")

    stepopts = _Parser(add_help=False)
    stepopts.add_argument("--interval", type=float, default=None,
                          help="sampling interval in seconds "
                               "(default: median observed gap)")
    stepopts.add_argument("--tol", type=float, default=0.1,
                          help="tolerated fractional gap deviation (default 0.1)")

    p = sub.add_parser("thin", parents=[common, tr],
                       help="keep every k-th location")
    p.add_argument("--k", type=int, default=10,
                   help="thinning stride (default 10)")

    sub.add_parser("steps", parents=[common, tr, ras, stepopts],
                   help="emit the step series (lengths, turns, covariates)")

    p = sub.add_parser("fit-rsf", parents=[common, tr, ras],
                       help="logistic use-availability fit")
    _rsf_opts(p)

    p = sub.add_parser("fit-ssf", parents=[common, tr, ras, stepopts],
                       help="conditional-logistic step-selection fit")
    _ssf_opts(p)
    p.add_argument("--export-table", action="store_true",
                   help="also write the case/control table as steps.csv")

    p = sub.add_parser("fit-hmm", parents=[common, tr, ras, stepopts],
                       help="covariate-driven hidden Markov model fit")
    _hmm_opts(p)

    p = sub.add_parser("decode", parents=[common, tr, ras, stepopts],
                       help="fit the HMM and emit decoded states")
    _hmm_opts(p)

    p = sub.add_parser("logrss", parents=[common, tr, ras, stepopts],
                       help="selection-strength or state-probability curve")
    p.add_argument("--model", choices=("rsf", "ssf", "hmm"), required=True)
    p.add_argument("--covariate", default=None,
                   help="curve covariate (default: the only raster)")
    p.add_argument("--values", default=None, metavar="LO:HI:N",
                   help="curve grid, LO:HI:N or comma list "
                        "(default: raster range, 50 points)")
    _rsf_opts(p)
    _ssf_opts(p)
    _hmm_opts(p)

    p = sub.add_parser("predict-map", parents=[common, tr, ras, stepopts],
                       help="RSF map or per-state HMM maps")
    p.add_argument("--model", choices=("rsf", "hmm"), required=True)
    _rsf_opts(p)
    _hmm_opts(p)

    p = sub.add_parser("ssud", parents=[common, tr, ras, stepopts],
                       help="steady-state use from simulated paths")
    _ssf_opts(p)
    p.add_argument("--n-locations", type=int, default=100_000,
                   help="path length after burn-in (default 100000)")
    p.add_argument("--burn-in", type=int, default=1000,
                   help="discarded initial locations (default 1000)")
    p.add_argument("--candidates", type=int, default=50,
                   help="candidate steps per move (default 50)")
    p.add_argument("--chains", type=int, default=1,
                   help="independent chains pooled into the map (default 1)")

    p = sub.add_parser("simulate", parents=[common],
                       help="generate a synthetic landscape and track")
    p.add_argument("--n", type=int, default=140,
                   help="number of locations (default 140)")
    p.add_argument("--interval", type=float, default=3600.0,
                   help="sampling interval in seconds (default 3600)")
    p.add_argument("--covariate", default="preydiv",
                   help="name of the generated covariate (default preydiv)")

    cfg = parser.parse_args(list(argv), namespace=RunConfig())
    if cfg.seed < 0:
        raise UsageError("--seed must be non-negative")
    if cfg.threads < 1:
        raise UsageError("--threads must be >= 1")
    return cfg


def _rsf_opts(p) -> None:
    p.add_argument("--ratio", type=int, default=10,
                   help="available points per used point (default 10)")
    p.add_argument("--thin", type=int, default=1, dest="thin_k",
                   help="keep every k-th location before the RSF fit (default 1)")
    p.add_argument("--buffer", type=float, default=0.0,
                   help="hull buffer distance for availability (default 0)")
    p.add_argument("--scan", default=None, metavar="R1,R2,...",
                   help="also refit over these availability ratios")


def _ssf_opts(p) -> None:
    p.add_argument("--controls", type=int, default=10,
                   help="control points per step (default 10)")
    p.add_argument("--interaction", action="store_true",
                   help="let each covariate modify step length (cov:ln_l terms)")


def _hmm_opts(p) -> None:
    p.add_argument("--states", type=int, default=3,
                   help="number of hidden states (default 3)")
    p.add_argument("--restarts", type=int, default=25,
                   help="random restarts (default 25)")
    p.add_argument("--delta", choices=("free", "stationary"), default="free",
                   help="initial-distribution handling (default free)")
    p.add_argument("--obs-covariates", default=None, metavar="NAMES",
                   help="comma list of rasters that shift log mean step length")


# ---------------------------------------------------------------------------
# input loading


def _load_rasters(cfg) -> Dict[str, RasterGrid]:
    grids: Dict[str, RasterGrid] = {}
    for item in getattr(cfg, "raster", []) or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--raster expects NAME=PATH, got {item!r}")
        if name in grids:
            raise UsageError(f"duplicate raster name {name!r}")
        grids[name] = read_ascii_grid(path)
    return grids


def _load_track(cfg) -> Track:
    tracks = read_track_csv(cfg.track)
    by_id = {t.id: t for t in tracks}
    if cfg.id is not None:
        if cfg.id not in by_id:
            raise UsageError(
                f"track id {cfg.id!r} not in {cfg.track} "
                f"(have: {', '.join(sorted(by_id))})"
            )
        return by_id[cfg.id]
    if len(tracks) > 1:
        raise UsageError(
            f"{cfg.track} holds {len(tracks)} track ids; pick one with --id"
        )
    return tracks[0]


def _interval_of(cfg, track: Track) -> float:
    if cfg.interval is not None:
        if cfg.interval <= 0:
            raise UsageError("--interval must be positive")
        return float(cfg.interval)
    gaps = np.diff(track.times)
    iv = float(np.median(gaps))
    logger.info("using median gap %s s as the sampling interval", _fmt(iv))
    return iv


def _make_steps(cfg, track: Track, grids) -> StepSeries:
    interval = _interval_of(cfg, track)
    bursts = validate_regular(track, interval, cfg.tol)
    return to_steps(bursts, grids)


def _parse_values(cfg, grids) -> Tuple[str, np.ndarray]:
    cov = cfg.covariate
    if cov is None:
        if len(grids) != 1:
            raise UsageError("several rasters given; pick one with --covariate")
        cov = next(iter(grids))
    if cfg.values is None:
        if cov not in grids:
            raise UsageError(f"--values required: no raster named {cov!r}")
        g = grids[cov]
        vals = g.values[g.valid_mask]
        if vals.size == 0:
            raise UsageError(f"raster {cov!r} has no valid cells")
        lo, hi = float(vals.min()), float(vals.max())
        if hi <= lo:
            raise UsageError(f"raster {cov!r} is constant; pass --values")
        return cov, np.linspace(lo, hi, 50)
    text = cfg.values
    try:
        if ":" in text:
            lo_s, hi_s, n_s = text.split(":")
            lo, hi, n = float(lo_s), float(hi_s), int(n_s)
            if n < 2 or hi <= lo:
                raise ValueError
            return cov, np.linspace(lo, hi, n)
        vals = np.array([float(v) for v in text.split(",")])
        if vals.size < 1 or np.any(np.diff(vals) <= 0):
            raise ValueError
        return cov, vals
    except ValueError:
        raise UsageError(
            f"--values expects LO:HI:N or an increasing comma list, got {text!r}"
        ) from None


# ---------------------------------------------------------------------------
# shared fitting pipelines


def _fit_rsf(cfg, rng: Rng, grids) -> Tuple[FitResult, Track, Dict[str, str]]:
    if not grids:
        raise UsageError("fit-rsf needs at least one --raster")
    track = _load_track(cfg)
    if cfg.thin_k > 1:
        track = thin(track, cfg.thin_k)
    table = build_use_avail(track, grids, cfg.ratio, rng.child("avail"),
                            buffer_m=cfg.buffer)
    fit = fit_logistic(table)
    info = {
        "n_locations": str(len(track)),
        "n_used": str(table.n_used),
        "n_available": str(table.n_available),
    }
    return fit, track, info


def _ssf_terms(cfg, grids) -> List[str]:
    terms = list(grids) + list(MOVEMENT_TERMS)
    if cfg.interaction:
        terms += [f"{c}:ln_l" for c in grids]
    return terms


def _fit_ssf(cfg, rng: Rng, grids):
    if not grids:
        raise UsageError("step-selection fits need at least one --raster")
    track = _load_track(cfg)
    steps = _make_steps(cfg, track, grids)
    kernel = fit_tentative_kernel(steps)
    table = generate_controls(steps, kernel, cfg.controls, grids,
                              rng.child("controls"))
    fit = fit_conditional_logistic(table, _ssf_terms(cfg, grids))
    info = {
        "n_steps": str(len(steps.length)),
        "n_strata": str(len(table.offsets) - 1),
        "n_dropped_controls": str(table.n_dropped_controls),
        "n_dropped_strata": str(table.n_dropped_strata),
        "kernel_shape": _fmt(kernel.step.shape),
        "kernel_rate": _fmt(kernel.step.rate),
        "kernel_kappa": _fmt(kernel.angle.kappa),
    }
    return fit, kernel, steps, table, info


def _fit_hmm(cfg, rng: Rng, grids):
    track = _load_track(cfg)
    steps = _make_steps(cfg, track, grids)
    obs_covs: List[str] = []
    if cfg.obs_covariates:
        obs_covs = [c.strip() for c in cfg.obs_covariates.split(",") if c.strip()]
        for c in obs_covs:
            if c not in grids:
                raise UsageError(f"--obs-covariates names unknown raster {c!r}")
    fit = fit_hmm(
        steps, cfg.states, rng.child("hmm"),
        transition_covariates=tuple(grids),
        obs_covariates=tuple(obs_covs),
        delta_mode=cfg.delta,
        config=HmmFitConfig(restarts=cfg.restarts),
    )
    info = {
        "n_steps": str(fit.n_obs),
        "n_bursts": str(fit.n_bursts),
        "restarts": str(cfg.restarts),
        "states": str(cfg.states),
    }
    return fit, steps, info


def _hmm_to_fitresult(fit: HmmFit) -> FitResult:
    """View the HMM working parameters through the shared results table."""
    return FitResult(
        model_kind="hmm",
        term_names=list(fit.param_names),
        coefs=fit.params,
        se=fit.se,
        se_valid=fit.se_valid,
        cov=fit.cov,
        loglik=fit.loglik,
        n_obs=fit.n_obs,
        converged=fit.converged,
        covariate_means=dict(fit.covariate_means),
        meta={"n_bursts": str(fit.n_bursts)},
    )


# ---------------------------------------------------------------------------
# output writers


def _write_track_csv(path, tracks: Sequence[Track]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t", "x", "y"])
        for tr in tracks:
            for i in range(len(tr)):
                w.writerow([tr.id, int(tr.times[i]),
                            repr(float(tr.x[i])), repr(float(tr.y[i]))])


def _write_steps_csv(path, steps: StepSeries) -> None:
    covs = list(steps.covariates)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "burst", "t", "x0", "y0", "x1", "y1",
                    "l", "ln_l", "cos_theta"] + covs)
        for i in range(len(steps.length)):
            row = [steps.track_id, int(steps.burst[i]), int(steps.t_end[i]),
                   repr(float(steps.start[i, 0])), repr(float(steps.start[i, 1])),
                   repr(float(steps.end[i, 0])), repr(float(steps.end[i, 1])),
                   repr(float(steps.length[i])),
                   repr(float(math.log(steps.length[i]))),
                   repr(float(np.cos(steps.turn[i])))]
            row += [repr(float(steps.covariates[c][i])) for c in covs]
            w.writerow(row)


def _write_table_csv(path, table) -> None:
    covs = list(table.covariates)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum", "case", "l", "ln_l", "cos_theta"] + covs)
        for i in range(table.case.size):
            row = [int(table.stratum[i]), int(table.case[i]),
                   repr(float(table.length[i])),
                   repr(float(math.log(table.length[i]))),
                   repr(float(table.cos_turn[i]))]
            row += [repr(float(table.covariates[c][i])) for c in covs]
            w.writerow(row)


def _write_states_csv(path, steps: StepSeries, states: List[np.ndarray],
                      probs: np.ndarray) -> None:
    n_states = probs.shape[1]
    flat = np.concatenate(states)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t", "x", "y", "state"]
                   + [f"p_state{i + 1}" for i in range(n_states)])
        for i in range(len(steps.length)):
            row = [steps.track_id, int(steps.t_end[i]),
                   repr(float(steps.end[i, 0])), repr(float(steps.end[i, 1])),
                   int(flat[i])]
            row += [repr(float(probs[i, j])) for j in range(n_states)]
            w.writerow(row)


def _write_scan_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", "term", "estimate", "se", "error"])
        for r in rows:
            if r.fit is None:
                w.writerow([r.ratio, "", "", "", r.error])
                continue
            for i, term in enumerate(r.fit.term_names):
                w.writerow([r.ratio, term, repr(float(r.fit.coefs[i])),
                            repr(float(r.fit.se[i])), ""])


def emit_report(results: Mapping[str, object], path) -> None:
    """Plain-text run report: config echo, data summary, fit, warnings."""
    lines: List[str] = []
    for key, value in results.items():
        if isinstance(value, Mapping):
            lines.append(f"{key}:")
            for k in value:
                lines.append(f"  {k}: {_fmt(value[k])}")
        elif isinstance(value, (list, tuple)):
            lines.append(f"{key}: {len(value)}")
            for item in value:
                lines.append(f"  - {item}")
        else:
            lines.append(f"{key}: {_fmt(value)}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _coef_block(fit: FitResult) -> Dict[str, str]:
    out = {}
    for i, term in enumerate(fit.term_names):
        se = float(fit.se[i])
        se_txt = repr(se) if fit.se_valid[i] else "invalid"
        out[term] = f"{float(fit.coefs[i])!r} (se {se_txt})"
    return out


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record):
        self.messages.append(record.getMessage())


# ---------------------------------------------------------------------------
# run


def run(cfg: RunConfig) -> int:
    collector = _WarningCollector()
    root_logger = logging.getLogger("movehab")
    root_logger.addHandler(collector)
    try:
        writers, results = _execute(cfg, collector)
    except _USAGE_ERRORS as exc:
        print(f"movehab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except MovehabError as exc:
        _write_outputs(cfg.out, [
            ("error.json", lambda p, e=exc: _write_error(p, e)),
        ])
        print(f"movehab: fit failed: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1
    finally:
        root_logger.removeHandler(collector)
    results["warnings"] = list(collector.messages)
    writers.append(("report.txt", lambda p: emit_report(results, p)))
    try:
        _write_outputs(cfg.out, writers)
    except OSError as exc:
        print(f"movehab: cannot write outputs: {exc}", file=sys.stderr)
        return 2
    return 0


def _write_error(path, exc: MovehabError) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_outputs(outdir, writers) -> None:
    os.makedirs(outdir, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=outdir, prefix=".stage-") as stage:
        for name, fn in writers:
            fn(os.path.join(stage, name))
        for name in sorted(os.listdir(stage)):
            os.replace(os.path.join(stage, name), os.path.join(outdir, name))


def _config_echo(cfg: RunConfig) -> Dict[str, object]:
    skip = {"command"}
    return {k: v for k, v in sorted(vars(cfg).items()) if k not in skip}


def _execute(cfg: RunConfig, collector) -> Tuple[list, Dict[str, object]]:
    rng = Rng(cfg.seed)
    results: Dict[str, object] = {
        "command": cfg.command,
        "seed": cfg.seed,
        "config": _config_echo(cfg),
    }
    writers: List[Tuple[str, Callable]] = []
    grids = _load_rasters(cfg) if hasattr(cfg, "raster") else {}

    if cfg.command == "thin":
        track = _load_track(cfg)
        thinned = thin(track, cfg.k)
        results["data"] = {
            "n_locations_in": len(track),
            "n_locations_out": len(thinned),
        }
        writers.append(("track.csv", lambda p: _write_track_csv(p, [thinned])))

    elif cfg.command == "steps":
        track = _load_track(cfg)
        steps = _make_steps(cfg, track, grids)
        results["data"] = {
            "n_locations": len(track),
            "n_steps": len(steps.length),
            "n_bursts": len(steps.offsets) - 1,
            "n_floored": steps.n_floored,
        }
        writers.append(("steps.csv", lambda p: _write_steps_csv(p, steps)))

    elif cfg.command == "fit-rsf":
        fit, track, info = _fit_rsf(cfg, rng, grids)
        results["data"] = info
        results["coefficients"] = _coef_block(fit)
        results["model"] = {"loglik": fit.loglik, "converged": fit.converged}
        writers.append(("coefficients.csv", lambda p: save_fit(fit, p)))
        if cfg.scan:
            ratios = [int(r) for r in cfg.scan.split(",") if r]
            rows = availability_stability_scan(track, grids, ratios,
                                               rng.child("scan"),
                                               buffer_m=cfg.buffer)
            writers.append(("scan.csv", lambda p: _write_scan_csv(p, rows)))

    elif cfg.command == "fit-ssf":
        fit, kernel, steps, table, info = _fit_ssf(cfg, rng, grids)
        results["data"] = info
        results["coefficients"] = _coef_block(fit)
        results["model"] = {"loglik": fit.loglik, "converged": fit.converged}
        writers.append(("coefficients.csv", lambda p: save_fit(fit, p)))
        if cfg.export_table:
            writers.append(("steps.csv", lambda p: _write_table_csv(p, table)))

    elif cfg.command == "fit-hmm":
        fit, steps, info = _fit_hmm(cfg, rng, grids)
        results["data"] = info
        fr = _hmm_to_fitresult(fit)
        results["coefficients"] = _coef_block(fr)
        results["model"] = {
            "loglik": fit.loglik,
            "converged": fit.converged,
            "se_ok": fit.se_ok,
        }
        writers.append(("coefficients.csv", lambda p: save_fit(fr, p)))

    elif cfg.command == "decode":
        fit, steps, info = _fit_hmm(cfg, rng, grids)
        states = viterbi_decode(fit.model, steps)
        probs = state_probabilities(fit.model, steps)
        results["data"] = info
        fr = _hmm_to_fitresult(fit)
        results["coefficients"] = _coef_block(fr)
        results["model"] = {"loglik": fit.loglik, "converged": fit.converged}
        writers.append(("coefficients.csv", lambda p: save_fit(fr, p)))
        writers.append(("states.csv",
                        lambda p: _write_states_csv(p, steps, states, probs)))

    elif cfg.command == "logrss":
        curve = _logrss_pipeline(cfg, rng, grids, results, writers)
        writers.append(("curve.csv", curve.write_csv))

    elif cfg.command == "predict-map":
        if cfg.model == "rsf":
            fit, _track, info = _fit_rsf(cfg, rng, grids)
            results["data"] = info
            results["coefficients"] = _coef_block(fit)
            grid = rsf_map(fit, grids)
            writers.append(("map_rsf.asc",
                            lambda p: write_ascii_grid(grid, p)))
            writers.append(("coefficients.csv", lambda p: save_fit(fit, p)))
        else:
            fit, steps, info = _fit_hmm(cfg, rng, grids)
            results["data"] = info
            fr = _hmm_to_fitresult(fit)
            results["coefficients"] = _coef_block(fr)
            maps = hmm_state_maps(fit, grids)
            for i, m in enumerate(maps):
                writers.append((f"map_state{i + 1}.asc",
                                lambda p, mm=m: write_ascii_grid(mm, p)))
            writers.append(("coefficients.csv", lambda p: save_fit(fr, p)))

    elif cfg.command == "ssud":
        fit, kernel, steps, table, info = _fit_ssf(cfg, rng, grids)
        results["data"] = info
        results["coefficients"] = _coef_block(fit)
        grid = ssud_map(fit, kernel, grids, rng.child("ssud"),
                        n_locations=cfg.n_locations, burn_in=cfg.burn_in,
                        n_candidates=cfg.candidates, n_chains=cfg.chains)
        writers.append(("map_ssud.asc", lambda p: write_ascii_grid(grid, p)))
        writers.append(("coefficients.csv", lambda p: save_fit(fit, p)))

    elif cfg.command == "simulate":
        track, sim_grids, states = make_dataset(
            cfg.seed, n_locations=cfg.n, covariate=cfg.covariate,
            interval_s=int(cfg.interval),
        )
        results["data"] = {
            "n_locations": len(track),
            "covariate": cfg.covariate,
        }
        writers.append(("track.csv", lambda p: _write_track_csv(p, [track])))
        for name, g in sim_grids.items():
            writers.append((f"{name}.asc",
                            lambda p, gg=g: write_ascii_grid(gg, p)))
        writers.append(("true_states.csv",
                        lambda p: _write_true_states(p, track, states)))

    else:  # unreachable: argparse restricts choices
        raise UsageError(f"unknown command {cfg.command!r}")

    return writers, results


def _write_true_states(path, track: Track, states: List[int]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t", "state"])
        for i, s in enumerate(states):
            w.writerow([track.id, int(track.times[i + 1]), s])


def _logrss_pipeline(cfg, rng, grids, results, writers) -> CurveTable:
    cov, values = _parse_values(cfg, grids)
    if cfg.model == "rsf":
        fit, _track, info = _fit_rsf(cfg, rng, grids)
        results["data"] = info
        results["coefficients"] = _coef_block(fit)
        writers.append(("coefficients.csv", lambda p: save_fit(fit, p)))
        return logrss_curve(fit, cov, values, series="rsf")
    if cfg.model == "ssf":
        fit, kernel, steps, table, info = _fit_ssf(cfg, rng, grids)
        results["data"] = info
        results["coefficients"] = _coef_block(fit)
        writers.append(("coefficients.csv", lambda p: save_fit(fit, p)))
        if not cfg.interaction:
            return logrss_curve(fit, cov, values, series="ssf")
        speeds = np.percentile(steps.length, [25.0, 50.0, 75.0])
        labels = ("slow", "moderate", "fast")
        tables = [
            logrss_curve(fit, cov, values,
                         movement_context=MovementContext(l=float(s)),
                         series=lab)
            for s, lab in zip(speeds, labels)
        ]
        return CurveTable.concat(tables)
    fit, steps, info = _fit_hmm(cfg, rng, grids)
    results["data"] = info
    fr = _hmm_to_fitresult(fit)
    results["coefficients"] = _coef_block(fr)
    writers.append(("coefficients.csv", lambda p: save_fit(fr, p)))
    return state_prob_curve(fit, cov, values)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"movehab: usage error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
