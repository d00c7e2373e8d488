"""Command-line front end.

Exit codes: 0 success, 1 usage or I/O error, 2 inadmissible stretch factor,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

import numpy as np

from .dynamics import EnsembleConfig, default_initial_cell, simulate_ensemble
from .errors import AdmissibilityError, DomainError, NumericalError, TileDiffError, UsageError
from .geometry import Tiling, TilingSpec, require_admissible
from .output import emit_plot_data, series_to_csv, series_to_dict, samples_to_csv
from .spectral import diffusion_matrix, gaussian_prediction, limiting_mean, symbol_scan
from .stats import Tolerances, compare_report, fit_variance_growth, gaussianity_test
from .transfer import DensityField, density_to_csv, evolve_series, kernel_for, kernel_to_csv

EXIT_OK, EXIT_USAGE, EXIT_ADMISSIBILITY, EXIT_VERIFY = 0, 1, 2, 3
COMMANDS = ("kernel", "symbol", "evolve", "simulate", "predict", "verify")

DEFAULTS = {
    "steps": 100,
    "samples": 10000,
    "seed": 0,
    "mode": "lattice",
    "tol_sigma": 0.02,
    "tol_kurt": 0.05,
    "workers": 1,
    "source": "simulate",
    "points": 33,
    "lambda_max": 3.141592653589793,
    "direction": "x1",
    "experimental": False,
}


@dataclass
class ExperimentConfig:
    command: str
    tiling: str
    lam: int
    steps: int = DEFAULTS["steps"]
    samples: int = DEFAULTS["samples"]
    seed: int = DEFAULTS["seed"]
    mode: str = DEFAULTS["mode"]
    output: str | None = None
    format: str | None = None   # csv, except json for predict and verify
    tol_sigma: float = DEFAULTS["tol_sigma"]
    tol_kurt: float = DEFAULTS["tol_kurt"]
    workers: int = DEFAULTS["workers"]
    source: str = DEFAULTS["source"]
    points: int = DEFAULTS["points"]
    lambda_max: float = DEFAULTS["lambda_max"]
    direction: str = DEFAULTS["direction"]
    experimental: bool = DEFAULTS["experimental"]
    series: str | None = None
    plot: str | None = None
    samples_out: str | None = None

    def validate(self) -> TilingSpec:
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.tiling not in [t.value for t in Tiling]:
            raise UsageError(f"unknown tiling {self.tiling!r}")
        if self.mode not in ("lattice", "continuum"):
            raise UsageError(f"unknown mode {self.mode!r}")
        if self.format is None:
            self.format = "json" if self.command in ("predict", "verify") else "csv"
        if self.format not in ("csv", "json"):
            raise UsageError(f"unknown format {self.format!r}")
        if self.command in ("predict", "verify") and self.format != "json":
            raise UsageError(f"{self.command} writes JSON only")
        if self.source not in ("simulate", "evolve"):
            raise UsageError(f"unknown verify source {self.source!r}")
        if self.direction not in ("x1", "x2", "diagonal"):
            raise UsageError(f"unknown direction {self.direction!r}")
        if not (self.tol_sigma > 0 and self.tol_kurt > 0):
            raise UsageError("tolerances must be positive")
        if self.steps < 0:
            raise UsageError("--steps must be nonnegative")
        if self.samples < 1 or self.workers < 1 or self.points < 1:
            raise UsageError("--samples, --workers and --points must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        spec = TilingSpec(self.tiling, self.lam, self.experimental)
        require_admissible(spec)
        return spec


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # defaults are None so that values from --config can fill the gaps
    common.add_argument("--tiling", choices=[t.value for t in Tiling])
    common.add_argument("--lambda", dest="lam", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=["lattice", "continuum"])
    common.add_argument("--output", help="output file (default: stdout)")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--config", help="JSON file with defaults for any flag")
    common.add_argument("--tol-sigma", dest="tol_sigma", type=float)
    common.add_argument("--tol-kurt", dest="tol_kurt", type=float)
    common.add_argument("--workers", type=int)
    common.add_argument("--experimental", action="store_const", const=True,
                        help="allow even lambda on hexagons")
    p = _Parser(prog="tilediff", description="Deterministic diffusion on tilings.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("kernel", parents=[common], help="dump the one-step transfer kernel")
    sym = sub.add_parser("symbol", parents=[common], help="scan the leading symbol eigenvalue")
    sym.add_argument("--points", type=int)
    sym.add_argument("--lambda-max", dest="lambda_max", type=float)
    sym.add_argument("--direction", choices=["x1", "x2", "diagonal"])
    ev = sub.add_parser("evolve", parents=[common], help="exact density evolution from one cell")
    ev.add_argument("--series", help="also write the moment series here")
    ev.add_argument("--plot", help="write per-cell plot data here")
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo ensemble of orbits")
    sim.add_argument("--samples-out", dest="samples_out", help="write final positions here")
    sim.add_argument("--plot", help="write variance-vs-step plot data here")
    sub.add_parser("predict", parents=[common], help="closed-form Gaussian parameters")
    ver = sub.add_parser("verify", parents=[common], help="fit, test and judge a run")
    ver.add_argument("--source", choices=["simulate", "evolve"])
    return p


def parse_config(argv) -> ExperimentConfig:
    ns = vars(build_parser().parse_args(argv))
    from_file = {}
    if ns.get("config"):
        try:
            with open(ns["config"]) as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns['config']}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        from_file = {("lam" if k == "lambda" else k.replace("-", "_")): v for k, v in from_file.items()}
    known = set(ExperimentConfig.__dataclass_fields__) - {"command"}
    unknown = set(from_file) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = {}
    for key in known:
        flag = ns.get(key)
        values[key] = flag if flag is not None else from_file.get(key, DEFAULTS.get(key))
    for key in ("tiling", "lam"):
        if values[key] is None:
            raise UsageError(f"--{'lambda' if key == 'lam' else key} is required")
    return ExperimentConfig(command=ns["command"], **values)


# ---------------------------------------------------------------- runs

def _write(cfg: ExperimentConfig, text: str, path=None):
    path = path or cfg.output
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def run_kernel(cfg, spec):
    k = kernel_for(spec)
    if cfg.format == "csv":
        _write(cfg, kernel_to_csv(k))
    else:
        _write(cfg, _json({"tiling": spec.tiling.value, "lambda": spec.lam, "entries": [
            {"src_type": e.src, "dst_type": e.dst, "d_x1": e.dx1, "d_v": e.dv,
             "weight_num": e.weight.numerator, "weight_den": e.weight.denominator} for e in k.entries]}))


def run_symbol(cfg, spec):
    k = kernel_for(spec)
    ts = np.linspace(0.0, cfg.lambda_max, cfg.points)
    if spec.dim == 1:
        grid = [(t,) for t in ts]
    else:
        u = {"x1": (1.0, 0.0), "x2": (0.0, 1.0), "diagonal": (0.5 ** 0.5, 0.5 ** 0.5)}[cfg.direction]
        grid = [(t * u[0], t * u[1]) for t in ts]
    rows = symbol_scan(k, grid)
    header = ("lambda1", "lambda2", "re_lmax", "im_lmax", "gap")
    if cfg.format == "json":
        _write(cfg, _json([dict(zip(header, r)) for r in rows]))
    else:
        _write(cfg, ",".join(header) + "\n" + "".join(",".join(repr(v) for v in r) + "\n" for r in rows))


def run_evolve(cfg, spec):
    cell = default_initial_cell(spec.tiling)
    d, series = evolve_series(DensityField.delta(spec, cell), kernel_for(spec), cfg.steps, cfg.mode)
    if cfg.format == "csv":
        _write(cfg, density_to_csv(d))
    else:
        _write(cfg, _json({"masses": [
            {"type": int(t), "index": [int(i) for i in idx], "x": [float(v) for v in p], "mass": float(m)}
            for t, idx, p, m in zip(*d.atoms())], "discarded_mass": d.discarded_mass, "steps": d.steps}))
    if cfg.series:
        _write(cfg, series_to_csv(series) if cfg.format == "csv" else _json(series_to_dict(series)), cfg.series)
    if cfg.plot:
        emit_plot_data(d, cfg.plot)


def _simulate(cfg, spec, keep_final):
    ecfg = EnsembleConfig(spec, cfg.steps, cfg.samples, cfg.seed)
    return simulate_ensemble(ecfg, keep_final=keep_final, workers=cfg.workers)


def run_simulate(cfg, spec):
    s = _simulate(cfg, spec, keep_final=bool(cfg.samples_out))
    _write(cfg, series_to_csv(s) if cfg.format == "csv" else _json(series_to_dict(s)))
    if cfg.samples_out:
        _write(cfg, samples_to_csv(s.final_positions, s.final_cells), cfg.samples_out)
    if cfg.plot:
        emit_plot_data(s, cfg.plot, diffusion_matrix(kernel_for(spec)).sigma_step)


def run_predict(cfg, spec):
    est = diffusion_matrix(kernel_for(spec))
    mean = limiting_mean(kernel_for(spec), default_initial_cell(spec.tiling))
    pred = gaussian_prediction(spec, cfg.steps, mean=mean, sigma_step=est.sigma_step)
    _write(cfg, _json({"tiling": spec.tiling.value, "lambda": spec.lam, "experimental": spec.experimental,
                       "diffusion": est.to_dict(), "gaussian": pred.to_dict()}))


def run_verify(cfg, spec) -> int:
    est = diffusion_matrix(kernel_for(spec))
    tol = Tolerances(cfg.tol_sigma, cfg.tol_kurt)
    cell = default_initial_cell(spec.tiling)
    mean = limiting_mean(kernel_for(spec), cell)
    pred = gaussian_prediction(spec, cfg.steps, mean=mean, sigma_step=est.sigma_step)
    if cfg.source == "evolve":
        d, series = evolve_series(DensityField.delta(spec, cell), kernel_for(spec), cfg.steps, cfg.mode)
        gauss = gaussianity_test(d, pred, alpha=tol.chi2_alpha) if not pred.degenerate else None
    else:
        series = _simulate(cfg, spec, keep_final=True)
        gauss = gaussianity_test(series.final_positions, pred, alpha=tol.chi2_alpha) if not pred.degenerate else None
    fit = fit_variance_growth(series)
    kurt = series.excess_kurtosis[-1]
    meta = {"tiling": spec.tiling.value, "lambda": spec.lam, "steps": cfg.steps, "source": cfg.source,
            "seed": cfg.seed, "samples": cfg.samples if cfg.source == "simulate" else None,
            "mode": cfg.mode, "experimental": spec.experimental, "spectral_gap": est.spectral_gap}
    report = compare_report(fit, est, tol, kurtosis=kurt, gaussianity=gauss, meta=meta)
    _write(cfg, report.to_json() + "\n")
    sys.stderr.write(f"verify: {report.verdict} (relative error {report.relative_error:.3g})\n")
    return EXIT_OK if report.passed else EXIT_VERIFY


RUNNERS = {"kernel": run_kernel, "symbol": run_symbol, "evolve": run_evolve,
           "simulate": run_simulate, "predict": run_predict, "verify": run_verify}


def run(cfg: ExperimentConfig) -> int:
    spec = cfg.validate()
    code = RUNNERS[cfg.command](cfg, spec)
    return EXIT_OK if code is None else code


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
        return run(cfg)
    except AdmissibilityError as exc:
        sys.stderr.write(f"tilediff: inadmissible lambda: {exc}\n")
        return EXIT_ADMISSIBILITY
    except (UsageError, DomainError, NumericalError, OverflowError, OSError, TileDiffError) as exc:
        sys.stderr.write(f"tilediff: {exc}\n")
        return EXIT_USAGE
