"""Diffusion statistics: variance-growth fits, Gaussianity tests, reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import DomainError, UsageError
from .geometry import H_UNIT, Tiling, sublattice_centers, sublattice_triangles
from .moments import MomentSeries
from .spectral import DiffusionEstimate, GaussianPrediction
from .transfer import DensityField, density_moments

SCHEMA_VERSION = 1
MIN_BINS = 10
MIN_EXPECTED = 5.0
#: Pseudo sample size used to turn exact cell probabilities into a chi2 statistic.
FIELD_EFFECTIVE_COUNT = 1e5


# ------------------------------------------------------------------ fit

@dataclass(frozen=True)
class VarianceFit:
    sigma: np.ndarray          # (d, d) slope of covariance vs step
    intercept: np.ndarray      # (d, d)
    msd_slope: float
    msd_intercept: float
    window: tuple              # (first_step, last_step) used in the fit
    degenerate: bool
    count: float = math.inf    # ensemble size of the series

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]


def _line_fit(t: np.ndarray, y: np.ndarray):
    """Least-squares slope and intercept of each column of ``y`` against ``t``."""
    a = np.stack([t, np.ones_like(t)], axis=1)
    coef, *_ = np.linalg.lstsq(a, y.reshape(len(t), -1), rcond=None)
    return coef[0].reshape(y.shape[1:]), coef[1].reshape(y.shape[1:])


def fit_variance_growth(series: MomentSeries) -> VarianceFit:
    """Fit ``cov(n) = n Σ + C`` over the last half of the series."""
    if len(series) < 20:
        raise DomainError(f"series of length {len(series)} is too short to fit (need >= 20)")
    start = len(series) // 2
    t = series.steps[start:].astype(float)
    d = series.dim
    if not np.any(series.covariance) and not np.any(series.msd):
        z = np.zeros((d, d))
        return VarianceFit(z, z.copy(), 0.0, 0.0, (int(t[0]), int(t[-1])), True, float(series.count[-1]))
    slope, icpt = _line_fit(t, series.covariance[start:])
    ms, mi = _line_fit(t, series.msd[start:, None])
    slope = 0.5 * (slope + slope.T)
    return VarianceFit(slope, 0.5 * (icpt + icpt.T), float(ms[0]), float(mi[0]),
                       (int(t[0]), int(t[-1])), False, float(series.count[-1]))


# ------------------------------------------------------------ Gaussianity

@dataclass(frozen=True)
class GaussianityResult:
    chi2: float
    dof: int
    p_value: float
    alpha: float
    bins: int
    kurtosis: np.ndarray
    max_relative_error: float   # over bins with predicted mass >= min_mass (fields only)
    count: float

    @property
    def critical(self) -> float:
        return float(sps.chi2.isf(self.alpha, self.dof))

    @property
    def passed(self) -> bool:
        return self.p_value >= self.alpha


# barycentric centroids of the 9 congruent subtriangles of a triangle
_SUB_BARY = np.array(
    [(3 * i + 1, 3 * j + 1, 3 * (2 - i - j) + 1) for i in range(3) for j in range(3 - i)]
    + [(3 * i + 2, 3 * j + 2, 3 * (1 - i - j) + 2) for i in range(2) for j in range(2 - i)],
    dtype=float) / 9.0
TRIANGLE_AREA = math.sqrt(3.0)   # side 2 in physical units


def _triangle_vertices(r, k):
    """Physical vertices, shape (M, 3, 2), of unit triangles ``(r, k)``."""
    r = np.asarray(r, dtype=np.int64)
    k = np.asarray(k, dtype=np.int64)
    up = (r + k) % 2 == 0
    base = np.where(up, 3 * r, 3 * r + 3)
    apex = np.where(up, 3 * r + 3, 3 * r)
    xs = np.stack([k - 1, k + 1, k], axis=1).astype(float)
    vs = np.stack([base, base, apex], axis=1).astype(float) * H_UNIT
    return np.stack([xs, vs], axis=2)


def cell_gaussian_masses(d: DensityField, prediction: GaussianPrediction):
    """Per-cell ``(barycenters (M, dim), masses, predicted integrals)``.

    The predicted Gaussian is integrated over each cell with the midpoint rule
    on a 3-fold refinement (3 subintervals, or 9 subtriangles).
    """
    if prediction.degenerate:
        raise DomainError("prediction is a point mass; no cell integrals")
    if prediction.dim != d.spec.dim:
        raise UsageError("prediction and field dimensions differ")
    tiling = d.spec.tiling
    pos, mass, pred = [], [], []
    for t, b in sorted(d.blocks.items()):
        grids = np.meshgrid(*[o + np.arange(n) for o, n in zip(b.origin, b.data.shape)], indexing="ij")
        idx = [g.ravel() for g in grids]
        m = b.data.ravel()
        if tiling is Tiling.LINE:
            k = sublattice_centers(tiling, t, idx)[0].astype(float)
            sub = k[:, None] + np.array([-1.0, 0.0, 1.0])[None, :] / 3.0
            q = prediction.pdf(sub[..., None]).sum(axis=1) / 3.0
            pos.append(k[:, None])
        else:
            verts = _triangle_vertices(*sublattice_triangles(tiling, t, idx[0], idx[1]))
            pts = np.einsum("sv,mvc->msc", _SUB_BARY, verts)
            q = prediction.pdf(pts).sum(axis=1) * (TRIANGLE_AREA / 9.0)
            pos.append(verts.mean(axis=1))
        mass.append(m)
        pred.append(q)
    return np.concatenate(pos), np.concatenate(mass), np.concatenate(pred)


def _mahalanobis2(x, prediction: GaussianPrediction):
    dx = x - prediction.mean
    return np.einsum("mi,ij,mj->m", dx, np.linalg.inv(prediction.covariance), dx)


def _chi2_result(chi2, bins, alpha, kurt, max_rel, count):
    if bins < MIN_BINS:
        raise DomainError(f"only {bins} usable bins (need >= {MIN_BINS})")
    dof = bins - 1
    return GaussianityResult(float(chi2), dof, float(sps.chi2.sf(chi2, dof)), alpha, bins,
                             np.asarray(kurt, dtype=float), float(max_rel), float(count))


def _field_test(d, prediction, alpha, coverage, effective_count, min_mass):
    pos, p, q = cell_gaussian_masses(d, prediction)
    inside = _mahalanobis2(pos, prediction) <= sps.chi2.ppf(coverage, prediction.dim)
    sig = q >= min_mass
    max_rel = float(np.max(np.abs(p[sig] - q[sig]) / q[sig])) if np.any(sig) else math.nan
    pi, qi = p[inside], q[inside]
    if qi.size < MIN_BINS:
        raise DomainError(f"only {qi.size} cells inside the {coverage:.0%} region")
    pi = pi / pi.sum()
    qi = qi / qi.sum()
    chi2 = effective_count * np.sum((pi - qi) ** 2 / qi)
    kurt = density_moments(d, "lattice").excess_kurtosis
    return _chi2_result(chi2, qi.size, alpha, kurt, max_rel, effective_count)


def _sample_test(x, prediction, alpha, bins_per_axis):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, dim = x.shape
    if dim != prediction.dim:
        raise UsageError("prediction and sample dimensions differ")
    if bins_per_axis is None:
        bins_per_axis = 40 if dim == 1 else 20
    sd = np.sqrt(np.diag(prediction.covariance))
    edges = [np.linspace(m - 3 * s, m + 3 * s, bins_per_axis + 1) for m, s in zip(prediction.mean, sd)]
    observed, _ = np.histogramdd(x, bins=edges)
    # midpoint rule with 3 points per axis and bin
    frac = (np.arange(3) + 0.5) / 3.0
    sub = [(e[:-1, None] + np.diff(e)[:, None] * frac[None, :]).ravel() for e in edges]
    grid = np.stack(np.meshgrid(*sub, indexing="ij"), axis=-1)
    dens = prediction.pdf(grid)
    for ax in range(dim):
        shape = dens.shape[:ax] + (bins_per_axis, 3) + dens.shape[ax + 1:]
        dens = dens.reshape(shape).mean(axis=ax + 1)
    cell_volume = np.prod([np.diff(e)[0] for e in edges])
    expected = (n * dens * cell_volume).ravel()
    observed = observed.ravel()
    keep = expected >= MIN_EXPECTED
    pooled_e = n - expected[keep].sum()
    pooled_o = n - observed[keep].sum()
    e = np.append(expected[keep], pooled_e)
    o = np.append(observed[keep], pooled_o)
    if pooled_e < MIN_EXPECTED:
        e, o = e[:-1], o[:-1]
    chi2 = np.sum((o - e) ** 2 / e)
    kurt = sps.kurtosis(x, axis=0, fisher=True, bias=True)
    return _chi2_result(chi2, e.size, alpha, kurt, math.nan, n)


def gaussianity_test(data, prediction: GaussianPrediction, alpha: float = 1e-3, coverage: float = 0.99,
                     effective_count: float = FIELD_EFFECTIVE_COUNT, min_mass: float = 1e-5,
                     bins_per_axis: int | None = None) -> GaussianityResult:
    """Chi-square comparison of a density field or a sample against a Gaussian.

    Fields are binned by cell, restricted to cells whose barycenter lies in the
    ``coverage`` ellipse, and scored as if ``effective_count`` samples had been
    drawn.  Samples ``(N, d)`` are binned on a rectangular grid spanning
    ``±3`` standard deviations per axis; bins expecting fewer than 5 counts are
    pooled with the outside mass.
    """
    if prediction.degenerate:
        raise DomainError("prediction covariance is degenerate")
    if isinstance(data, DensityField):
        return _field_test(data, prediction, alpha, coverage, effective_count, min_mass)
    return _sample_test(data, prediction, alpha, bins_per_axis)


# --------------------------------------------------------------- reports

@dataclass(frozen=True)
class Tolerances:
    tol_sigma: float = 0.02
    tol_kurt: float = 0.05
    chi2_alpha: float = 1e-3

    def __post_init__(self):
        for name in ("tol_sigma", "tol_kurt", "chi2_alpha"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be positive, got {v!r}")


@dataclass
class DiffusionReport:
    predicted_sigma: np.ndarray
    fitted_sigma: np.ndarray
    relative_error: float
    kurtosis_terminal: np.ndarray
    chi2_statistic: float | None
    dof: int | None
    chi2_p_value: float | None
    thresholds: Tolerances
    degenerate: bool
    verdict: str
    msd_slope: float | None = None
    predicted_msd_slope: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def recompute_verdict(self) -> str:
        return _verdict(self.relative_error, self.kurtosis_terminal, self.chi2_p_value, self.thresholds)

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None or not math.isfinite(x) else float(x)
        return {
            "schema_version": SCHEMA_VERSION,
            "predicted_sigma": np.asarray(self.predicted_sigma).tolist(),
            "fitted_sigma": np.asarray(self.fitted_sigma).tolist(),
            "relative_error": num(self.relative_error),
            "kurtosis_terminal": [num(k) for k in np.asarray(self.kurtosis_terminal, dtype=float)],
            "chi2_statistic": num(self.chi2_statistic),
            "dof": self.dof,
            "chi2_p_value": num(self.chi2_p_value),
            "msd_slope": num(self.msd_slope),
            "predicted_msd_slope": num(self.predicted_msd_slope),
            "degenerate": self.degenerate,
            "thresholds": {"tol_sigma": self.thresholds.tol_sigma, "tol_kurt": self.thresholds.tol_kurt,
                           "chi2_alpha": self.thresholds.chi2_alpha},
            "verdict": self.verdict,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, obj: dict) -> "DiffusionReport":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise DomainError(f"unsupported report schema {obj.get('schema_version')!r}")

        def num(x):
            return math.nan if x is None else float(x)
        rel = obj["relative_error"]
        return cls(
            predicted_sigma=np.array(obj["predicted_sigma"], dtype=float),
            fitted_sigma=np.array(obj["fitted_sigma"], dtype=float),
            relative_error=math.inf if rel is None else float(rel),
            kurtosis_terminal=np.array([num(k) for k in obj["kurtosis_terminal"]]),
            chi2_statistic=obj["chi2_statistic"], dof=obj["dof"], chi2_p_value=obj["chi2_p_value"],
            thresholds=Tolerances(**obj["thresholds"]), degenerate=obj["degenerate"],
            verdict=obj["verdict"], msd_slope=obj.get("msd_slope"),
            predicted_msd_slope=obj.get("predicted_msd_slope"), meta=obj.get("meta", {}))


def _verdict(rel, kurt, p_value, tol: Tolerances) -> str:
    # a zero prediction with a nonzero fit has rel = inf and fails here
    ok = rel <= tol.tol_sigma
    k = np.asarray(kurt, dtype=float)
    if k.size and not (np.all(np.isfinite(k)) and np.all(np.abs(k) <= tol.tol_kurt)):
        ok = False
    if p_value is not None and not p_value >= tol.chi2_alpha:
        ok = False
    return "pass" if ok else "fail"


def compare_report(empirical, predicted, tolerances: Tolerances | None = None, *,
                   kurtosis=None, gaussianity: GaussianityResult | None = None, meta=None) -> DiffusionReport:
    """Judge a fitted per-step covariance against a prediction.

    ``empirical`` is a :class:`VarianceFit` or a matrix/scalar; ``predicted``
    a :class:`DiffusionEstimate` or a matrix/scalar.  Passes iff the Frobenius
    relative error is within ``tol_sigma``, every kurtosis excess is within
    ``tol_kurt`` and (when given) the chi2 p-value is at least ``chi2_alpha``.
    A zero prediction against a nonzero fit always fails and is flagged
    degenerate.
    """
    tol = tolerances or Tolerances()
    fit = empirical if isinstance(empirical, VarianceFit) else None
    fitted = np.atleast_2d(np.asarray(fit.sigma if fit else empirical, dtype=float))
    pred = np.atleast_2d(np.asarray(
        predicted.sigma_step if isinstance(predicted, DiffusionEstimate) else predicted, dtype=float))
    if fitted.shape != pred.shape:
        raise UsageError(f"fitted {fitted.shape} and predicted {pred.shape} shapes differ")
    pn = np.linalg.norm(pred)
    diff = np.linalg.norm(fitted - pred)
    degenerate = bool(fit.degenerate) if fit else False
    if pn == 0:
        degenerate = True
        rel = 0.0 if diff == 0 else math.inf
    else:
        rel = float(diff / pn)
    if kurtosis is None and gaussianity is not None:
        kurtosis = gaussianity.kurtosis
    kurt = np.asarray([] if kurtosis is None else kurtosis, dtype=float).ravel()
    chi2 = gaussianity.chi2 if gaussianity else None
    dof = gaussianity.dof if gaussianity else None
    p = gaussianity.p_value if gaussianity else None
    verdict = _verdict(rel, kurt, p, tol)
    return DiffusionReport(
        predicted_sigma=pred, fitted_sigma=fitted, relative_error=rel, kurtosis_terminal=kurt,
        chi2_statistic=chi2, dof=dof, chi2_p_value=p, thresholds=tol, degenerate=degenerate,
        verdict=verdict, msd_slope=fit.msd_slope if fit else None,
        predicted_msd_slope=float(np.trace(pred)), meta=dict(meta or {}))
