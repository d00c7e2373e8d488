import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import gaussian_triangle_integral, line_density
from tilediff.dynamics import EnsembleConfig, simulate_ensemble
from tilediff.errors import DomainError, UsageError
from tilediff.geometry import CellRef, Point2, TilingSpec, tri_cell_of
from tilediff.spectral import GaussianPrediction, diffusion_matrix, gaussian_prediction, limiting_mean
from tilediff.stats import (
    SCHEMA_VERSION, DiffusionReport, Tolerances, cell_gaussian_masses, compare_report,
    fit_variance_growth, gaussianity_test,
)
from tilediff.transfer import DensityField, density_moments, evolve, evolve_series, kernel_for

LINE3 = TilingSpec("line", 3)
TRI4 = TilingSpec("triangle", 4)
HEX3 = TilingSpec("hexagon", 3)


def exact_series(spec, cell, n, mode="lattice"):
    return evolve_series(DensityField.delta(spec, cell), kernel_for(spec), n, mode=mode)


# ------------------------------------------------------------------- fit

def test_fit_line_exact():
    _, s = exact_series(LINE3, CellRef.line(0), 60)
    fit = fit_variance_growth(s)
    assert fit.sigma[0, 0] == pytest.approx(2 / 3, abs=1e-9)
    assert fit.window == (30, 60) and not fit.degenerate


def test_fit_triangle_msd_exact():
    _, s = exact_series(TRI4, CellRef.triangle(0, 0), 60)
    fit = fit_variance_growth(s)
    assert fit.msd_slope == pytest.approx(5, abs=1e-6)
    assert np.allclose(fit.sigma, 2.5 * np.eye(2), atol=1e-6)


def test_fit_constant_series():
    _, s = exact_series(TilingSpec("triangle", 1), CellRef.triangle(0, 0), 30)
    fit = fit_variance_growth(s)
    assert fit.degenerate and not np.any(fit.sigma) and fit.msd_slope == 0


def test_fit_needs_length():
    _, s = exact_series(LINE3, CellRef.line(0), 10)
    with pytest.raises(DomainError):
        fit_variance_growth(s)


def test_fit_absorbs_cell_offset():
    _, s = exact_series(TRI4, CellRef.triangle(0, 0), 40, mode="continuum")
    fit = fit_variance_growth(s)
    assert np.allclose(fit.sigma, 2.5 * np.eye(2), atol=1e-9)
    assert np.allclose(fit.intercept, np.eye(2) / 6, atol=1e-9)


def test_simulation_and_evolution_agree_on_slope():
    exact = fit_variance_growth(exact_series(HEX3, CellRef.hexagon(0, 0, 2), 200)[1]).sigma
    fits = np.array([fit_variance_growth(simulate_ensemble(EnsembleConfig(HEX3, 200, 4000, seed=s))).sigma
                     for s in range(8)])
    se = fits.std(axis=0, ddof=1) / math.sqrt(len(fits))
    assert np.all(np.abs(fits.mean(axis=0) - exact) <= 3 * se + 1e-12)


def test_exact_fit_error_shrinks():
    pred = diffusion_matrix(kernel_for(HEX3)).sigma_step
    errs = []
    for n in (20, 40, 80, 160):
        fit = fit_variance_growth(exact_series(HEX3, CellRef.hexagon(0, 0, 2), n)[1])
        errs.append(np.abs(fit.sigma - pred).max())
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_scale_covariance():
    s = simulate_ensemble(EnsembleConfig(TRI4, 40, 3000, seed=3), keep_final=True)
    a, b = fit_variance_growth(s), fit_variance_growth(s.scaled(2.0))
    assert np.array_equal(b.sigma, 4 * a.sigma) and b.msd_slope == 4 * a.msd_slope
    g = gaussian_prediction(TRI4, 40, mean=s.mean[-1])
    g2 = GaussianPrediction(40, 2 * g.mean, 4 * g.covariance, 4 * g.sigma_step)
    r1 = gaussianity_test(s.final_positions, g)
    r2 = gaussianity_test(s.scaled(2.0).final_positions, g2)
    assert r1.chi2 == pytest.approx(r2.chi2, rel=1e-9) and r1.dof == r2.dof


# ------------------------------------------------------------ gaussianity

@pytest.mark.parametrize("dim", [1, 2])
def test_chi2_calibration(dim):
    rng = np.random.default_rng(100 + dim)
    cov = np.array([[3.0]]) if dim == 1 else np.array([[4.0, 1.0], [1.0, 2.0]])
    g = GaussianPrediction(1, np.full(dim, 0.5), cov, cov)
    x = rng.multivariate_normal(g.mean, cov, size=100_000)
    r = gaussianity_test(x, g)
    assert abs(r.chi2 - r.dof) <= 4 * math.sqrt(2 * r.dof)
    assert np.all(np.abs(r.kurtosis) < 0.05)


def test_chi2_rejects_wrong_width():
    x = np.random.default_rng(7).normal(size=(100_000, 1)) * 1.05
    g = GaussianPrediction(1, np.zeros(1), np.eye(1), np.eye(1))
    assert not gaussianity_test(x, g).passed


def test_too_few_bins():
    g = GaussianPrediction(1, np.zeros(2), np.eye(2), np.eye(2))
    x = np.random.default_rng(8).normal(size=(1000, 2))
    with pytest.raises(DomainError):
        gaussianity_test(x, g, bins_per_axis=2)
    d = evolve(DensityField.delta(LINE3, CellRef.line(0)), kernel_for(LINE3), 1)
    with pytest.raises(DomainError):
        gaussianity_test(d, gaussian_prediction(LINE3, 1))


def test_point_mass_prediction_rejected():
    with pytest.raises(DomainError):
        gaussianity_test(np.zeros((10, 1)), gaussian_prediction(LINE3, 0))


def test_cell_integrals_against_quadrature():
    d = evolve(DensityField.delta(TRI4, CellRef.triangle(0, 0)), kernel_for(TRI4), 200)
    g = gaussian_prediction(TRI4, 200, mean=d.reference)
    pos, mass, pred = cell_gaussian_masses(d, g)
    cells = list(d.masses)
    for c in cells[:: max(1, len(cells) // 15)]:
        ref = gaussian_triangle_integral(c.r, c.k, g.mean, g.covariance)
        i = int(np.argmin(np.abs(pos - np.array(
            [c.k, (3 * c.r + (1 if c.is_up else 2)) / math.sqrt(3)])).sum(axis=1)))
        assert pred[i] == pytest.approx(ref, rel=1e-3 if ref >= 1e-5 else 1e-2)


def test_field_matching_gaussian_passes():
    d = evolve(DensityField.delta(TRI4, CellRef.triangle(0, 0)), kernel_for(TRI4), 60)
    g = gaussian_prediction(TRI4, 60, mean=d.reference)
    pos, _, q = cell_gaussian_masses(d, g)
    # a field whose cell masses are the Gaussian's own integrals
    cells = [tri_cell_of(Point2(x, y * math.sqrt(3))) for x, y in pos]
    fake = DensityField.from_masses(TRI4, dict(zip(cells, q / q.sum())))
    r = gaussianity_test(fake, g)
    assert r.chi2 < 1e-6 and r.passed


def test_line_kurtosis_decay():
    d = evolve(DensityField.delta(LINE3, CellRef.line(0)), kernel_for(LINE3), 400)
    k = density_moments(d).excess_kurtosis[0]
    ref = line_density(3, 400)
    x = np.arange(len(ref)) - (len(ref) - 1) / 2
    var = (ref * x ** 2).sum()
    assert k == pytest.approx((ref * x ** 4).sum() / var ** 2 - 3, abs=1e-9)
    assert abs(k) <= 0.02


def test_mc_kurtosis_triangle():
    s = simulate_ensemble(EnsembleConfig(TRI4, 300, 50_000, seed=11))
    assert np.all(np.abs(s.excess_kurtosis[-1]) <= 0.05)


def test_off_center_prediction_fails():
    d = evolve(DensityField.delta(TRI4, CellRef.triangle(0, 0)), kernel_for(TRI4), 200, tail_tol=0)
    centered = gaussianity_test(d, gaussian_prediction(TRI4, 200, mean=limiting_mean(kernel_for(TRI4),
                                                                                       CellRef.triangle(0, 0))))
    assert centered.passed and centered.max_relative_error <= 0.05
    shifted = gaussianity_test(d, gaussian_prediction(TRI4, 200, mean=[0.0, 3.0]))
    assert shifted.max_relative_error > 0.05


# --------------------------------------------------------------- reports

def test_compare_pass_fail():
    assert compare_report(5.02, 5.0).verdict == "pass"
    r = compare_report(5.6, 5.0)
    assert r.verdict == "fail" and r.relative_error == pytest.approx(0.12)


def test_compare_degenerate():
    r = compare_report(np.eye(2), np.zeros((2, 2)))
    assert r.degenerate and r.verdict == "fail" and math.isinf(r.relative_error)
    z = compare_report(0.0, 0.0)
    assert z.degenerate and z.verdict == "pass"


def test_compare_thresholds():
    tol = Tolerances(tol_sigma=0.2, tol_kurt=0.1)
    assert compare_report(5.6, 5.0, tol).verdict == "pass"
    assert compare_report(5.0, 5.0, kurtosis=[0.06]).verdict == "fail"
    assert compare_report(5.0, 5.0, tol, kurtosis=[0.06]).verdict == "pass"
    with pytest.raises(UsageError):
        compare_report(np.eye(2), 5.0)
    with pytest.raises(DomainError):
        Tolerances(tol_sigma=0)
    with pytest.raises(DomainError):
        Tolerances(tol_kurt=-1)


def test_compare_uses_chi2():
    g = GaussianPrediction(1, np.zeros(1), np.eye(1), np.eye(1))
    bad = gaussianity_test(np.random.default_rng(7).normal(size=(100_000, 1)) * 1.05, g)
    r = compare_report(1.0, 1.0, gaussianity=bad)
    assert r.verdict == "fail" and r.dof == bad.dof


@given(st.floats(0, 10), st.floats(0.1, 10), st.floats(-0.2, 0.2))
@settings(max_examples=50)
def test_report_round_trip(fitted, predicted, kurt):
    r = compare_report(fitted, predicted, kurtosis=[kurt], meta={"seed": 7})
    back = DiffusionReport.from_dict(json.loads(r.to_json()))
    assert back.recompute_verdict() == r.verdict == back.verdict
    assert back.relative_error == pytest.approx(r.relative_error)
    assert json.loads(r.to_json())["schema_version"] == SCHEMA_VERSION


def test_report_inf_serialized_as_null():
    r = compare_report(1.0, 0.0)
    obj = json.loads(r.to_json())
    assert obj["relative_error"] is None
    back = DiffusionReport.from_dict(obj)
    assert math.isinf(back.relative_error) and back.recompute_verdict() == "fail"


def test_report_schema_check():
    obj = compare_report(1.0, 1.0).to_dict()
    obj["schema_version"] = 99
    with pytest.raises(DomainError):
        DiffusionReport.from_dict(obj)
