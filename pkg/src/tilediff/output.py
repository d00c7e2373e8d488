"""CSV writers for moment series, samples and plot-ready data."""

from __future__ import annotations

import csv
import io

import numpy as np

from .moments import MomentSeries
from .spectral import GaussianPrediction, gaussian_prediction
from .stats import cell_gaussian_masses
from .transfer import DensityField

SERIES_PLOT_HEADER = ("step", "var_x1", "var_x2", "msd", "predicted_msd")
FIELD_PLOT_HEADER = ("x1", "x2", "mass", "predicted_mass")


def fmt(x) -> str:
    """Shortest round-trip text for a number; blank for None/NaN."""
    if x is None:
        return ""
    x = float(x)
    return "" if x != x else repr(x)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def series_header(dim: int) -> tuple:
    axes = ["x1"] if dim == 1 else ["x1", "x2"]
    cols = ["step"] + [f"mean_{a}" for a in axes] + [f"var_{a}" for a in axes]
    if dim == 2:
        cols.append("cov_x1x2")
    cols += ["msd"] + [f"skew_{a}" for a in axes] + [f"kurt_{a}" for a in axes] + ["count"]
    return tuple(cols)


def series_to_csv(s: MomentSeries) -> str:
    d = s.dim
    rows = []
    for t in range(len(s)):
        row = [str(int(s.steps[t]))] + [fmt(v) for v in s.mean[t]] + [fmt(v) for v in s.variance[t]]
        if d == 2:
            row.append(fmt(s.covariance[t, 0, 1]))
        row += [fmt(s.msd[t])] + [fmt(v) for v in s.skewness[t]] + [fmt(v) for v in s.excess_kurtosis[t]]
        row.append("inf" if np.isinf(s.count[t]) else str(int(s.count[t])))
        rows.append(row)
    return _csv(series_header(d), rows)


def series_to_dict(s: MomentSeries) -> dict:
    return {
        "steps": s.steps.tolist(),
        "mean": s.mean.tolist(),
        "covariance": s.covariance.tolist(),
        "msd": s.msd.tolist(),
        "skewness": s.skewness.tolist(),
        "excess_kurtosis": s.excess_kurtosis.tolist(),
        "reference": np.asarray(s.reference).tolist(),
        "count": [None if np.isinf(c) else int(c) for c in s.count],
        "meta": s.meta,
    }


def samples_to_csv(positions: np.ndarray, cells: np.ndarray) -> str:
    """Final positions with their cells: ``x1[,x2],type,i[,j]``."""
    d = positions.shape[1]
    header = (["x1"] if d == 1 else ["x1", "x2"]) + ["type", "i"] + ([] if d == 1 else ["j"])
    rows = [[fmt(v) for v in p] + [str(int(c)) for c in cell] for p, cell in zip(positions, cells)]
    return _csv(header, rows)


def plot_data(artifact, prediction=None) -> str:
    """Plot-ready CSV text.

    A :class:`MomentSeries` gives ``step,var_x1,var_x2,msd,predicted_msd``
    (``var_x2`` blank in 1D; ``predicted_msd`` blank without a prediction).
    ``prediction`` may be a per-step covariance matrix or a
    :class:`GaussianPrediction`.  A :class:`DensityField` gives one row per
    cell, ``x1,x2,mass,predicted_mass`` at the cell barycenter, with the
    Gaussian integrated over the cell; by default the prediction is the
    closed-form Gaussian after ``d.steps`` steps centered at ``d.reference``.
    """
    if isinstance(artifact, DensityField):
        d = artifact
        if prediction is None:
            prediction = gaussian_prediction(d.spec, d.steps, mean=d.reference)
        pos, mass, pred = cell_gaussian_masses(d, prediction)
        rows = []
        for p, m, q in zip(pos, mass, pred):
            x2 = fmt(p[1]) if len(p) > 1 else ""
            rows.append([fmt(p[0]), x2, fmt(m), fmt(q)])
        return _csv(FIELD_PLOT_HEADER, rows)
    if isinstance(artifact, MomentSeries):
        s = artifact
        if isinstance(prediction, GaussianPrediction):
            prediction = prediction.sigma_step
        tr = None if prediction is None else float(np.trace(np.atleast_2d(prediction)))
        rows = []
        for t in range(len(s)):
            var = s.variance[t]
            rows.append([
                str(int(s.steps[t])), fmt(var[0]), fmt(var[1]) if len(var) > 1 else "",
                fmt(s.msd[t]), "" if tr is None else fmt(tr * s.steps[t])])
        return _csv(SERIES_PLOT_HEADER, rows)
    raise TypeError(f"cannot emit plot data for {type(artifact).__name__}")


def emit_plot_data(artifact, path, prediction=None) -> None:
    """Write :func:`plot_data` to ``path`` (raises ``OSError`` if unwritable)."""
    text = plot_data(artifact, prediction)
    with open(path, "w", newline="") as fh:
        fh.write(text)
