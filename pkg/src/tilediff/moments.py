"""Moment summaries of point ensembles and of piecewise-constant densities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DensityMoments:
    mass: float
    mean: np.ndarray
    covariance: np.ndarray
    msd: float
    skewness: np.ndarray
    excess_kurtosis: np.ndarray


@dataclass
class MomentSeries:
    """Per-step moments in physical coordinates.

    ``count`` is the ensemble size, or ``inf`` for series computed from an
    exactly evolved density.  ``msd`` is ``E|x_t - x_0|^2`` for ensembles and
    ``E|x_t - reference|^2`` for densities.
    """

    steps: np.ndarray
    count: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    msd: np.ndarray
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    reference: np.ndarray
    final_positions: np.ndarray | None = None
    final_cells: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.steps)

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    @property
    def variance(self) -> np.ndarray:
        return np.diagonal(self.covariance, axis1=1, axis2=2)

    def mean_standard_error(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sqrt(self.variance / self.count[:, None])

    def scaled(self, s: float) -> "MomentSeries":
        """Series of the ensemble with every position multiplied by ``s``."""
        return MomentSeries(
            steps=self.steps.copy(), count=self.count.copy(), mean=self.mean * s,
            covariance=self.covariance * s * s, msd=self.msd * s * s,
            skewness=self.skewness * np.sign(s), excess_kurtosis=self.excess_kurtosis.copy(),
            reference=self.reference * s,
            final_positions=None if self.final_positions is None else self.final_positions * s,
            final_cells=self.final_cells, meta=dict(self.meta))

    @classmethod
    def stack(cls, moments: list[DensityMoments], reference, meta=None) -> "MomentSeries":
        n = len(moments)
        return cls(
            steps=np.arange(n),
            count=np.full(n, np.inf),
            mean=np.array([m.mean for m in moments]),
            covariance=np.array([m.covariance for m in moments]),
            msd=np.array([m.msd for m in moments]),
            skewness=np.array([m.skewness for m in moments]),
            excess_kurtosis=np.array([m.excess_kurtosis for m in moments]),
            reference=np.asarray(reference, dtype=float),
            meta=dict(meta or {}))


def central_from_raw(n, s1, s2, s3, s4):
    """Convert power sums of shifted coordinates into central moments.

    Shapes: ``s1, s3, s4``: (..., d); ``s2``: (..., d, d).  Returns
    ``(shift_mean, covariance, skewness, excess_kurtosis)``.
    """
    n = np.asarray(n, dtype=float)[..., None]
    mu = s1 / n
    cov = s2 / n[..., None] - mu[..., :, None] * mu[..., None, :]
    m2 = s2.diagonal(axis1=-2, axis2=-1) / n
    c2 = np.diagonal(cov, axis1=-2, axis2=-1)
    c3 = s3 / n - 3 * mu * m2 + 2 * mu ** 3
    c4 = s4 / n - 4 * mu * s3 / n + 6 * mu ** 2 * m2 - 3 * mu ** 4
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(c2 > 0, c3 / np.where(c2 > 0, c2, 1) ** 1.5, np.nan)
        kurt = np.where(c2 > 0, c4 / np.where(c2 > 0, c2, 1) ** 2 - 3.0, np.nan)
    return mu, cov, skew, kurt


def weighted_moments(positions, weights, reference, extra_second=None,
                     extra_third=None, extra_fourth=None) -> DensityMoments:
    """Moments of a mixture of atoms (optionally smeared by per-atom shapes).

    ``positions`` (M, d) are atom means, ``weights`` (M,) their masses.  The
    optional per-atom arrays give the smearing distribution's central moments:
    ``extra_second`` (M, d, d), ``extra_third`` / ``extra_fourth`` (M, d) per
    coordinate.
    """
    x = np.asarray(positions, dtype=float)
    w = np.asarray(weights, dtype=float)
    mass = float(w.sum())
    mean = w @ x / mass
    d = x - mean
    wd = w[:, None] * d
    cov = wd.T @ d / mass
    wd2 = wd * d
    c3 = (wd2 * d).sum(axis=0) / mass
    c4 = (wd2 * (d * d)).sum(axis=0) / mass
    if extra_second is not None:
        e2 = np.asarray(extra_second, dtype=float)
        cov = cov + np.einsum("m,mij->ij", w, e2) / mass
        e2d = np.diagonal(e2, axis1=1, axis2=2)
        c3 = c3 + (w[:, None] * 3 * d * e2d).sum(axis=0) / mass
        c4 = c4 + (w[:, None] * 6 * d ** 2 * e2d).sum(axis=0) / mass
    if extra_third is not None:
        e3 = np.asarray(extra_third, dtype=float)
        c3 = c3 + (w[:, None] * e3).sum(axis=0) / mass
        c4 = c4 + (w[:, None] * 4 * d * e3).sum(axis=0) / mass
    if extra_fourth is not None:
        c4 = c4 + (w[:, None] * np.asarray(extra_fourth, dtype=float)).sum(axis=0) / mass
    var = np.diagonal(cov).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(var > 0, c3 / np.where(var > 0, var, 1) ** 1.5, np.nan)
        kurt = np.where(var > 0, c4 / np.where(var > 0, var, 1) ** 2 - 3.0, np.nan)
    off = mean - np.asarray(reference, dtype=float)
    msd = float(np.trace(cov) + off @ off)
    return DensityMoments(mass, mean, cov, msd, skew, kurt)
