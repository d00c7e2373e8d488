"""Fourier symbols of transfer kernels and the diffusion matrices they encode.

The symbol of a kernel is the matrix-valued trigonometric polynomial

    E~[dst, src](lam) = sum_entries weight * exp(i lam . dx)

with ``dx`` the physical displacement of the entry.  Its columns at ``lam = 0``
sum to one.  Near the origin the leading eigenvalue behaves like
``1 - lam^T Sigma lam / 2``, and an n-step density approaches the Gaussian with
covariance ``n Sigma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError, NumericalError, UsageError, VerificationError
from .geometry import (H_UNIT, Tiling, TilingSpec, cell_from_sublattice, center_of, centroid_of,
                       require_admissible, sublattice_index)
from .transfer import DensityField, Kernel, kernel_for

FD_STEPS = tuple(2.0 ** -p for p in range(6, 11))
FIT_RESIDUAL_MAX = 1e-6


def _as_lambda(kernel: Kernel, lam) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.shape != (kernel.dim,):
        raise UsageError(f"lambda of shape {lam.shape} for a {kernel.dim}-d kernel")
    if not np.all(np.isfinite(lam)):
        raise DomainError("non-finite lambda")
    return lam


def _scatter(kernel: Kernel, values: np.ndarray) -> np.ndarray:
    t = kernel.types
    out = np.zeros((t, t), dtype=values.dtype)
    dst = np.array([e.dst for e in kernel.entries])
    src = np.array([e.src for e in kernel.entries])
    np.add.at(out, (dst, src), values)
    return out


def symbol_at(kernel: Kernel, lam) -> np.ndarray:
    """Complex (T, T) matrix E~(lam), indexed ``[dst, src]``."""
    lam = _as_lambda(kernel, lam)
    phase = kernel.physical_offsets() @ lam
    return _scatter(kernel, kernel.weights() * np.exp(1j * phase))


def _symbol_increment(kernel: Kernel, lam: np.ndarray) -> np.ndarray:
    """E~(lam) - E~(0) evaluated without cancellation."""
    phase = kernel.physical_offsets() @ lam
    inc = -2.0 * np.sin(phase / 2) ** 2 + 1j * np.sin(phase)
    return _scatter(kernel, kernel.weights() * inc)


def ordered_eigenvalues(m: np.ndarray) -> np.ndarray:
    """Eigenvalues sorted by decreasing real part, ties by modulus."""
    ev = np.linalg.eigvals(m)
    order = np.lexsort((-np.abs(ev), -np.round(ev.real, 12)))
    return ev[order]


def leading_eigenvalue(kernel: Kernel, lam) -> complex:
    return complex(ordered_eigenvalues(symbol_at(kernel, lam))[0])


def symbol_scan(kernel: Kernel, grid) -> list[tuple]:
    """Rows ``(lambda1, lambda2, re_lmax, im_lmax, gap)`` over ``grid``; ``gap``
    is the modulus of the second eigenvalue (0 for one cell type)."""
    rows = []
    for lam in grid:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        ev = ordered_eigenvalues(symbol_at(kernel, lam))
        gap = float(np.abs(ev[1])) if len(ev) > 1 else 0.0
        l2 = float(lam[1]) if len(lam) > 1 else 0.0
        rows.append((float(lam[0]), l2, float(ev[0].real), float(ev[0].imag), gap))
    return rows


def limiting_mean(kernel: Kernel, cell, mode: str = "continuum", tol: float = 1e-15,
                  max_iter: int = 10000) -> np.ndarray:
    """Long-time mean position of a density started uniform on ``cell``.

    The mean moves only while the cell-type distribution relaxes to its
    stationary law, so it settles at the start point plus the summed transient
    drift.  ``continuum`` adds the stationary average offset from the map
    center to the cell barycenter; ``lattice`` tracks map centers only.
    """
    if mode not in ("lattice", "continuum"):
        raise DomainError(f"unknown moment mode {mode!r}")
    if cell.tiling is not kernel.spec.tiling:
        raise UsageError("cell and kernel belong to different tilings")
    d = kernel.dim
    m = np.array([[float(x) for x in row] for row in kernel.mixing_matrix()])
    drift = np.array([[float(a), float(b) * H_UNIT][:d] for a, b in kernel.first_moments()])
    t0, _ = sublattice_index(cell)
    p = np.zeros(kernel.types)
    p[t0] = 1.0
    pi = perron_vector(kernel)
    c = center_of(cell)
    mean = np.array([c]) if d == 1 else np.array([c.x1, c.v * H_UNIT])
    for _ in range(max_iter):
        if np.max(np.abs(p - pi)) <= tol:
            break
        mean = mean + p @ drift
        p = m @ p
    else:
        raise NumericalError("cell-type distribution did not settle", {"residual": float(np.max(np.abs(p - pi)))})
    if mode == "continuum" and d == 2:
        # barycenter minus map center for each type, taken from a sample cell per type
        off = np.zeros((kernel.types, 2))
        for t in range(kernel.types):
            ct = cell_from_sublattice(cell.tiling, t, (0, 0))
            a, b = center_of(ct), centroid_of(ct)
            off[t] = (b.x1 - a.x1, (b.v - a.v) * H_UNIT)
        mean = mean + pi @ off
    return mean


# ------------------------------------------------------------- Taylor

@dataclass(frozen=True)
class SymbolTaylor:
    """Exact order-2 expansion of every symbol entry, from kernel moments.

    Moments are in lattice units ``(x1, v)``; ``E~ ~ mass + i g.lam - lam^T M lam / 2``
    with ``g`` and ``M`` the physical first and second moments.
    """

    dim: int
    mass: list
    first: list
    second: list

    def constant(self, dst: int, src: int) -> Fraction:
        return self.mass[dst][src]

    def gradient(self, dst: int, src: int) -> np.ndarray:
        """Coefficient of i*lam (physical first moment)."""
        g = np.array([float(x) for x in self.first[dst][src]])
        if self.dim == 2:
            g[1] *= H_UNIT
        return g

    def hessian(self, dst: int, src: int) -> np.ndarray:
        """Physical Hessian of the entry at lam = 0 (minus the second moment)."""
        m = np.array([[float(x) for x in row] for row in self.second[dst][src]])
        if self.dim == 2:
            m[0, 1] *= H_UNIT
            m[1, 0] *= H_UNIT
            m[1, 1] /= 3
        return -m

    def hessian_exact(self, dst: int, src: int) -> list[list[Fraction]]:
        """Hessian as exact rationals; the lattice cross moment must vanish."""
        m = self.second[dst][src]
        if self.dim == 1:
            return [[-m[0][0]]]
        if m[0][1] != 0:
            raise ValueError("nonzero x1-x2 moment carries a factor 1/sqrt(3)")
        return [[-m[0][0], Fraction(0)], [Fraction(0), -m[1][1] / 3]]

    def quadratic_coefficient(self, dst: int, src: int) -> Fraction:
        """``a`` in ``E~ = c - a |lam|^2 + ...`` for an isotropic entry."""
        h = self.hessian_exact(dst, src)
        if self.dim == 2 and h[0][0] != h[1][1]:
            raise ValueError(f"entry ({dst}, {src}) is anisotropic")
        return -h[0][0] / 2


def symbol_taylor(kernel: Kernel) -> SymbolTaylor:
    t = kernel.types
    zero = Fraction(0)
    mass = [[zero] * t for _ in range(t)]
    dim = kernel.dim
    first = [[(zero,) * dim for _ in range(t)] for _ in range(t)]
    second = [[[[zero] * dim for _ in range(dim)] for _ in range(t)] for _ in range(t)]
    for e in kernel.entries:
        w = e.weight
        d = (e.dx1,) if dim == 1 else (e.dx1, e.dv)
        mass[e.dst][e.src] += w
        first[e.dst][e.src] = tuple(f + w * x for f, x in zip(first[e.dst][e.src], d))
        s = second[e.dst][e.src]
        for a in range(dim):
            for b in range(dim):
                s[a][b] += w * d[a] * d[b]
    return SymbolTaylor(dim, mass, first, second)


# ----------------------------------------------------------- diffusion

@dataclass(frozen=True)
class DiffusionEstimate:
    sigma_step: np.ndarray
    spectral_gap: float
    fit_residual: float
    #: Perron-weighted second moment, when every source type has zero drift
    closed_form: np.ndarray | None = None
    perron: np.ndarray | None = None
    method: dict = field(default_factory=dict)

    def isotropy_residual(self) -> float:
        s = self.sigma_step
        if s.shape[0] == 1:
            return 0.0
        scale = np.trace(s) / s.shape[0]
        return float(np.max(np.abs(s - scale * np.eye(s.shape[0]))))

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma_step.tolist(),
            "spectral_gap": self.spectral_gap,
            "fit_residual": self.fit_residual,
            "closed_form": None if self.closed_form is None else self.closed_form.tolist(),
            "perron": None if self.perron is None else self.perron.tolist(),
            "isotropy_residual": self.isotropy_residual(),
            "method": self.method,
        }


def perron_vector(kernel: Kernel) -> np.ndarray:
    """Stationary type distribution: right eigenvector of E~(0) for eigenvalue 1."""
    m = symbol_at(kernel, np.zeros(kernel.dim)).real
    t = kernel.types
    a = np.vstack([m - np.eye(t), np.ones((1, t))])
    rhs = np.zeros(t + 1)
    rhs[-1] = 1.0
    r, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return r


def eigen_shift(kernel: Kernel, lam, perron=None, tol=1e-17, max_iter=200) -> complex:
    """``lambda_max(E~(lam)) - 1`` computed to full relative accuracy.

    Solves the eigenproblem for the perturbation ``E~(lam) - E~(0)`` around the
    Perron pair (left vector all ones, right vector ``perron``) by fixed-point
    iteration, so the small shift is never formed as a difference of O(1) numbers.
    """
    lam = _as_lambda(kernel, lam)
    t = kernel.types
    r = perron_vector(kernel) if perron is None else perron
    delta = _symbol_increment(kernel, lam)
    if t == 1:
        return complex(delta[0, 0])
    a0 = symbol_at(kernel, np.zeros(kernel.dim)).real - np.eye(t)
    ones = np.ones(t)
    q = np.eye(t) - np.outer(r, ones)
    w = np.zeros(t, dtype=complex)
    mu = 0j
    for _ in range(max_iter):
        v = r + w
        mu_new = ones @ (delta @ v)
        w = -np.linalg.solve(a0 - mu_new * np.eye(t) + np.outer(r, ones), q @ (delta @ v))
        if abs(mu_new - mu) <= tol * max(abs(mu_new), 1e-300):
            mu = mu_new
            break
        mu = mu_new
    else:
        raise NumericalError("eigenvalue shift iteration did not converge", {"lambda": lam.tolist()})
    return complex(ones @ (delta @ (r + w)))


def _richardson(values, ratio=2.0):
    """Eliminate even powers of the step from a sequence at steps h, h/r, ...

    Returns (estimate, residual) with the residual the change made by the last
    elimination level.
    """
    table = [list(values)]
    p = 2
    while len(table[-1]) > 1:
        prev = table[-1]
        f = ratio ** p
        table.append([(f * prev[i + 1] - prev[i]) / (f - 1) for i in range(len(prev) - 1)])
        p += 2
    best = table[-1][0]
    resid = abs(best - table[-2][-1]) if len(table) > 1 else 0.0
    return best, resid


def _curvature(kernel: Kernel, direction, perron) -> tuple[float, float]:
    direction = np.asarray(direction, dtype=float)
    vals = []
    for h in FD_STEPS:
        mu = eigen_shift(kernel, h * direction, perron) + eigen_shift(kernel, -h * direction, perron)
        vals.append(-mu.real / (h * h))
    return _richardson(vals)


def diffusion_matrix(kernel: Kernel) -> DiffusionEstimate:
    """Per-step covariance from the curvature of the leading eigenvalue."""
    d = kernel.dim
    ev = ordered_eigenvalues(symbol_at(kernel, np.zeros(d)))
    gap = float(abs(ev[1])) if len(ev) > 1 else 0.0
    method = {
        "name": "leading-eigenvalue curvature",
        "steps": list(FD_STEPS),
        "extrapolation": "Richardson, even powers",
        "tiling": kernel.spec.tiling.value,
        "lambda": kernel.spec.lam,
    }
    if all(e.dx1 == 0 and e.dv == 0 for e in kernel.entries):
        # constant symbol (identity map): no spreading, Perron pair may be degenerate
        zero = np.zeros((d, d))
        return DiffusionEstimate(zero, gap, 0.0, zero.copy(), None, dict(method, name="constant symbol"))
    perron = perron_vector(kernel)
    if d == 1:
        s11, res = _curvature(kernel, [1.0], perron)
        sigma = np.array([[s11]])
        resid = res
    else:
        s11, r1 = _curvature(kernel, [1.0, 0.0], perron)
        s22, r2 = _curvature(kernel, [0.0, 1.0], perron)
        sdd, r3 = _curvature(kernel, [1.0, 1.0], perron)
        s12 = (sdd - s11 - s22) / 2
        sigma = np.array([[s11, s12], [s12, s22]])
        resid = max(r1, r2, r3)
    scale = max(1.0, float(np.max(np.abs(sigma))))
    if resid > FIT_RESIDUAL_MAX * scale:
        raise NumericalError("Richardson extrapolation did not converge",
                             {"residual": resid, "sigma": sigma.tolist()})

    closed = None
    if all(m == (0, 0) or m == (0,) * d for m in (tuple(x[:d]) for x in kernel.first_moments())):
        taylor = symbol_taylor(kernel)
        closed = np.zeros((d, d))
        for src in range(kernel.types):
            for dst in range(kernel.types):
                closed -= perron[src] * taylor.hessian(dst, src)
    return DiffusionEstimate(sigma, gap, float(resid), closed, perron, method)


# ---------------------------------------------------------- predictions

@dataclass(frozen=True)
class GaussianPrediction:
    """Gaussian limit with covariance ``n * sigma_step`` (or a point mass)."""

    n: int
    mean: np.ndarray
    covariance: np.ndarray
    sigma_step: np.ndarray

    @property
    def degenerate(self) -> bool:
        return self.n == 0 or not np.any(self.covariance)

    @property
    def dim(self) -> int:
        return len(self.mean)

    @property
    def msd(self) -> float:
        return float(np.trace(self.covariance))

    def pdf(self, x) -> np.ndarray:
        """Density at physical points ``x`` of shape (..., d)."""
        if self.degenerate:
            raise DomainError("point-mass prediction has no density")
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        dx = x - self.mean
        inv = np.linalg.inv(self.covariance)
        q = np.einsum("...i,ij,...j->...", dx, inv, dx)
        norm = math.sqrt((2 * math.pi) ** self.dim * np.linalg.det(self.covariance))
        return np.exp(-0.5 * q) / norm

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "degenerate": self.degenerate,
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "sigma_step": self.sigma_step.tolist(),
            "msd": self.msd,
        }


def gaussian_prediction(spec: TilingSpec, n: int, mean=None, sigma_step=None) -> GaussianPrediction:
    """Closed-form Gaussian for ``n`` steps; centered at the origin unless ``mean``."""
    require_admissible(spec)
    if n < 0:
        raise DomainError("n must be nonnegative")
    if sigma_step is None:
        sigma_step = diffusion_matrix(kernel_for(spec)).sigma_step
    sigma_step = np.asarray(sigma_step, dtype=float)
    mean = np.zeros(spec.dim) if mean is None else np.asarray(mean, dtype=float)
    return GaussianPrediction(int(n), mean, n * sigma_step, sigma_step)


def uniform_cell_characteristic(lam: float) -> float:
    """Fourier transform of the indicator of ``[-1/2, 1/2)``: ``(2/lam) sin(lam/2)``."""
    if not math.isfinite(lam):
        raise DomainError("non-finite lambda")
    return float(np.sinc(lam / (2 * math.pi)))


def field_transform(d: DensityField, lam) -> np.ndarray:
    """Per-type transform ``sum mass * exp(i lam . center)`` of a density."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    types, _, pos, mass = d.atoms()
    out = np.zeros(d.spec.types, dtype=complex)
    np.add.at(out, types, mass * np.exp(1j * (pos @ lam)))
    return out


# ------------------------------------------------------ diagonalization

U_ROTATION = np.array([[1.0, 1.0], [-1.0, 1.0]]) / math.sqrt(2.0)


@dataclass(frozen=True)
class DiagonalizationReport:
    lam: tuple
    transformed: np.ndarray
    expected_diagonal: tuple
    max_offdiagonal: float
    max_diagonal_error: float
    unitarity_error: float
    eigenvalues_at_zero: tuple

    @property
    def passed(self) -> bool:
        return max(self.max_offdiagonal, self.max_diagonal_error) <= 1e-12 and self.unitarity_error <= 1e-15


def diagonalization_check(kernel: Kernel, lam=(0.1, 0.0), raise_on_failure: bool = True) -> DiagonalizationReport:
    """Conjugate the order-2 Taylor part of the triangle symbol by the fixed
    rotation U and compare with diag(1 - 5/4 |lam|^2, 1/4 - 5/8 |lam|^2)."""
    if kernel.spec.tiling is not Tiling.TRIANGLE or kernel.spec.lam != 4:
        raise UsageError("diagonalization check applies to the triangle kernel with lambda = 4")
    lam = np.asarray(lam, dtype=float)
    taylor = symbol_taylor(kernel)
    t2 = np.zeros((2, 2), dtype=complex)
    for dst in range(2):
        for src in range(2):
            t2[dst, src] = (float(taylor.constant(dst, src)) + 1j * taylor.gradient(dst, src) @ lam
                            + 0.5 * lam @ taylor.hessian(dst, src) @ lam)
    a = U_ROTATION @ t2 @ U_ROTATION.conj().T
    l2 = float(lam @ lam)
    expected = (1 - 1.25 * l2, 0.25 - 0.625 * l2)
    off = float(max(abs(a[0, 1]), abs(a[1, 0])))
    diag_err = float(max(abs(a[0, 0] - expected[0]), abs(a[1, 1] - expected[1])))
    unit = float(np.max(np.abs(U_ROTATION @ U_ROTATION.conj().T - np.eye(2))))
    m0 = kernel.mixing_matrix()
    ev0 = tuple(sorted(_exact_eigenvalues_2x2(m0), reverse=True))
    report = DiagonalizationReport(tuple(lam.tolist()), a, expected, off, diag_err, unit, ev0)
    if raise_on_failure and not report.passed:
        raise VerificationError(
            f"U does not diagonalize the symbol: off-diagonal {off:.3e}, diagonal error {diag_err:.3e}")
    return report


def _exact_eigenvalues_2x2(m) -> tuple:
    """Eigenvalues of a rational 2x2 matrix when they are rational."""
    (a, b), (c, d) = m
    tr, det = a + d, a * d - b * c
    disc = tr * tr - 4 * det
    num, den = disc.numerator, disc.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn != num or rd * rd != den:
        s = math.sqrt(float(disc))
        return ((float(tr) + s) / 2, (float(tr) - s) / 2)
    root = Fraction(rn, rd)
    return ((tr + root) / 2, (tr - root) / 2)
