"""The expanding maps and seeded ensemble simulation.

Float iteration of ``x -> c + Λ (x - c)`` is useless beyond a few dozen steps:
every step multiplies the rounding error by Λ, and for Λ a power of two the
mantissa is simply shifted out until the orbit sits on a lattice point.  The
ensemble simulator therefore tracks each trajectory exactly.  The point is kept
as an integer cell index plus an integer local offset on a grid of spacing
``1/GRID``.  The point's unknown sub-grid part ``u`` is uniform, and after
stretching, ``floor(Λ u)`` is a uniform digit in ``0..Λ-1`` per coordinate.
That digit is drawn from the random stream, so the simulated orbit is the
exact orbit of a continuously distributed initial point.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import AdmissibilityError, DomainError, UsageError
from .geometry import (
    H_UNIT,
    SLOT_CENTROID_OFFSETS,
    CellRef,
    Point2,
    Tiling,
    TilingSpec,
    center_of,
    hex_slot_triangle,
    locate_triangles,
    require_admissible,
    tri_vertices,
    triangles_to_hex,
)
from .moments import MomentSeries, central_from_raw

GRID_BITS = 50
GRID = 1 << GRID_BITS
#: Largest Λ for which the int64 local arithmetic cannot overflow.
MAX_SIM_LAMBDA = 255
#: Trajectories sharing one random stream; chunks are the unit of work and are
#: reduced in index order, so results never depend on worker count.
CHUNK = 1024
#: Bound on digits drawn at once; long runs are stepped in batches of
#: ``DIGIT_BUFFER // (CHUNK * dim)`` steps.
DIGIT_BUFFER = 1 << 25
UINT64 = (1 << 64) - 1


# --------------------------------------------------------------- maps

def step_1d(x, lam: int):
    """One step of ``f(k + y) = k + Λ y`` on the line (scalar or array)."""
    if lam < 1 or lam % 2 == 0:
        raise AdmissibilityError(f"line map needs odd lambda, got {lam}")
    xa = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xa)):
        raise DomainError("non-finite coordinate")
    k = np.floor(xa + 0.5)
    out = k + lam * (xa - k)
    return float(out) if out.ndim == 0 else out


def map_centers(x1, v, tiling: Tiling):
    """Vectorized map center ``c(x)`` for plane points in lattice units."""
    r, k = locate_triangles(x1, v)
    if tiling is Tiling.TRIANGLE:
        return k.astype(float), np.where((r + k) % 2 == 0, 3 * r + 1, 3 * r + 2).astype(float)
    a, b, _ = triangles_to_hex(r, k)
    return (1 + 3 * a).astype(float), (3 * a + 6 * b).astype(float)


def step_2d_array(x1, v, spec: TilingSpec):
    require_admissible(spec)
    if spec.tiling is Tiling.LINE:
        raise UsageError("use step_1d for the line")
    x1 = np.asarray(x1, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(v))):
        raise DomainError("non-finite point")
    cx, cv = map_centers(x1, v, spec.tiling)
    return cx + spec.lam * (x1 - cx), cv + spec.lam * (v - cv)


def step_2d(p: Point2, spec: TilingSpec) -> Point2:
    """``x -> c(x) + Λ (x - c(x))`` with ``c`` the triangle or hexagon center."""
    x1, v = step_2d_array(np.array([p.x1]), np.array([p.v]), spec)
    return Point2(float(x1[0]), float(v[0]))


def sample_uniform_in_cell(cell: CellRef, count: int, rng: np.random.Generator):
    """Float samples uniform in one cell: an ``x`` array on the line, else
    ``(x1, v)`` arrays (reflection method on the rhombus spanned by two edges)."""
    if cell.tiling is Tiling.LINE:
        return cell.k - 0.5 + rng.random(count)
    r, k = (cell.r, cell.k) if cell.tiling is Tiling.TRIANGLE else hex_slot_triangle(cell.a, cell.b, cell.slot)
    (ax, av), (bx, bv), (cx, cv) = tri_vertices(r, k)
    s = rng.random(count)
    t = rng.random(count)
    flip = s + t > 1
    s = np.where(flip, 1 - s, s)
    t = np.where(flip, 1 - t, t)
    return ax + s * (bx - ax) + t * (cx - ax), av + s * (bv - av) + t * (cv - av)


# ------------------------------------------------------------ ensembles

def default_initial_cell(tiling: Tiling) -> CellRef:
    tiling = Tiling(tiling)
    if tiling is Tiling.LINE:
        return CellRef.line(0)
    if tiling is Tiling.TRIANGLE:
        return CellRef.triangle(0, 0)
    r, k = 0, 0
    a, b, s = triangles_to_hex([r], [k])
    return CellRef.hexagon(int(a[0]), int(b[0]), int(s[0]))


@dataclass(frozen=True)
class EnsembleConfig:
    spec: TilingSpec
    steps: int
    samples: int
    seed: int = 0
    initial_cell: CellRef | None = None

    def __post_init__(self):
        require_admissible(self.spec)
        if self.steps < 0:
            raise DomainError("steps must be nonnegative")
        if self.samples < 1:
            raise DomainError("need at least one sample")
        if not 0 <= self.seed <= UINT64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.spec.lam > MAX_SIM_LAMBDA:
            raise OverflowError(
                f"lambda={self.spec.lam} exceeds {MAX_SIM_LAMBDA}: local coordinates would overflow int64")
        if self.initial_cell is None:
            object.__setattr__(self, "initial_cell", default_initial_cell(self.spec.tiling))
        elif self.initial_cell.tiling is not self.spec.tiling:
            raise UsageError("initial cell belongs to another tiling")


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Independent stream of trajectory chunk ``chunk``: Philox keyed by (seed, chunk)."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, chunk], dtype=np.uint64)))


def up_triangle_grid_point(x, v):
    """Fold integer points of the box ``[-G, G) x [-G, 2G)`` onto the Up
    triangle with vertices ``(-G, -G), (G, -G), (0, 2G)`` (``G = GRID``).

    Each integer point stands for the grid square above and to its right.  The
    two box corners outside the triangle are rotated by 180 degrees about the
    midpoints of the slanted edges, which maps grid squares onto grid squares,
    so a uniform point of the box becomes a uniform grid square of the
    triangle.  (Sampling a sublattice instead would leave holes that the
    stretching eventually magnifies to cell size.)
    """
    # square centers (x + 1/2, v + 1/2) beyond the left / right edge
    left = v > 3 * x + 1 + 2 * GRID
    right = v > 2 * GRID - 3 * x - 2
    x = np.where(left, -GRID - 1 - x, np.where(right, GRID - 1 - x, x))
    v = np.where(left | right, GRID - 1 - v, v)
    return x, v


class _State:
    """Exact state of a block of trajectories (int64 arrays).

    Line: cell ``k`` and local ``y``.  Triangle: cell ``(r, k)`` and local
    ``(X, V)`` about its center.  Hexagon: ``(a, b)``, current slot and local
    ``(X, V)`` about the hexagon center.  Locals are in units of ``1/GRID``.
    """

    def __init__(self, cfg: EnsembleConfig, init: np.ndarray):
        self.spec = cfg.spec
        cell = cfg.initial_cell
        n = len(init)
        self.i = np.zeros(n, dtype=np.int64)
        self.j = np.zeros(n, dtype=np.int64)
        self.slot = np.zeros(n, dtype=np.int64)
        if self.spec.tiling is Tiling.LINE:
            self.i[:] = cell.k
            self.X = init[:, 0] // 2 - GRID // 2
            self.V = np.zeros(n, dtype=np.int64)
            return
        # local coordinates about the triangle center
        x, v = up_triangle_grid_point(init[:, 0] - GRID, init[:, 1] - GRID)
        up = cell.is_up if self.spec.tiling is Tiling.TRIANGLE else cell.slot % 2 == 0
        if not up:
            v = -1 - v
        if self.spec.tiling is Tiling.TRIANGLE:
            self.X, self.V = x, v
            self.i[:] = cell.r
            self.j[:] = cell.k
        else:
            ox, ov = SLOT_CENTROID_OFFSETS[cell.slot]
            self.X, self.V = x + ox * GRID, v + ov * GRID
            self.i[:] = cell.a
            self.j[:] = cell.b
            self.slot[:] = cell.slot

    @property
    def code(self) -> int:
        return {Tiling.LINE: 0, Tiling.TRIANGLE: 1, Tiling.HEXAGON: 2}[self.spec.tiling]

    def positions(self) -> np.ndarray:
        """Physical positions, shape (n, dim)."""
        d = self.spec.dim
        out = np.empty((len(self.X), d))
        for m in range(len(self.X)):
            _position(self.code, self.i[m], self.j[m], self.X[m], self.V[m], out[m])
        return out

    def cells(self) -> np.ndarray:
        """Rows ``(type, *sublattice index)`` as used by DensityField."""
        if self.spec.tiling is Tiling.LINE:
            return np.stack([np.zeros_like(self.i), self.i], axis=1)
        if self.spec.tiling is Tiling.TRIANGLE:
            r, k = self.i, self.j
            down = (r + k) % 2
            return np.stack([down, r, np.floor_divide(k - r - down, 2)], axis=1)
        return np.stack([self.slot, self.i, self.j], axis=1)


# ----------------------------------------------------- compiled kernels

@njit(cache=True)
def locate_scalar(x1, v, scale):
    """Scalar twin of ``geometry.locate_triangles`` for int64 input."""
    r = v // (3 * scale)
    t = v - 3 * scale * r
    k_up = r + 2 * ((x1 - r * scale + scale) // (2 * scale))
    dx = x1 - k_up * scale
    adx = abs(dx)
    if 3 * adx <= 3 * scale - t:
        if t == 0 and adx == scale:
            return r - 1, k_up - 1
        return r, k_up
    return r, (k_up + 1 if dx >= 0 else k_up - 1)


@njit(cache=True)
def _is_center(x, row):
    return (x - 1) % 3 == 0 and (row - (x - 1) // 3) % 2 == 0


@njit(cache=True)
def hex_of_triangle_scalar(r, k):
    """Scalar twin of ``geometry.triangles_to_hex``: returns ``(a, b, slot)``."""
    up = (r + k) % 2 == 0
    if up:
        if _is_center(k - 1, r):
            x, row, slot = k - 1, r, 0
        elif _is_center(k + 1, r):
            x, row, slot = k + 1, r, 2
        else:
            x, row, slot = k, r + 1, 4
    else:
        if _is_center(k, r):
            x, row, slot = k, r, 1
        elif _is_center(k + 1, r + 1):
            x, row, slot = k + 1, r + 1, 3
        else:
            x, row, slot = k - 1, r + 1, 5
    a = (x - 1) // 3
    return a, (row - a) // 2, slot


@njit(cache=True)
def _position(code, i, j, X, V, out):
    inv = 1.0 / GRID
    if code == 0:
        out[0] = i + X * inv
    elif code == 1:
        cv = 3 * i + 1 if (i + j) % 2 == 0 else 3 * i + 2
        out[0] = j + X * inv
        out[1] = (cv + V * inv) * H_UNIT
    else:
        out[0] = 1 + 3 * i + X * inv
        out[1] = (3 * i + 6 * j + V * inv) * H_UNIT


@njit(cache=True)
def _accumulate(row, x, x0, ref, d):
    c = 0
    for p in range(d):
        row[c] += x[p] - ref[p]
        c += 1
    for p in range(d):
        for q in range(d):
            row[c] += (x[p] - ref[p]) * (x[q] - ref[q])
            c += 1
    for p in range(d):
        row[c] += (x[p] - ref[p]) ** 3
        c += 1
    for p in range(d):
        row[c] += (x[p] - ref[p]) ** 4
        c += 1
    disp = 0.0
    for p in range(d):
        disp += (x[p] - x0[p]) ** 2
    row[c] += disp


@njit(cache=True, nogil=True)
def _advance(code, lam, I, J, S, X, V, X0, digits, t0, ref, sums):
    """Run every trajectory of a chunk through one batch of steps, in index
    order; ``t0`` is the number of steps already taken."""
    n, steps, _ = digits.shape
    d = 1 if code == 0 else 2
    x = np.empty(d)
    for m in range(n):
        i, j, s, lx, lv = I[m], J[m], S[m], X[m], V[m]
        x0 = X0[m]
        if t0 == 0:
            _accumulate(sums[0], x0, x0, ref, d)
        for t in range(steps):
            if code == 0:
                p = lam * lx + digits[m, t, 0]
                q = (p + GRID // 2) // GRID
                i += q
                lx = p - q * GRID
            elif code == 1:
                # locate in the frame of reference cell Up(0,0) or Down(0,1)
                up = (i + j) % 2 == 0
                cx = 0 if up else 1
                cv = 1 if up else 2
                gx = cx * GRID + lam * lx + digits[m, t, 0]
                gv = cv * GRID + lam * lv + digits[m, t, 1]
                rr, kk = locate_scalar(gx, gv, GRID)
                ncv = 3 * rr + 1 if (rr + kk) % 2 == 0 else 3 * rr + 2
                lx = gx - kk * GRID
                lv = gv - ncv * GRID
                i += rr
                j += kk - cx
            else:
                gx = GRID + lam * lx + digits[m, t, 0]
                gv = lam * lv + digits[m, t, 1]
                rr, kk = locate_scalar(gx, gv, GRID)
                a, b, s = hex_of_triangle_scalar(rr, kk)
                lx = gx - (1 + 3 * a) * GRID
                lv = gv - (3 * a + 6 * b) * GRID
                i += a
                j += b
            _position(code, i, j, lx, lv, x)
            _accumulate(sums[t0 + t + 1], x, x0, ref, d)
        I[m], J[m], S[m], X[m], V[m] = i, j, s, lx, lv


def _nsums(d: int) -> int:
    return d + d * d + d + d + 1


def _run_chunk(cfg: EnsembleConfig, chunk: int, reference: np.ndarray):
    """Draw order within a chunk: start points, then digit batches in step order."""
    start = chunk * CHUNK
    n = min(CHUNK, cfg.samples - start)
    dim = cfg.spec.dim
    g = chunk_rng(cfg.seed, chunk)
    init = g.integers(0, (2 * GRID, 3 * GRID), size=(n, 2))
    state = _State(cfg, init)
    x0 = state.positions()
    sums = np.zeros((cfg.steps + 1, _nsums(dim)))
    ref = reference.astype(float)
    batch = max(1, DIGIT_BUFFER // (CHUNK * dim))
    t0 = 0
    while True:
        sb = min(batch, cfg.steps - t0)
        digits = g.integers(0, cfg.spec.lam, size=(n, sb, dim), dtype=np.uint8)
        _advance(state.code, cfg.spec.lam, state.i, state.j, state.slot, state.X, state.V,
                 x0, digits, t0, ref, sums)
        t0 += sb
        if t0 >= cfg.steps:
            break
    if not np.all(np.isfinite(sums)):
        raise OverflowError("non-finite moment sums")
    return sums, state.positions(), state.cells()


def simulate_ensemble(cfg: EnsembleConfig, keep_final: bool = False, workers: int = 1) -> MomentSeries:
    """Run ``cfg.samples`` trajectories for ``cfg.steps`` steps.

    Each chunk of ``CHUNK`` trajectories draws from its own stream keyed by
    ``(seed, chunk)`` and chunks are reduced in index order, so the output is
    bit-for-bit reproducible for any ``workers``.
    """
    d = cfg.spec.dim
    c = center_of(cfg.initial_cell)
    reference = np.array([c]) if d == 1 else np.array(Point2(c.x1, c.v).physical)
    chunks = range(-(-cfg.samples // CHUNK))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _run_chunk(cfg, c, reference), chunks))
    else:
        results = [_run_chunk(cfg, c, reference) for c in chunks]
    total = results[0][0].copy()
    for r in results[1:]:
        total += r[0]
    n = cfg.samples
    s1 = total[:, :d]
    s2 = total[:, d:d + d * d].reshape(-1, d, d)
    s3 = total[:, d + d * d:2 * d + d * d]
    s4 = total[:, 2 * d + d * d:3 * d + d * d]
    msd = total[:, -1] / n
    count = np.full(cfg.steps + 1, float(n))
    mu, cov, skew, kurt = central_from_raw(count, s1, s2, s3, s4)
    series = MomentSeries(
        steps=np.arange(cfg.steps + 1), count=count, mean=mu + reference, covariance=cov,
        msd=msd, skewness=skew, excess_kurtosis=kurt, reference=reference,
        meta={"source": "simulate", "tiling": cfg.spec.tiling.value, "lambda": cfg.spec.lam,
              "seed": cfg.seed, "samples": n, "steps": cfg.steps})
    if keep_final:
        series.final_positions = np.concatenate([r[1] for r in results])
        series.final_cells = np.concatenate([r[2] for r in results])
    return series
