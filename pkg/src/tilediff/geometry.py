"""Tilings of the line and the plane, cell indexing and point location.

Coordinates
-----------
Points in the plane are stored as ``(x1, v)`` where ``v = x2 * sqrt(3)`` is the
vertical coordinate measured in units of ``h = 1/sqrt(3)``.  With triangles of
side 2 and height ``3h``, every vertex and every center has integer ``(x1, v)``
coordinates, so all boundary tests are exact for dyadic inputs.

Triangle cells are indexed by ``(r, k)``: row ``r`` spans ``3r <= v < 3r + 3``
and ``k`` is the column of the cell's center.  The cell is *Up* (apex above its
horizontal side) when ``r + k`` is even and *Down* otherwise::

    Up   (r, k): base (k-1, 3r)..(k+1, 3r), apex (k, 3r+3), center (k, 3r+1)
    Down (r, k): top  (k-1, 3r+3)..(k+1, 3r+3), apex (k, 3r), center (k, 3r+2)

Ownership: every edge point belongs to the adjacent Up triangle, every lattice
vertex to the Up triangle whose apex it is, and Down triangles are open.

Hexagons are centered on the vertex sublattice ``(1 + 3a, 3a + 6b)``.  Each
triangle has exactly one vertex in it and belongs to that hexagon.  Slots are
numbered counterclockwise by the direction of the triangle centroid seen from
the hexagon center: slot ``s`` points at ``30 + 60 s`` degrees, so slot 0 is the
Up triangle east of the center whose west base vertex is the center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import AdmissibilityError, DomainError, UsageError

SQRT3 = math.sqrt(3.0)
#: Height unit h: physical x2 = v * H_UNIT.
H_UNIT = 1.0 / SQRT3


class Tiling(str, Enum):
    LINE = "line"
    TRIANGLE = "triangle"
    HEXAGON = "hexagon"

    @property
    def dim(self) -> int:
        return 1 if self is Tiling.LINE else 2

    @property
    def types(self) -> int:
        return {Tiling.LINE: 1, Tiling.TRIANGLE: 2, Tiling.HEXAGON: 6}[self]


@dataclass(frozen=True)
class Point2:
    """Point of the plane in lattice units ``(x1, v)``."""

    x1: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.x1) and math.isfinite(self.v)):
            raise DomainError(f"non-finite point ({self.x1}, {self.v})")

    @classmethod
    def from_physical(cls, x1: float, x2: float) -> "Point2":
        return cls(float(x1), float(x2) * SQRT3)

    @property
    def x2(self) -> float:
        """Physical vertical coordinate."""
        return self.v * H_UNIT

    @property
    def physical(self) -> tuple[float, float]:
        return (self.x1, self.x2)


@dataclass(frozen=True, order=True)
class CellRef:
    """One tile.  Use the :meth:`line`, :meth:`triangle`, :meth:`hexagon`
    constructors; the raw fields are ``(i, j, slot)`` = ``(k, 0, 0)`` on the line,
    ``(r, k, 0)`` for triangles and ``(a, b, slot)`` for hexagon slots."""

    tiling: Tiling
    i: int
    j: int = 0
    slot: int = 0

    def __post_init__(self):
        if self.tiling is Tiling.HEXAGON:
            if not 0 <= self.slot <= 5:
                raise DomainError(f"hexagon slot {self.slot} outside 0..5")
        elif self.slot != 0:
            raise UsageError("slot is only meaningful for hexagon cells")
        if self.tiling is Tiling.LINE and self.j != 0:
            raise UsageError("line cells carry a single index")

    @classmethod
    def line(cls, k: int) -> "CellRef":
        return cls(Tiling.LINE, int(k))

    @classmethod
    def triangle(cls, r: int, k: int) -> "CellRef":
        return cls(Tiling.TRIANGLE, int(r), int(k))

    @classmethod
    def hexagon(cls, a: int, b: int, slot: int) -> "CellRef":
        return cls(Tiling.HEXAGON, int(a), int(b), int(slot))

    def _need(self, tiling: Tiling):
        if self.tiling is not tiling:
            raise UsageError(f"{self.tiling.value} cell used where a {tiling.value} cell is required")

    @property
    def k(self) -> int:
        if self.tiling is Tiling.LINE:
            return self.i
        self._need(Tiling.TRIANGLE)
        return self.j

    @property
    def r(self) -> int:
        self._need(Tiling.TRIANGLE)
        return self.i

    @property
    def a(self) -> int:
        self._need(Tiling.HEXAGON)
        return self.i

    @property
    def b(self) -> int:
        self._need(Tiling.HEXAGON)
        return self.j

    @property
    def is_up(self) -> bool:
        if self.tiling is Tiling.TRIANGLE:
            return (self.i + self.j) % 2 == 0
        if self.tiling is Tiling.HEXAGON:
            return self.slot % 2 == 0
        raise UsageError("line cells have no orientation")

    @property
    def type_index(self) -> int:
        """0 on the line; 0 (Up) / 1 (Down) for triangles; the slot for hexagons."""
        if self.tiling is Tiling.LINE:
            return 0
        if self.tiling is Tiling.TRIANGLE:
            return 0 if self.is_up else 1
        return self.slot


@dataclass(frozen=True)
class TilingSpec:
    tiling: Tiling
    lam: int
    #: Allow stretch factors that build fine geometrically but lie outside the
    #: proven range (even Λ on hexagons).  Results are labeled experimental.
    experimental: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tiling", Tiling(self.tiling))
        if isinstance(self.lam, bool) or int(self.lam) != self.lam:
            raise AdmissibilityError(f"lambda must be an integer, got {self.lam!r}")
        object.__setattr__(self, "lam", int(self.lam))

    @property
    def dim(self) -> int:
        return self.tiling.dim

    @property
    def types(self) -> int:
        return self.tiling.types


class LambdaVerdict(NamedTuple):
    ok: bool
    reason: str

    def __bool__(self):
        return self.ok


def validate_lambda(spec: TilingSpec) -> LambdaVerdict:
    """Check the stretch factor against the tiling's admissibility condition."""
    lam = spec.lam
    if lam < 1:
        return LambdaVerdict(False, f"lambda={lam} must be a positive integer")
    if spec.tiling is Tiling.LINE:
        if lam % 2 == 0:
            return LambdaVerdict(False, f"line tiling needs odd lambda = 2m+1; {lam} is even")
    elif spec.tiling is Tiling.TRIANGLE:
        if lam % 3 != 1:
            return LambdaVerdict(
                False, f"triangle tiling needs lambda = 4+3m (lambda = 1 mod 3); {lam} = {lam % 3} mod 3")
    elif lam % 2 == 0 and not spec.experimental:
        return LambdaVerdict(
            False, f"hexagon tiling needs odd lambda; {lam} is even (enable experimental mode to build anyway)")
    return LambdaVerdict(True, "ok")


def require_admissible(spec: TilingSpec) -> None:
    verdict = validate_lambda(spec)
    if not verdict:
        raise AdmissibilityError(verdict.reason)


def is_lattice_vertex(x1, v) -> bool:
    """True when ``(x1, v)`` is a vertex of the triangle tiling (integer input)."""
    if v % 3:
        return False
    return (x1 + v // 3) % 2 == 1


def stretch_lands_on_lattice(tiling: Tiling, lam: int) -> bool:
    """Stretch the reference cell(s) about their map center and check that the
    image vertices are again tiling vertices."""
    tiling = Tiling(tiling)
    if tiling is Tiling.LINE:
        # endpoints 0 +- lam/2 must be half-integers
        return (lam % 2) == 1
    if tiling is Tiling.TRIANGLE:
        refs = [CellRef.triangle(0, 0), CellRef.triangle(0, 1)]
        centers = [tri_center_int(c.r, c.k) for c in refs]
    else:
        refs = [CellRef.triangle(*hex_slot_triangle(0, 0, s)) for s in range(6)]
        centers = [hex_center_int(0, 0)] * 6
    for cell, (cx, cv) in zip(refs, centers):
        for vx, vv in tri_vertices(cell.r, cell.k):
            if not is_lattice_vertex(cx + lam * (vx - cx), cv + lam * (vv - cv)):
                return False
    return True


# ---------------------------------------------------------------- line

def cell_of_1d(x: float) -> int:
    """Index k of the half-open interval ``[k - 1/2, k + 1/2)`` containing x."""
    if not math.isfinite(x):
        raise DomainError(f"non-finite coordinate {x}")
    return math.floor(x + 0.5)


# ----------------------------------------------------------- triangles

def tri_vertices(r: int, k: int) -> tuple[tuple[int, int], ...]:
    if (r + k) % 2 == 0:
        return ((k - 1, 3 * r), (k + 1, 3 * r), (k, 3 * r + 3))
    return ((k - 1, 3 * r + 3), (k + 1, 3 * r + 3), (k, 3 * r))


def tri_center_int(r: int, k: int) -> tuple[int, int]:
    return (k, 3 * r + 1) if (r + k) % 2 == 0 else (k, 3 * r + 2)


def locate_triangles(x1, v, scale=1):
    """Vectorized point location.

    ``x1`` and ``v`` are float arrays (``scale=1``) or int64 arrays holding the
    coordinates multiplied by the integer ``scale``.  Returns int64 arrays
    ``(r, k)``.  Integer input is exact; float input is exact for dyadic points.
    """
    x1 = np.asarray(x1)
    v = np.asarray(v)
    r = np.floor_divide(v, 3 * scale)
    t = v - 3 * scale * r
    k_up = r + 2 * np.floor_divide(x1 - r * scale + scale, 2 * scale)
    dx = x1 - k_up * scale
    adx = np.abs(dx)
    inside_up = 3 * adx <= 3 * scale - t
    vertex = inside_up & (t == 0) & (adx == scale)
    down_k = k_up + np.where(dx >= 0, 1, -1)
    out_r = np.where(vertex, r - 1, r)
    out_k = np.where(inside_up, np.where(vertex, k_up - 1, k_up), down_k)
    return out_r.astype(np.int64), out_k.astype(np.int64)


def tri_cell_of(p: Point2) -> CellRef:
    r, k = locate_triangles(np.array([p.x1]), np.array([p.v]))
    return CellRef.triangle(int(r[0]), int(k[0]))


def tri_center(cell: CellRef) -> Point2:
    cell._need(Tiling.TRIANGLE)
    x, v = tri_center_int(cell.r, cell.k)
    return Point2(float(x), float(v))


# ------------------------------------------------------------ hexagons

# Centroid of slot triangle s relative to its hexagon center, lattice units.
SLOT_CENTROID_OFFSETS = ((1, 1), (0, 2), (-1, 1), (-1, -1), (0, -2), (1, -1))


def hex_center_int(a: int, b: int) -> tuple[int, int]:
    return (1 + 3 * a, 3 * a + 6 * b)


def hex_slot_triangle(a: int, b: int, slot: int) -> tuple[int, int]:
    """Triangle ``(r, k)`` occupying ``slot`` of hexagon ``(a, b)``."""
    x = 1 + 3 * a
    r0 = a + 2 * b
    table = ((r0, x + 1), (r0, x), (r0, x - 1), (r0 - 1, x - 1), (r0 - 1, x), (r0 - 1, x + 1))
    return table[slot]


def _vertex_is_center(x, row):
    return (np.mod(x - 1, 3) == 0) & (np.mod(row - np.floor_divide(x - 1, 3), 2) == 0)


def triangles_to_hex(r, k):
    """Vectorized ``(r, k) -> (a, b, slot)``."""
    r = np.asarray(r, dtype=np.int64)
    k = np.asarray(k, dtype=np.int64)
    up = np.mod(r + k, 2) == 0
    # vertex candidates as (x, row) with slot labels, for Up and Down cells
    cand = [
        (np.where(up, k - 1, k), r, np.where(up, 0, 1)),
        (k + 1, np.where(up, r, r + 1), np.where(up, 2, 3)),
        (np.where(up, k, k - 1), r + 1, np.where(up, 4, 5)),
    ]
    x = np.zeros_like(r)
    row = np.zeros_like(r)
    slot = np.full_like(r, -1)
    for cx, crow, cslot in cand:
        hit = _vertex_is_center(cx, crow)
        x = np.where(hit, cx, x)
        row = np.where(hit, crow, row)
        slot = np.where(hit, cslot, slot)
    a = np.floor_divide(x - 1, 3)
    b = np.floor_divide(row - a, 2)
    return a, b, slot


def hex_cell_of(p: Point2) -> CellRef:
    r, k = locate_triangles(np.array([p.x1]), np.array([p.v]))
    a, b, s = triangles_to_hex(r, k)
    return CellRef.hexagon(int(a[0]), int(b[0]), int(s[0]))


# ------------------------------------------------------------- generic

def cell_of(p, tiling: Tiling) -> CellRef:
    """Cell owning ``p`` (a float for the line, a :class:`Point2` otherwise)."""
    tiling = Tiling(tiling)
    if tiling is Tiling.LINE:
        return CellRef.line(cell_of_1d(float(p)))
    if not isinstance(p, Point2):
        p = Point2(*p)
    if tiling is Tiling.TRIANGLE:
        return tri_cell_of(p)
    return hex_cell_of(p)


def center_of(cell: CellRef):
    """Reflection center of the map for this cell: ``k`` on the line, the
    triangle center, or the hexagon center (a :class:`Point2`)."""
    if cell.tiling is Tiling.LINE:
        return float(cell.k)
    if cell.tiling is Tiling.TRIANGLE:
        return tri_center(cell)
    x, v = hex_center_int(cell.a, cell.b)
    return Point2(float(x), float(v))


def cell_triangle(cell: CellRef) -> tuple[int, int]:
    """Underlying unit triangle ``(r, k)`` of a triangle or hexagon cell."""
    if cell.tiling is Tiling.TRIANGLE:
        return cell.r, cell.k
    if cell.tiling is Tiling.HEXAGON:
        return hex_slot_triangle(cell.a, cell.b, cell.slot)
    raise UsageError("line cells are intervals")


def centroid_of(cell: CellRef):
    """Barycenter of the cell (differs from :func:`center_of` for hexagon slots)."""
    if cell.tiling is Tiling.LINE:
        return float(cell.k)
    x, v = tri_center_int(*cell_triangle(cell))
    return Point2(float(x), float(v))


# ------------------------------------------------ per-type sublattices
#
# Cells of one type form a translate of a 1- or 2-d integer lattice.  Dense
# storage indexes them as
#   line:       (k,)
#   triangle:   Up (r, k) -> (r, (k - r) / 2),  Down (r, k) -> (r, (k - r - 1) / 2)
#   hexagon:    slot s of (a, b) -> (a, b)
# Translations of the tiling act on these indices by plain integer shifts.

def sublattice_index(cell: CellRef) -> tuple[int, tuple[int, ...]]:
    if cell.tiling is Tiling.LINE:
        return 0, (cell.k,)
    if cell.tiling is Tiling.TRIANGLE:
        r, k = cell.r, cell.k
        return (0, (r, (k - r) // 2)) if cell.is_up else (1, (r, (k - r - 1) // 2))
    return cell.slot, (cell.a, cell.b)


def cell_from_sublattice(tiling: Tiling, t: int, idx) -> CellRef:
    tiling = Tiling(tiling)
    if tiling is Tiling.LINE:
        return CellRef.line(idx[0])
    i, j = int(idx[0]), int(idx[1])
    if tiling is Tiling.TRIANGLE:
        return CellRef.triangle(i, i + 2 * j + t)
    return CellRef.hexagon(i, j, t)


def sublattice_triangles(tiling: Tiling, t: int, i, j):
    """Vectorized ``(r, k)`` of the unit triangles behind sublattice indices."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    if tiling is Tiling.TRIANGLE:
        return i, i + 2 * j + t
    x = 1 + 3 * i
    r0 = i + 2 * j
    dr, dx = ((0, 1), (0, 0), (0, -1), (-1, -1), (-1, 0), (-1, 1))[t]
    return r0 + dr, x + dx


def sublattice_centers(tiling: Tiling, t: int, idx, centroid: bool = False):
    """Lattice coordinates ``(x1, v)`` of :func:`center_of` (or of the
    barycenter when ``centroid``) for index arrays ``idx = (i[, j])``."""
    tiling = Tiling(tiling)
    if tiling is Tiling.LINE:
        return (np.asarray(idx[0], dtype=np.int64),)
    i = np.asarray(idx[0], dtype=np.int64)
    j = np.asarray(idx[1], dtype=np.int64)
    if tiling is Tiling.TRIANGLE:
        return i + 2 * j + t, 3 * i + 1 + t
    x, v = 1 + 3 * i, 3 * i + 6 * j
    if centroid:
        ox, ov = SLOT_CENTROID_OFFSETS[t]
        return x + ox, v + ov
    return x, v


def _dirichlet_axis_moment(c, p):
    """E[(sum_i l_i c_i)^p] for barycentric coordinates l uniform on the simplex."""
    c1, c2, c3 = c
    h = sum(c1 ** a * c2 ** b * c3 ** (p - a - b) for a in range(p + 1) for b in range(p + 1 - a))
    return 2 * math.factorial(p) / math.factorial(p + 2) * h


def cell_shape_moments(tiling: Tiling, t: int):
    """Central moments of the uniform distribution on one cell of type ``t``.

    Returns ``(second, third, fourth)`` in physical units: the (d, d) covariance
    and per-coordinate third and fourth central moments.
    """
    tiling = Tiling(tiling)
    if tiling is Tiling.LINE:
        return np.array([[1.0 / 12]]), np.zeros(1), np.array([1.0 / 80])
    up = (t == 0) if tiling is Tiling.TRIANGLE else (t % 2 == 0)
    sign = 1.0 if up else -1.0
    xs = (-1.0, 1.0, 0.0)
    ys = tuple(sign * y * H_UNIT for y in (-1.0, -1.0, 2.0))
    verts = np.array([xs, ys]).T
    second = verts.T @ verts / 12.0
    third = np.array([_dirichlet_axis_moment(xs, 3), _dirichlet_axis_moment(ys, 3)])
    fourth = np.array([_dirichlet_axis_moment(xs, 4), _dirichlet_axis_moment(ys, 4)])
    return second, third, fourth
