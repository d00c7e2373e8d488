"""Exact transfer-operator kernels and evolution of piecewise-constant densities.

A uniform density on one cell is pushed forward by the map onto the cell
stretched by Λ about its map center.  That image is a union of Λ^d unit cells,
each receiving mass 1/Λ^d, so the operator acts on cell masses as a finite
convolution with one kernel block per (source type, target type).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import AdmissibilityError, DomainError, UsageError
from .geometry import (
    H_UNIT,
    CellRef,
    Tiling,
    TilingSpec,
    cell_from_sublattice,
    cell_shape_moments,
    hex_center_int,
    hex_slot_triangle,
    require_admissible,
    sublattice_centers,
    sublattice_index,
    tri_center_int,
    tri_vertices,
    triangles_to_hex,
)
from .moments import DensityMoments, MomentSeries, weighted_moments

MASS_TOL = 1e-9
#: Boundary slabs of a density whose masses are all at or below this value are
#: dropped after each step (their total is tracked in ``discarded_mass``).
DEFAULT_TAIL_TOL = 1e-30


class KernelEntry(NamedTuple):
    src: int
    dst: int
    #: displacement of the target's map center from the source's, lattice units
    dx1: int
    dv: int
    weight: Fraction
    #: shift of the sublattice index
    shift: tuple


@dataclass(frozen=True)
class Kernel:
    spec: TilingSpec
    entries: tuple

    @property
    def types(self) -> int:
        return self.spec.types

    @property
    def dim(self) -> int:
        return self.spec.dim

    def column(self, src: int) -> list[KernelEntry]:
        return [e for e in self.entries if e.src == src]

    def block(self, dst: int, src: int) -> list[KernelEntry]:
        return [e for e in self.entries if e.src == src and e.dst == dst]

    def physical_offsets(self) -> np.ndarray:
        """(E, d) displacements in physical units."""
        d = np.array([(e.dx1, e.dv * H_UNIT) for e in self.entries], dtype=float)
        return d[:, :1] if self.dim == 1 else d

    def weights(self) -> np.ndarray:
        return np.array([float(e.weight) for e in self.entries])

    def mixing_matrix(self) -> list[list[Fraction]]:
        """Exact ``M[dst][src]`` = total weight moved from ``src`` to ``dst``."""
        m = [[Fraction(0)] * self.types for _ in range(self.types)]
        for e in self.entries:
            m[e.dst][e.src] += e.weight
        return m

    def column_masses(self) -> list[Fraction]:
        return [sum((e.weight for e in self.column(s)), Fraction(0)) for s in range(self.types)]

    def first_moments(self) -> list[tuple[Fraction, Fraction]]:
        """Exact per-source first moment ``sum w * (dx1, dv)`` in lattice units."""
        out = []
        for s in range(self.types):
            col = self.column(s)
            out.append((sum((e.weight * e.dx1 for e in col), Fraction(0)),
                        sum((e.weight * e.dv for e in col), Fraction(0))))
        return out


# ------------------------------------------------------------ builders

def _check_weights(entries, types, lam, dim):
    per = lam ** dim
    for s in range(types):
        n = sum(1 for e in entries if e.src == s)
        if n != per:
            raise RuntimeError(f"enumeration produced {n} targets for source type {s}, expected {per}")


def kernel_1d(lam: int) -> Kernel:
    spec = TilingSpec(Tiling.LINE, lam)
    require_admissible(spec)
    m = (lam - 1) // 2
    w = Fraction(1, lam)
    entries = tuple(KernelEntry(0, 0, j, 0, w, (j,)) for j in range(-m, m + 1))
    return Kernel(spec, entries)


def _inside(tri, q) -> bool:
    """Strict interior test for integer points; orientation-agnostic."""
    (ax, ay), (bx, by), (cx, cy) = tri
    qx, qy = q
    d1 = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
    d2 = (cx - bx) * (qy - by) - (cy - by) * (qx - bx)
    d3 = (ax - cx) * (qy - cy) - (ay - cy) * (qx - cx)
    return (d1 > 0 and d2 > 0 and d3 > 0) or (d1 < 0 and d2 < 0 and d3 < 0)


def stretched_cells(r: int, k: int, center, lam: int) -> list[tuple[int, int]]:
    """Unit triangles ``(r', k')`` covering triangle ``(r, k)`` stretched by
    ``lam`` about ``center`` (integer lattice coordinates)."""
    cx, cv = center
    big = [(cx + lam * (x - cx), cv + lam * (v - cv)) for x, v in tri_vertices(r, k)]
    xs = [p[0] for p in big]
    vs = [p[1] for p in big]
    cells = []
    for rr in range(min(vs) // 3 - 1, max(vs) // 3 + 1):
        for kk in range(min(xs) - 1, max(xs) + 2):
            if _inside(big, tri_center_int(rr, kk)):
                cells.append((rr, kk))
    return cells


def kernel_tri(lam: int) -> Kernel:
    spec = TilingSpec(Tiling.TRIANGLE, lam)
    require_admissible(spec)
    w = Fraction(1, lam * lam)
    entries = []
    for src, (r0, k0) in enumerate(((0, 0), (0, 1))):
        c = tri_center_int(r0, k0)
        _, idx0 = sublattice_index(CellRef.triangle(r0, k0))
        for rr, kk in stretched_cells(r0, k0, c, lam):
            cell = CellRef.triangle(rr, kk)
            dst, idx = sublattice_index(cell)
            x, v = tri_center_int(rr, kk)
            entries.append(KernelEntry(src, dst, x - c[0], v - c[1], w,
                                       (idx[0] - idx0[0], idx[1] - idx0[1])))
    entries.sort(key=lambda e: (e.src, e.dst, e.dv, e.dx1))
    _check_weights(entries, 2, lam, 2)
    return Kernel(spec, tuple(entries))


def kernel_hex(lam: int, experimental: bool = False) -> Kernel:
    spec = TilingSpec(Tiling.HEXAGON, lam, experimental=experimental)
    require_admissible(spec)
    w = Fraction(1, lam * lam)
    c = hex_center_int(0, 0)
    entries = []
    for src in range(6):
        r0, k0 = hex_slot_triangle(0, 0, src)
        cells = stretched_cells(r0, k0, c, lam)
        a, b, slot = triangles_to_hex([rc for rc, _ in cells], [kc for _, kc in cells])
        for aa, bb, ss in zip(a.tolist(), b.tolist(), slot.tolist()):
            entries.append(KernelEntry(src, ss, 3 * aa, 3 * aa + 6 * bb, w, (aa, bb)))
    entries.sort(key=lambda e: (e.src, e.dst, e.dv, e.dx1))
    _check_weights(entries, 6, lam, 2)
    return Kernel(spec, tuple(entries))


def kernel_for(spec: TilingSpec) -> Kernel:
    if spec.tiling is Tiling.LINE:
        return kernel_1d(spec.lam)
    if spec.tiling is Tiling.TRIANGLE:
        return kernel_tri(spec.lam)
    return kernel_hex(spec.lam, experimental=spec.experimental)


# ------------------------------------------------------------- kernel CSV

KERNEL_CSV_HEADER = ("src_type", "dst_type", "d_x1", "d_v", "weight_num", "weight_den")


def kernel_to_csv(kernel: Kernel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(KERNEL_CSV_HEADER)
    for e in kernel.entries:
        w.writerow((e.src, e.dst, e.dx1, e.dv, e.weight.numerator, e.weight.denominator))
    return buf.getvalue()


def _shift_from_offset(tiling: Tiling, src: int, dx1: int, dv: int):
    if tiling is Tiling.LINE:
        return (dx1,)
    if tiling is Tiling.HEXAGON:
        if dx1 % 3 or (dv - dx1) % 6:
            raise DomainError(f"offset ({dx1}, {dv}) is not a hexagon lattice vector")
        return (dx1 // 3, (dv - dx1) // 6)
    r0, k0 = ((0, 0), (0, 1))[src]
    cx, cv = tri_center_int(r0, k0)
    x, v = cx + dx1, cv + dv
    if v % 3 == 0:
        raise DomainError(f"offset ({dx1}, {dv}) does not end on a triangle center")
    rr = (v - 1) // 3 if v % 3 == 1 else (v - 2) // 3
    _, idx0 = sublattice_index(CellRef.triangle(r0, k0))
    _, idx = sublattice_index(CellRef.triangle(rr, x))
    return (idx[0] - idx0[0], idx[1] - idx0[1])


def kernel_from_csv(text: str, spec: TilingSpec | None = None) -> Kernel:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise DomainError("empty kernel file")
    if spec is None:
        types = max(max(int(r["src_type"]), int(r["dst_type"])) for r in rows) + 1
        tiling = {1: Tiling.LINE, 2: Tiling.TRIANGLE, 6: Tiling.HEXAGON}.get(types)
        if tiling is None:
            raise DomainError(f"cannot infer tiling from {types} cell types")
        den = int(rows[0]["weight_den"])
        lam = den if tiling is Tiling.LINE else round(den ** 0.5)
        spec = TilingSpec(tiling, lam, experimental=(tiling is Tiling.HEXAGON and lam % 2 == 0))
    entries = []
    for r in rows:
        src, dst, dx1, dv = (int(r[c]) for c in KERNEL_CSV_HEADER[:4])
        weight = Fraction(int(r["weight_num"]), int(r["weight_den"]))
        entries.append(KernelEntry(src, dst, dx1, dv, weight, _shift_from_offset(spec.tiling, src, dx1, dv)))
    return Kernel(spec, tuple(entries))


# ----------------------------------------------------------- densities

@dataclass(frozen=True)
class Block:
    origin: tuple
    data: np.ndarray


@dataclass(frozen=True)
class DensityField:
    """Piecewise-constant probability density stored as cell masses.

    ``blocks`` maps a cell type to a dense array over a window of its
    sublattice (see :mod:`tilediff.geometry`); absent cells have mass 0.
    """

    spec: TilingSpec
    blocks: Mapping[int, Block]
    #: physical point that ``msd`` is measured from
    reference: tuple = (0.0,)
    discarded_mass: float = 0.0
    steps: int = 0

    def __post_init__(self):
        for b in self.blocks.values():
            b.data.setflags(write=False)
            if b.data.size and b.data.min() < 0:
                raise DomainError("negative cell mass")
        total = self.total_mass + self.discarded_mass
        if abs(total - 1.0) > MASS_TOL:
            raise DomainError(f"total mass {total!r} differs from 1")

    # -- construction
    @classmethod
    def delta(cls, spec: TilingSpec, cell: CellRef) -> "DensityField":
        return cls.from_masses(spec, {cell: 1.0}, reference=_physical_center(cell))

    @classmethod
    def from_masses(cls, spec: TilingSpec, masses: Mapping[CellRef, float], reference=None) -> "DensityField":
        if not masses:
            raise DomainError("empty density")
        by_type: dict[int, list] = {}
        for cell, m in masses.items():
            if cell.tiling is not spec.tiling:
                raise UsageError(f"{cell.tiling.value} cell in a {spec.tiling.value} density")
            t, idx = sublattice_index(cell)
            by_type.setdefault(t, []).append((idx, float(m)))
        blocks = {}
        for t, items in sorted(by_type.items()):
            idx = np.array([i for i, _ in items])
            lo = idx.min(axis=0)
            data = np.zeros(tuple(idx.max(axis=0) - lo + 1))
            for i, m in items:
                data[tuple(np.array(i) - lo)] += m
            blocks[t] = Block(tuple(int(x) for x in lo), data)
        if reference is None:
            reference = (0.0,) * spec.dim
        return cls(spec, blocks, tuple(reference))

    @classmethod
    def from_cells(cls, spec: TilingSpec, cells: np.ndarray, reference=None) -> "DensityField":
        """Empirical density from an (N, 1 + dim) array of ``(type, *index)`` rows."""
        cells = np.asarray(cells, dtype=np.int64)
        n = len(cells)
        if n == 0:
            raise DomainError("no samples")
        blocks = {}
        for t in np.unique(cells[:, 0]).tolist():
            idx = cells[cells[:, 0] == t, 1:]
            lo = idx.min(axis=0)
            shape = tuple(idx.max(axis=0) - lo + 1)
            flat = np.ravel_multi_index(tuple((idx - lo).T), shape)
            data = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape) / n
            blocks[t] = Block(tuple(int(x) for x in lo), data)
        if reference is None:
            reference = (0.0,) * spec.dim
        return cls(spec, blocks, tuple(reference))

    # -- inspection
    @property
    def total_mass(self) -> float:
        return float(sum(b.data.sum() for b in self.blocks.values()))

    @property
    def masses(self) -> dict[CellRef, float]:
        out = {}
        for t, b in sorted(self.blocks.items()):
            for local in zip(*np.nonzero(b.data)):
                idx = tuple(int(o + i) for o, i in zip(b.origin, local))
                out[cell_from_sublattice(self.spec.tiling, t, idx)] = float(b.data[local])
        return out

    def mass_at(self, cell: CellRef) -> float:
        t, idx = sublattice_index(cell)
        b = self.blocks.get(t)
        if b is None:
            return 0.0
        local = tuple(i - o for i, o in zip(idx, b.origin))
        if any(x < 0 or x >= s for x, s in zip(local, b.data.shape)):
            return 0.0
        return float(b.data[local])

    def atoms(self, centroid: bool = False):
        """Nonzero cells as arrays: ``(types, index (M, dim), positions (M, dim), masses)``.

        Positions are physical map centers, or barycenters when ``centroid``.
        """
        types, idxs, pos, mass = [], [], [], []
        tiling = self.spec.tiling
        for t, b in sorted(self.blocks.items()):
            nz = np.nonzero(b.data)
            if not len(nz[0]):
                continue
            idx = np.stack([o + i for o, i in zip(b.origin, nz)], axis=1)
            coords = sublattice_centers(tiling, t, idx.T, centroid=centroid)
            p = np.stack([c.astype(float) for c in coords], axis=1)
            if tiling is not Tiling.LINE:
                p[:, 1] *= H_UNIT
            types.append(np.full(len(idx), t))
            idxs.append(idx)
            pos.append(p)
            mass.append(b.data[nz])
        return (np.concatenate(types), np.concatenate(idxs), np.concatenate(pos), np.concatenate(mass))


def _physical_center(cell: CellRef) -> tuple:
    t, idx = sublattice_index(cell)
    coords = sublattice_centers(cell.tiling, t, [np.array([i]) for i in idx])
    if cell.tiling is Tiling.LINE:
        return (float(coords[0][0]),)
    return (float(coords[0][0]), float(coords[1][0]) * H_UNIT)


def _trim(data: np.ndarray, origin: tuple, tol: float):
    """Drop boundary slabs whose masses are all <= tol."""
    dropped = 0.0
    origin = list(origin)
    for ax in range(data.ndim):
        other = tuple(i for i in range(data.ndim) if i != ax)
        peak = data.max(axis=other) if other else data
        keep = np.nonzero(peak > tol)[0]
        if len(keep) == 0:
            return None, tuple(origin), float(data.sum())
        lo, hi = int(keep[0]), int(keep[-1]) + 1
        if lo > 0 or hi < data.shape[ax]:
            dropped += float(np.take(data, range(lo), axis=ax).sum())
            dropped += float(np.take(data, range(hi, data.shape[ax]), axis=ax).sum())
            data = np.take(data, range(lo, hi), axis=ax)
            origin[ax] += lo
    return data, tuple(origin), dropped


def apply_transfer(d: DensityField, kernel: Kernel, tail_tol: float = DEFAULT_TAIL_TOL) -> DensityField:
    """One application of the transfer operator."""
    if d.spec.tiling is not kernel.spec.tiling or d.spec.lam != kernel.spec.lam:
        raise UsageError(f"density for {d.spec} cannot be evolved with a kernel for {kernel.spec}")
    bounds: dict[int, list] = {}
    for e in kernel.entries:
        b = d.blocks.get(e.src)
        if b is None:
            continue
        lo = np.add(b.origin, e.shift)
        hi = lo + b.data.shape
        if e.dst in bounds:
            bounds[e.dst][0] = np.minimum(bounds[e.dst][0], lo)
            bounds[e.dst][1] = np.maximum(bounds[e.dst][1], hi)
        else:
            bounds[e.dst] = [lo, hi]
    out = {t: np.zeros(tuple(hi - lo)) for t, (lo, hi) in bounds.items()}
    for e in kernel.entries:
        b = d.blocks.get(e.src)
        if b is None:
            continue
        start = np.add(b.origin, e.shift) - bounds[e.dst][0]
        sl = tuple(slice(s, s + n) for s, n in zip(start, b.data.shape))
        out[e.dst][sl] += float(e.weight) * b.data
    blocks = {}
    dropped = 0.0
    for t in sorted(out):
        data, origin, lost = _trim(out[t], tuple(int(x) for x in bounds[t][0]), tail_tol)
        dropped += lost
        if data is not None:
            blocks[t] = Block(origin, data)
    return DensityField(d.spec, blocks, d.reference, d.discarded_mass + dropped, d.steps + 1)


def evolve(d: DensityField, kernel: Kernel, n: int, tail_tol: float = DEFAULT_TAIL_TOL) -> DensityField:
    if n < 0:
        raise DomainError("number of steps must be nonnegative")
    for _ in range(n):
        d = apply_transfer(d, kernel, tail_tol)
    return d


def density_moments(d: DensityField, mode: str = "lattice") -> DensityMoments:
    """Moments of the density using cell map-centers as atoms (``lattice``),
    or the uniform within-cell distributions (``continuum``)."""
    if not d.blocks or d.total_mass <= 0:
        raise DomainError("empty density field")
    if mode not in ("lattice", "continuum"):
        raise DomainError(f"unknown moment mode {mode!r}")
    types, _, pos, mass = d.atoms(centroid=(mode == "continuum"))
    if mode == "lattice":
        return weighted_moments(pos, mass, d.reference)
    shapes = [cell_shape_moments(d.spec.tiling, t) for t in range(d.spec.types)]
    e2 = np.array([shapes[t][0] for t in types])
    e3 = np.array([shapes[t][1] for t in types])
    e4 = np.array([shapes[t][2] for t in types])
    return weighted_moments(pos, mass, d.reference, e2, e3, e4)


def evolve_series(d: DensityField, kernel: Kernel, n: int, mode: str = "lattice",
                  tail_tol: float = DEFAULT_TAIL_TOL):
    """Evolve ``n`` steps, recording moments after every step.

    Returns ``(final_field, MomentSeries)`` with ``n + 1`` entries.
    """
    moments = [density_moments(d, mode)]
    for _ in range(n):
        d = apply_transfer(d, kernel, tail_tol)
        moments.append(density_moments(d, mode))
    series = MomentSeries.stack(moments, d.reference, meta={"source": "evolve", "mode": mode})
    return d, series


# --------------------------------------------------------- density CSV

DENSITY_CSV_HEADER = ("r", "k", "slot", "type", "mass", "x1_center", "x2_center_physical")


def density_to_csv(d: DensityField) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DENSITY_CSV_HEADER)
    tiling = d.spec.tiling
    types, idx, pos, mass = d.atoms()
    for t, i, p, m in zip(types.tolist(), idx.tolist(), pos.tolist(), mass.tolist()):
        cell = cell_from_sublattice(tiling, t, i)
        if tiling is Tiling.LINE:
            w.writerow(("", cell.k, "", 0, repr(m), repr(p[0]), repr(0.0)))
            continue
        if tiling is Tiling.TRIANGLE:
            r, k, slot = cell.r, cell.k, ""
        else:
            (r, k), slot = hex_slot_triangle(cell.a, cell.b, cell.slot), cell.slot
        w.writerow((r, k, slot, t, repr(m), repr(p[0]), repr(p[1])))
    return buf.getvalue()
