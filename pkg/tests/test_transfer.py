from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import line_density, overlap_kernel, uniform_triangle_moments
from tilediff.errors import AdmissibilityError, DomainError, UsageError
from tilediff.geometry import CellRef, Tiling, TilingSpec, hex_slot_triangle
from tilediff.transfer import (
    DENSITY_CSV_HEADER, KERNEL_CSV_HEADER, DensityField, apply_transfer, density_moments,
    density_to_csv, evolve, evolve_series, kernel_1d, kernel_for, kernel_from_csv, kernel_hex,
    kernel_to_csv, kernel_tri,
)

# offsets (dx1, dv) of the golden Λ=4 listing, source Up
E11 = {(3, -3), (-3, -3), (1, -3), (-1, -3), (0, 0), (2, 0), (-2, 0), (1, 3), (-1, 3), (0, 6)}
E21 = {(0, -2), (2, -2), (-2, -2), (1, 1), (-1, 1), (0, 4)}


def offsets(kernel, src, dst):
    return Counter((e.dx1, e.dv) for e in kernel.block(dst, src))


# ------------------------------------------------------------ line kernel

@pytest.mark.parametrize("lam, offs", [(3, [-1, 0, 1]), (1, [0]), (5, [-2, -1, 0, 1, 2])])
def test_kernel_1d(lam, offs):
    k = kernel_1d(lam)
    assert sorted(e.dx1 for e in k.entries) == offs
    assert all(e.weight == Fraction(1, lam) for e in k.entries)


def test_kernel_1d_even():
    with pytest.raises(AdmissibilityError):
        kernel_1d(4)


# -------------------------------------------------------- triangle kernel

def test_golden_triangle_kernel():
    k = kernel_tri(4)
    assert offsets(k, 0, 0) == Counter(E11)
    assert offsets(k, 0, 1) == Counter(E21)
    assert offsets(k, 1, 0) == Counter((x, -v) for x, v in E21)
    assert offsets(k, 1, 1) == Counter((x, -v) for x, v in E11)
    assert all(e.weight == Fraction(1, 16) for e in k.entries)


def test_triangle_identity():
    k = kernel_tri(1)
    assert [(e.src, e.dst, e.dx1, e.dv, e.weight) for e in k.entries] == [(0, 0, 0, 0, 1), (1, 1, 0, 0, 1)]


def test_triangle_inadmissible():
    with pytest.raises(AdmissibilityError):
        kernel_tri(5)


@pytest.mark.parametrize("lam", [4, 7, 10, 13])
def test_triangle_column_counts(lam):
    k = kernel_tri(lam)
    for src in (0, 1):
        assert len(k.block(src, src)) == lam * (lam + 1) // 2
        assert len(k.block(1 - src, src)) == lam * (lam - 1) // 2
    assert k.column_masses() == [1, 1]


def _triangle_oracle(k, src):
    r0, k0 = ((0, 0), (0, 1))[src]
    center = (0, 1) if src == 0 else (1, 2)
    ours = {}
    for e in k.column(src):
        v = center[1] + e.dv
        ours[(v // 3, center[0] + e.dx1)] = float(e.weight)
    return ours, overlap_kernel(r0, k0, center, k.spec.lam)


@pytest.mark.parametrize("lam", [4, 7])
def test_triangle_kernel_matches_area_overlap(lam):
    k = kernel_tri(lam)
    for src in (0, 1):
        ours, ref = _triangle_oracle(k, src)
        assert ours.keys() == ref.keys()
        for c in ours:
            assert ours[c] == pytest.approx(ref[c], abs=1e-12)


@pytest.mark.parametrize("lam", [4, 7, 10, 13])
def test_triangle_reflection_symmetry(lam):
    k = kernel_tri(lam)
    for src in (0, 1):
        for dst in (0, 1):
            o = offsets(k, src, dst)
            assert o == Counter((-x, v) for x, v in o)
            assert o == Counter((x, -v) for x, v in offsets(k, 1 - src, 1 - dst))


@pytest.mark.parametrize("lam", [4, 7, 10])
def test_triangle_zero_first_moment(lam):
    assert kernel_tri(lam).first_moments() == [(0, 0), (0, 0)]


# --------------------------------------------------------- hexagon kernel

def test_hexagon_identity():
    k = kernel_hex(1)
    assert sorted((e.src, e.dst, e.dx1, e.dv, e.weight) for e in k.entries) == [(s, s, 0, 0, 1) for s in range(6)]


@pytest.mark.parametrize("lam", [3, 5])
def test_hexagon_kernel_matches_area_overlap(lam):
    k = kernel_hex(lam)
    for src in range(6):
        col = k.column(src)
        assert len(col) == lam * lam
        assert sum(e.weight for e in col) == 1
        assert all(e.weight == Fraction(1, lam * lam) for e in col)
        ours = {}
        for e in col:
            a, b = e.shift
            ours[hex_slot_triangle(a, b, e.dst)] = float(e.weight)
        r0, k0 = hex_slot_triangle(0, 0, src)
        ref = overlap_kernel(r0, k0, (1, 0), lam)
        assert ours.keys() == ref.keys()
        assert np.allclose([ours[c] for c in ref], list(ref.values()), atol=1e-12)


@pytest.mark.parametrize("lam", [3, 5, 7])
def test_hexagon_slot_drift(lam):
    m = kernel_hex(lam).first_moments()
    assert all(d != (0, 0) for d in m)
    assert sum(d[0] for d in m) == 0 and sum(d[1] for d in m) == 0


def test_hexagon_even_needs_flag():
    with pytest.raises(AdmissibilityError):
        kernel_hex(4)
    k = kernel_hex(4, experimental=True)
    assert k.column_masses() == [1] * 6


# --------------------------------------------------------------- CSV

@pytest.mark.parametrize("spec", [TilingSpec("line", 5), TilingSpec("triangle", 7), TilingSpec("hexagon", 3)])
def test_kernel_csv_round_trip(spec):
    k = kernel_for(spec)
    text = kernel_to_csv(k)
    assert text.splitlines()[0] == ",".join(KERNEL_CSV_HEADER)
    back = kernel_from_csv(text)
    assert back.spec.tiling is spec.tiling and back.spec.lam == spec.lam
    assert back.entries == k.entries


def test_golden_kernel_csv_rows():
    rows = kernel_to_csv(kernel_tri(4)).splitlines()
    assert len(rows) == 33


def test_kernel_csv_rejects_bad_offset():
    with pytest.raises(DomainError):
        kernel_from_csv("src_type,dst_type,d_x1,d_v,weight_num,weight_den\n0,0,0,2,1,9\n0,1,0,0,1,9\n0,2,0,0,1,9\n"
                        "0,3,0,0,1,9\n0,4,0,0,1,9\n0,5,0,0,1,9\n")


# ---------------------------------------------------------- evolution

LINE3 = TilingSpec("line", 3)
TRI4 = TilingSpec("triangle", 4)


def test_apply_line():
    d = apply_transfer(DensityField.delta(LINE3, CellRef.line(0)), kernel_1d(3))
    assert d.masses == pytest.approx({CellRef.line(j): 1 / 3 for j in (-1, 0, 1)})


def test_apply_identity():
    d = DensityField.from_masses(TRI4, {CellRef.triangle(0, 0): 0.25, CellRef.triangle(2, -1): 0.75})
    out = apply_transfer(DensityField.from_masses(TilingSpec("triangle", 1), {c: m for c, m in d.masses.items()}),
                         kernel_tri(1))
    assert out.masses == d.masses


def test_apply_golden_delta():
    d = apply_transfer(DensityField.delta(TRI4, CellRef.triangle(0, 0)), kernel_tri(4))
    m = d.masses
    assert len(m) == 16 and all(v == 1 / 16 for v in m.values())
    got = {(c.k, 3 * c.r + (1 if c.is_up else 2) - 1) for c in m}
    assert got == E11 | E21


def test_spec_mismatch():
    with pytest.raises(UsageError):
        apply_transfer(DensityField.delta(LINE3, CellRef.line(0)), kernel_1d(5))


def test_evolve_zero():
    d = DensityField.delta(LINE3, CellRef.line(0))
    assert evolve(d, kernel_1d(3), 0) is d
    with pytest.raises(DomainError):
        evolve(d, kernel_1d(3), -1)


def test_evolve_line_two_steps():
    d = evolve(DensityField.delta(LINE3, CellRef.line(0)), kernel_1d(3), 2)
    assert [d.mass_at(CellRef.line(j)) for j in range(-2, 3)] == pytest.approx(np.array([1, 2, 3, 2, 1]) / 9, abs=1e-15)


@pytest.mark.parametrize("lam, n", [(3, 50), (5, 30), (7, 17)])
def test_evolve_line_matches_convolution(lam, n):
    d = evolve(DensityField.delta(TilingSpec("line", lam), CellRef.line(0)), kernel_1d(lam), n, tail_tol=0)
    ref = line_density(lam, n)
    m = (lam - 1) // 2 * n
    ours = np.array([d.mass_at(CellRef.line(j)) for j in range(-m, m + 1)])
    assert np.allclose(ours, ref, rtol=1e-12, atol=1e-300)


def test_mass_conservation_long_line():
    d = evolve(DensityField.delta(LINE3, CellRef.line(0)), kernel_1d(3), 10_000)
    assert abs(d.total_mass + d.discarded_mass - 1) <= 1e-9


@given(st.integers(1, 40), st.sampled_from([3, 5]))
@settings(max_examples=15, deadline=None)
def test_mass_conservation_hexagon(n, lam):
    spec = TilingSpec("hexagon", lam)
    d = evolve(DensityField.delta(spec, CellRef.hexagon(0, 0, 1)), kernel_hex(lam), n, tail_tol=0)
    assert d.total_mass == pytest.approx(1, abs=1e-12)


def test_triangle_msd_exact():
    d, s = evolve_series(DensityField.delta(TRI4, CellRef.triangle(0, 0)), kernel_tri(4), 100)
    assert s.msd[100] == pytest.approx(500, rel=1e-6)
    assert np.allclose(s.msd, 5 * s.steps, rtol=1e-9)


@pytest.mark.parametrize("lam", [3, 5, 7])
def test_line_variance_additivity(lam):
    _, s = evolve_series(DensityField.delta(TilingSpec("line", lam), CellRef.line(0)), kernel_1d(lam), 60)
    assert np.allclose(s.covariance[:, 0, 0], s.steps * (lam * lam - 1) / 12, rtol=1e-9)


def test_delta_moments():
    d = DensityField.delta(LINE3, CellRef.line(0))
    assert density_moments(d, "lattice").covariance[0, 0] == 0
    assert density_moments(d, "continuum").covariance[0, 0] == pytest.approx(1 / 12)


def test_triangle_continuum_correction():
    cov, _, _ = uniform_triangle_moments()
    for c in (CellRef.triangle(0, 0), CellRef.triangle(0, 1)):
        m = density_moments(DensityField.delta(TRI4, c), "continuum")
        assert np.allclose(m.covariance, cov, atol=1e-12)
        assert np.allclose(np.diag(cov), 1 / 6, atol=1e-10)


def test_unknown_moment_mode():
    with pytest.raises(DomainError):
        density_moments(DensityField.delta(LINE3, CellRef.line(0)), "pointwise")


def test_negative_or_bad_mass_rejected():
    with pytest.raises(DomainError):
        DensityField.from_masses(LINE3, {CellRef.line(0): 1.5, CellRef.line(1): -0.5})
    with pytest.raises(DomainError):
        DensityField.from_masses(LINE3, {CellRef.line(0): 0.5})
    with pytest.raises(UsageError):
        DensityField.from_masses(LINE3, {CellRef.triangle(0, 0): 1.0})


def test_from_cells_histogram():
    spec = TilingSpec("hexagon", 3)
    cells = np.array([[2, 0, 0], [2, 0, 0], [3, 1, -1], [0, 0, 0]])
    d = DensityField.from_cells(spec, cells)
    assert d.mass_at(CellRef.hexagon(0, 0, 2)) == 0.5
    assert d.mass_at(CellRef.hexagon(1, -1, 3)) == 0.25


def test_density_csv():
    d = apply_transfer(DensityField.delta(TRI4, CellRef.triangle(0, 0)), kernel_tri(4))
    lines = density_to_csv(d).splitlines()
    assert lines[0] == ",".join(DENSITY_CSV_HEADER)
    assert len(lines) == 17
    mass = sum(float(l.split(",")[4]) for l in lines[1:])
    assert mass == pytest.approx(1)
