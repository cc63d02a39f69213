"""Exact discrete geometry: measure, perimeter, diameters, raster surgery."""

from __future__ import annotations

import math

import numpy as np
import pytest

from eigsurgery.domain import (
    EmptyDomainError,
    GridDomain,
    Strip,
    connected_components,
    diam_e,
    diameter,
    from_mask,
    load_domain,
    measure,
    perimeter,
    remove_strips,
    replace_components_with_ball,
    rescale,
    save_domain,
)


def cell_square(h: float, side: float = 1.0) -> GridDomain:
    """Axis-aligned square rasterized cell-by-cell; exact for h dividing side."""
    n = round(side / h)
    return from_mask(np.ones((n, n), dtype=bool), h)


def raster_disk(h: float, radius: float) -> GridDomain:
    n = int(math.ceil(2 * radius / h)) + 4
    c = (np.arange(n) - n / 2 + 0.5) * h
    X, Y = np.meshgrid(c, c, indexing="ij")
    return from_mask(X**2 + Y**2 < radius**2, h, origin=(-n / 2 * h, -n / 2 * h))


class TestConstruction:
    def test_margin_enforced(self):
        occ = np.ones((4, 4), dtype=bool)
        with pytest.raises(ValueError, match="margin"):
            GridDomain(h=0.1, origin=(0.0, 0.0), occupancy=occ)

    def test_from_mask_pads_and_shifts_origin(self):
        d = from_mask(np.ones((3, 3), dtype=bool), h=0.5, origin=(1.0, 2.0))
        assert d.shape == (5, 5)
        assert d.origin == (0.5, 1.5)
        # padded cells keep their real coordinates
        assert d.centers(0)[1] == pytest.approx(1.25)

    def test_occupancy_read_only(self):
        d = cell_square(0.25)
        with pytest.raises(ValueError):
            d.occupancy[2, 2] = False

    def test_empty_domain_is_representable(self):
        d = from_mask(np.zeros((3, 3), dtype=bool), h=0.1)
        assert measure(d) == 0.0
        assert perimeter(d) == 0.0


class TestMeasure:
    def test_empty(self):
        assert measure(from_mask(np.zeros((4, 4), bool), 0.1)) == 0.0

    def test_unit_square(self):
        h = 1 / 256
        assert measure(cell_square(h)) == pytest.approx(1.0, abs=4 * h)

    def test_disk(self):
        h = 1 / 512
        r = 1 / math.sqrt(math.pi)
        assert measure(raster_disk(h, r)) == pytest.approx(1.0, rel=0.01)

    def test_exact_integer_multiple(self):
        d = cell_square(1 / 64)
        assert measure(d) == d.cell_count * d.h**2


class TestPerimeter:
    def test_unit_square_exact(self):
        for h in (1 / 16, 1 / 64, 1 / 256):
            assert perimeter(cell_square(h)) == pytest.approx(4.0, abs=1e-12)

    def test_additivity_two_squares(self):
        h = 1 / 32
        n = round(1 / h)
        occ = np.zeros((2 * n + 8, n), dtype=bool)
        occ[:n] = True
        occ[n + 8 :] = True
        assert perimeter(from_mask(occ, h)) == pytest.approx(8.0, abs=1e-12)

    def test_disk_anisotropy_factor(self):
        # face-count perimeter of a disk converges to (4/pi) * 2*pi*R = 8R
        h = 1 / 512
        r = 1 / math.sqrt(math.pi)
        per = perimeter(raster_disk(h, r))
        assert per == pytest.approx(8 * r, rel=0.01)
        assert per == pytest.approx((4 / math.pi) * 2 * math.pi * r, rel=0.01)

    def test_isoperimetric_sanity(self):
        # the face-count perimeter dominates the Euclidean one, so the sharp
        # Euclidean isoperimetric bound N omega_N^{1/N} |.|^{(N-1)/N} holds
        for d in (cell_square(1 / 64), raster_disk(1 / 64, 0.3)):
            lower = 2 * math.sqrt(math.pi) * measure(d) ** 0.5
            assert perimeter(d) >= lower * (1 - 1e-9)


class TestDiameters:
    def test_diam_e_unit_square(self):
        h = 1 / 128
        assert diam_e(cell_square(h), 0) == pytest.approx(1.0, abs=h)
        assert diam_e(cell_square(h), 1) == pytest.approx(1.0, abs=h)

    def test_diam_e_gap_not_counted(self):
        h = 1 / 32
        n = round(1 / h)
        occ = np.zeros((2 * n + 10, n), dtype=bool)
        occ[:n] = True
        occ[n + 10 :] = True
        assert diam_e(from_mask(occ, h), 0) == pytest.approx(2.0, abs=2 * h)

    def test_diam_e_spanning_L_shape(self):
        h = 1 / 64
        n = round(1 / h)
        occ = np.zeros((2 * n, n), dtype=bool)
        occ[:n, :] = True
        occ[n:, : n // 4] = True  # no empty slice along x1
        assert diam_e(from_mask(occ, h), 0) == pytest.approx(2.0, abs=h)

    def test_single_cell(self):
        d = from_mask(np.ones((1, 1), bool), 0.25)
        assert diameter(d) == pytest.approx(0.25 * math.sqrt(2))

    def test_two_far_squares_sum(self):
        h = 1 / 32
        n = round(1 / h)
        occ = np.zeros((2 * n + 10, n), dtype=bool)
        occ[:n] = True
        occ[n + 10 :] = True
        assert diameter(from_mask(occ, h)) == pytest.approx(2 * math.sqrt(2), abs=4 * h)

    def test_unit_disk(self):
        h = 1 / 256
        r = 1 / math.sqrt(math.pi)
        assert diameter(raster_disk(h, r)) == pytest.approx(2 * r, abs=2 * h)

    def test_large_component_hull_path(self):
        # more cells than the brute-force cutoff
        d = cell_square(1 / 64)
        assert diameter(d) == pytest.approx(math.sqrt(2), abs=3 / 64)


class TestComponents:
    def test_connected_square(self):
        assert len(connected_components(cell_square(1 / 16))) == 1

    def test_partition(self):
        h = 1 / 16
        occ = np.zeros((40, 20), dtype=bool)
        occ[1:10, 2:10] = True
        occ[20:30, 5:15] = True
        d = from_mask(occ, h)
        comps = connected_components(d)
        assert len(comps) == 2
        union = np.zeros_like(d.occupancy)
        for c in comps:
            assert not (union & c.occupancy).any()
            union |= c.occupancy
        assert np.array_equal(union, d.occupancy)

    def test_diagonal_cells_are_separate(self):
        occ = np.zeros((4, 4), dtype=bool)
        occ[1, 1] = True
        occ[2, 2] = True
        assert len(connected_components(from_mask(occ, 1.0))) == 2


class TestRemoveStrips:
    def test_disjoint_strip_is_identity(self):
        d = cell_square(1 / 32)
        out = remove_strips(d, [Strip(center=5.0, half_width=0.5)])
        assert out.equals(d)

    def test_monotone_subset(self):
        d = cell_square(1 / 32)
        out = remove_strips(d, [Strip(center=0.5, half_width=0.1)])
        assert not (out.occupancy & ~d.occupancy).any()

    def test_area_arithmetic(self):
        h = 1 / 128
        d = cell_square(h)
        out = remove_strips(d, [Strip(center=0.5, half_width=0.1)])
        assert measure(out) == pytest.approx(0.8, abs=4 * h)

    def test_empty_result_raises(self):
        d = cell_square(1 / 32)
        with pytest.raises(EmptyDomainError):
            remove_strips(d, [Strip(center=0.5, half_width=2.0)])

    def test_overlapping_strips_rejected(self):
        d = cell_square(1 / 32)
        with pytest.raises(ValueError, match="overlap"):
            remove_strips(d, [Strip(0.4, 0.1), Strip(0.45, 0.1)])

    def test_unresolvable_width_rejected(self):
        d = cell_square(1 / 32)
        with pytest.raises(ValueError, match="resolvability"):
            remove_strips(d, [Strip(0.5, d.h)])


class TestBallReplacement:
    def test_nothing_discarded_identity(self):
        d = cell_square(1 / 16)
        assert replace_components_with_ball(d, lambda c: True) is d

    def test_volume_preserved(self):
        h = 1 / 64
        n = round(1 / h)
        occ = np.zeros((2 * n + 10, n), dtype=bool)
        occ[:n] = True
        occ[n + 10 :] = True
        d = from_mask(occ, h)
        x_split = d.origin[0] + (n + 5) * h
        out = replace_components_with_ball(
            d, lambda c: c.centers(0)[c.occupancy.any(axis=1)].min() < x_split
        )
        assert measure(out) == pytest.approx(measure(d), abs=1e-12)
        # discarded square became a single extra component
        assert len(connected_components(out)) == 2

    def test_isoperimetric_gain_on_fine_grid(self):
        # two specks of total measure 0.5 -> one ball; Euclidean perimeter
        # 2*sqrt(0.5*pi) ~ 2.507 beats the pair of squares (~4 * 2 * 0.5)
        h = 1 / 128
        side = round(0.5 / h)  # each square has measure 0.25
        occ = np.zeros((3 * side, side), dtype=bool)
        occ[:side] = True
        occ[2 * side :] = True
        d = from_mask(occ, h)
        out = replace_components_with_ball(d, lambda c: False)
        ball_r = math.sqrt(0.5 / math.pi)
        assert measure(out) == pytest.approx(0.5, abs=1e-12)
        # face-count perimeter of the ball = (4/pi) * Euclidean
        assert perimeter(out) == pytest.approx(8 * ball_r, rel=0.05)
        assert perimeter(out) < perimeter(d)


class TestRescale:
    def test_identity(self):
        d = cell_square(1 / 32)
        assert rescale(d, 1.0).equals(d)

    def test_power_laws_bit_exact_binary_factor(self):
        d = raster_disk(1 / 128, 0.43)
        for t in (2.0, 0.5):
            r = rescale(d, t)
            assert measure(r) == t**2 * measure(d)
            assert perimeter(r) == t * perimeter(d)
            assert diam_e(r, 0) == t * diam_e(d, 0)
            assert diameter(r) == t * diameter(d)

    def test_unit_normalization(self):
        d = raster_disk(1 / 128, 0.3)
        t = measure(d) ** -0.5
        assert measure(rescale(d, t)) == pytest.approx(1.0, abs=1e-12)

    def test_occupancy_shared(self):
        d = cell_square(1 / 16)
        assert rescale(d, 3.0).occupancy is d.occupancy


class TestIO:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        occ = np.zeros((37, 21), dtype=bool)
        occ[1:-1, 1:-1] = rng.random((35, 19)) < 0.4
        d = from_mask(occ, h=1 / 96, origin=(-0.3, 0.7))
        save_domain(d, tmp_path / "dom")
        back = load_domain(tmp_path / "dom")
        assert back.equals(d)

    def test_pbm_header(self, tmp_path):
        d = cell_square(1 / 8)
        pbm, sidecar = save_domain(d, tmp_path / "sq")
        data = pbm.read_bytes()
        assert data.startswith(b"P4\n")
        assert sidecar.read_text().startswith('{"n": 2')
