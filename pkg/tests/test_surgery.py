"""Surgery: constant chains, cut planning, perimeter ledger, both pipelines."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy import ndimage

from eigsurgery.corpus import ball, blob_union, dumbbell, square, tube
from eigsurgery.domain import (
    GridDomain,
    Strip,
    connected_components,
    from_mask,
    measure,
    perimeter,
    remove_strips,
)
from eigsurgery.pde import (
    TorsionField,
    eigenvalues,
    solve_torsion,
    strip_max,
    torsion_energy,
)
from eigsurgery.surgery import (
    SurgeryConstants,
    SurgeryPlan,
    bounded_surgery,
    choose_c,
    choose_cut_constants,
    choose_strip_constants,
    component_cleanup,
    derive_constants,
    detect_active_region,
    energy_volume_constant,
    measure_domain,
    parse_mode,
    plan_cuts,
    select_cut_depth,
    strip_removal_test,
    strip_surgery,
    subsolution_truncate,
    verify_choicec,
)


@pytest.fixture(scope="module")
def cut_dumbbell():
    """A dumbbell whose neck actually gets cut: grid fine enough for slide 0."""
    d = dumbbell(1 / 192, bulb_radius=0.42, neck_length=1.8)
    out, report = strip_surgery(d, K=200.0, k=3, mode="practical:1e12")
    return d, out, report


@pytest.fixture(scope="module")
def disk_field():
    d = ball(1 / 96)
    return solve_torsion(d)


@pytest.fixture(scope="module")
def blob():
    return blob_union(1 / 64, seed=3)


def normalized(d: GridDomain) -> GridDomain:
    from eigsurgery.domain import rescale

    return rescale(d, measure(d) ** (-1 / d.N))


class TestChooseC:
    def test_reference_digits(self):
        c, trace = choose_c(100.0, 1)
        b = trace["bounds"]
        assert b["energy_volume"] == pytest.approx(7.853981633974483e-05, rel=1e-13)
        assert b["scale_threshold"] == pytest.approx(6.283185307179586e-04, rel=1e-13)
        assert b["spectral_chain"] == pytest.approx(5.141220995903675e-07, rel=1e-13)
        assert b["stability"] == pytest.approx(1.1543830896538855e-05, rel=1e-13)
        assert trace["active"] == "spectral_chain"
        assert c == b["spectral_chain"]

    def test_planar_energy_volume_constant(self):
        assert energy_volume_constant(2) == pytest.approx(2 * math.pi, rel=1e-14)

    def test_monotone_in_threshold(self):
        values = [choose_c(K, 2)[0] for K in (50.0, 100.0, 200.0, 400.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_volume_only_scales_one_bound(self):
        _, t1 = choose_c(100.0, 1, volume=1.0)
        _, t2 = choose_c(100.0, 1, volume=2.0)
        assert t2["bounds"]["energy_volume"] == pytest.approx(
            t1["bounds"]["energy_volume"] / 2, rel=1e-13
        )
        for name in ("scale_threshold", "spectral_chain", "stability"):
            assert t2["bounds"][name] == t1["bounds"][name]

    def test_k_power_switch(self):
        _, t4 = choose_c(100.0, 3, k_power=4)
        _, t2 = choose_c(100.0, 3, k_power=2)
        assert t2["bounds"]["spectral_chain"] == pytest.approx(
            t4["bounds"]["spectral_chain"] * 9, rel=1e-13
        )

    def test_errors(self):
        with pytest.raises(KeyError):
            choose_c(100.0, 2, m_table={1: 1.0})
        with pytest.raises(ValueError):
            choose_c(100.0, 1, k_power=3)
        with pytest.raises(ValueError):
            choose_c(-1.0, 1)
        with pytest.raises(ValueError):
            choose_c(100.0, 0)


class TestChooseStripConstants:
    def test_formula_example(self):
        C0, r0 = choose_strip_constants(1e-6, 100.0, h=0.001, r0=0.02)
        assert r0 == 0.02
        assert C0 == pytest.approx(2.5e-5, rel=1e-13)

    def test_min_switches_branch(self):
        C0, r0 = choose_strip_constants(1e9, 100.0, h=0.001, r0=0.02)
        assert C0 * r0 == pytest.approx(1 / 200.0, rel=1e-14)

    def test_product_exact(self):
        for c in (1e-8, 1e-2, 1e3):
            C0, r0 = choose_strip_constants(c, 50.0, h=0.001, r0=0.05)
            assert C0 * r0 == pytest.approx(min(c / 2, 1 / 100.0), rel=1e-14)

    def test_grid_floor_error(self):
        with pytest.raises(ValueError, match="grid"):
            choose_strip_constants(1.0, 100.0, h=0.01, r0=0.02)

    def test_default_radius_rule(self):
        _, r0 = choose_strip_constants(1.0, 100.0, h=0.001, window_extent=10.0)
        assert r0 == pytest.approx(0.1)  # fraction rule wins
        _, r0 = choose_strip_constants(1.0, 100.0, h=0.01, window_extent=1.0)
        assert r0 == pytest.approx(0.04)  # grid floor wins


class TestChooseCutConstants:
    def test_root_satisfies_condition(self):
        P = 5.0
        m_hat, l0, p = choose_cut_constants(P, 1.0, 0.0025, 200.0)
        q = 0.5
        slack = lambda m: (1 - m) ** q - 1 + m**q / (2 * P)
        assert abs(slack(m_hat)) < 1e-12
        for m in np.linspace(1e-6, m_hat, 20):
            assert slack(m) >= -1e-12
        assert slack(min(m_hat * 1.5, 0.999)) < 0

    def test_slide_length_formula(self):
        m_hat, l0, _ = choose_cut_constants(5.0, 1.0, 0.0025, 200.0)
        expected = 1.01 * 8 * math.sqrt(m_hat) / (2 * math.sqrt(math.pi) - 1)
        assert l0 == pytest.approx(expected, rel=1e-13)

    def test_slide_count_is_ceiling(self):
        m_hat, _, p = choose_cut_constants(5.0, 1.0, 0.0025, 200.0)
        assert p == math.ceil(1 / m_hat)

    def test_spectral_cap_for_small_perimeter_bound(self):
        # At P = 1/2 the perimeter condition holds everywhere, so the cap
        # (1 - m)^{2/N} >= 1/2 binds.
        m_hat, _, p = choose_cut_constants(0.5, 1.0, 0.0025, 200.0)
        assert m_hat == pytest.approx(0.5, rel=1e-12)
        assert p == 2

    def test_tightens_with_perimeter(self):
        m5 = choose_cut_constants(5.0, 1.0, 0.0025, 200.0)[0]
        m20 = choose_cut_constants(20.0, 1.0, 0.0025, 200.0)[0]
        assert m20 < m5

    def test_rejects_oversized_strip_product(self):
        with pytest.raises(ValueError):
            choose_cut_constants(5.0, 1.0, 0.1, 200.0)


class TestDeriveConstants:
    def test_chain_consistency(self):
        const = derive_constants(100.0, 2, P=8.0, h=1 / 256, window_extent=3.0)
        assert const.C0 * const.r0 == pytest.approx(
            min(const.c / 2, 1 / 200.0), rel=1e-12
        )
        assert const.beta == pytest.approx(math.pi * (2 / 100.0), rel=1e-13)
        assert const.p == math.ceil(1 / const.m_hat)
        assert const.trace["practical_factor"] == 1.0

    def test_practical_mode_scales_penalty_only(self):
        base = derive_constants(100.0, 2, P=8.0, h=1 / 256, window_extent=3.0)
        prac = derive_constants(
            100.0, 2, P=8.0, h=1 / 256, window_extent=3.0, mode="practical:1e3"
        )
        assert prac.c == pytest.approx(base.c * 1e3, rel=1e-13)
        assert prac.trace["c_faithful"] == base.c
        assert prac.K == base.K

    def test_validation_rejects_inconsistent_constants(self):
        const = derive_constants(100.0, 2, P=8.0, h=1 / 256, window_extent=3.0)
        fields = const.to_dict()
        fields.pop("trace")
        with pytest.raises(ValueError, match="C0"):
            SurgeryConstants(**{**fields, "C0": fields["C0"] * 10})
        with pytest.raises(ValueError, match="l0"):
            SurgeryConstants(**{**fields, "l0": fields["l0"] / 100})
        with pytest.raises(ValueError, match="m_hat"):
            SurgeryConstants(**{**fields, "m_hat": 1.5})
        with pytest.raises(ValueError, match="positive"):
            SurgeryConstants(**{**fields, "r0": -1.0})


class TestParseMode:
    def test_values(self):
        assert parse_mode("faithful") == 1.0
        assert parse_mode("practical:2.5") == 2.5
        assert parse_mode("practical:1e9") == 1e9

    def test_errors(self):
        for bad in ("practical:-1", "practical:0", "practical:abc", "bogus"):
            with pytest.raises(ValueError):
                parse_mode(bad)


class TestStripRemovalTest:
    def test_bulk_strip_rejected(self, disk_field):
        r0 = 4 / 96
        assert not strip_removal_test(disk_field, 0.0, r0, C0=0.06, r0=r0)

    def test_empty_space_accepted(self, disk_field):
        r0 = 4 / 96
        lo = disk_field.domain.centers(0)[0]
        assert strip_removal_test(disk_field, lo - 1.0, r0, C0=0.06, r0=r0)

    def test_width_guard(self, disk_field):
        with pytest.raises(ValueError):
            strip_removal_test(disk_field, 0.0, 0.1, C0=0.06, r0=0.05)


class TestDetectActiveRegion:
    def test_zero_field(self, disk_field):
        f = TorsionField(disk_field.domain, np.zeros_like(disk_field.values), 0.0)
        X, n = detect_active_region(f, C0=0.06, r0=4 / 96)
        assert X == () and n == 0

    def test_disk_single_interval(self, disk_field):
        d = disk_field.domain
        r0 = 4 / 96
        X, n = detect_active_region(disk_field, C0=0.06, r0=r0)
        assert n == 1
        cols = d.occupancy.any(axis=1)
        xs = d.centers(0)[cols]
        assert X[0][0] <= xs.min() and X[0][1] >= xs.max()

    def test_two_far_disks(self):
        h = 1 / 64
        n_cells = int(5.0 / h)
        ii, jj = np.meshgrid(
            (np.arange(n_cells) + 0.5) * h,
            (np.arange(int(1.0 / h)) + 0.5) * h,
            indexing="ij",
        )
        mask = ((ii - 0.5) ** 2 + (jj - 0.5) ** 2 < 0.3**2) | (
            (ii - 4.5) ** 2 + (jj - 0.5) ** 2 < 0.3**2
        )
        d = from_mask(mask, h)
        f = solve_torsion(d)
        X, n = detect_active_region(f, C0=0.06, r0=4 * h)
        assert n == 2
        assert X[0][1] < X[1][0]

    def test_huge_threshold_empty(self, disk_field):
        X, n = detect_active_region(disk_field, C0=1e6, r0=4 / 96)
        assert X == () and n == 0


class TestPlanCuts:
    def test_dumbbell_plan_shape(self, cut_dumbbell):
        _, _, report = cut_dumbbell
        plan = report.plan
        const = report.constants
        assert len(plan.segments) == 1
        assert plan.slide_index == 0
        assert plan.y_mass <= const.m_hat
        dirs = [direction for _, direction in sorted(plan.anchors)]
        assert dirs == [-1.0, 1.0, -1.0, 1.0]

    def test_doubled_strips_avoid_active_region(self, cut_dumbbell):
        _, _, report = cut_dumbbell
        r0 = report.constants.r0
        for base, direction in report.plan.anchors:
            center = base + direction * report.plan.cut_depth
            for lo, hi in report.plan.active_region:
                assert center + 2 * r0 <= lo + 1e-9 or center - 2 * r0 >= hi - 1e-9

    def test_short_gap_merged(self):
        d = dumbbell(1 / 64)  # neck 1.5: gap below 8 r0 + 2 l0 at this grid
        d0 = normalized(d)
        const = derive_constants(
            200.0,
            3,
            perimeter(d0) * 1.02,
            d0.h,
            mode="practical:1e12",
            window_extent=5.0,
        )
        f = solve_torsion(d0)
        X, n = detect_active_region(f, const.C0, const.r0)
        assert n == 2
        plan = plan_cuts(d0, X, const)
        assert len(plan.active_region) == 1
        assert plan.segments == ()

    def test_empty_active_region(self):
        d = tube(1 / 64)
        const = derive_constants(
            200.0, 2, 20.0, d.h, mode="practical:1e12", window_extent=8.0
        )
        plan = plan_cuts(d, (), const)
        assert "empty_active_region" in plan.flags
        assert plan.segments == ()
        cols = d.occupancy.any(axis=1)
        xs = d.centers(0)[cols]
        bases = sorted(base for base, _ in plan.anchors)
        assert bases[0] == pytest.approx(xs.min() - 2 * const.r0)
        assert bases[1] == pytest.approx(xs.max() + 2 * const.r0)

    def test_overlapping_strips_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            SurgeryPlan(
                active_region=(),
                segments=(),
                slide_index=0,
                anchors=((0.0, -1.0), (0.05, 1.0)),
                strips_to_remove=(Strip(0.0, 0.06), Strip(0.05, 0.06)),
                cut_depth=0.0,
                t_max=0.3,
                y_mass=0.0,
            )


class TestSelectCutDepth:
    def test_sigma_is_mass_derivative(self, cut_dumbbell):
        _, _, report = cut_dumbbell
        led = report.ledger
        step = led["t"][1] - led["t"][0]
        riemann = sum(led["sigma"][:-1]) * step
        drop = led["mass"][0] - led["mass"][-1]
        assert abs(riemann - drop) <= 2 * step

    def test_kept_perimeter_identity_exact(self, cut_dumbbell):
        d, _, report = cut_dumbbell
        d0 = normalized(d)
        led = report.ledger
        xs = d0.centers(0)
        from eigsurgery.surgery import _discard_column_mask, _strips_at

        for i in (0, len(led["t"]) // 2, len(led["t"]) - 1):
            strips = _strips_at(
                report.plan.anchors, report.constants.r0, led["t"][i]
            )
            discard = _discard_column_mask(xs, strips)
            occ = d0.occupancy & ~discard[:, None]
            direct = perimeter(GridDomain(d0.h, d0.origin, occ))
            assert abs(direct - led["kept_perimeter"][i]) < 1e-9

    def test_chosen_depth_is_feasible_minimum(self, cut_dumbbell):
        _, _, report = cut_dumbbell
        led = report.ledger
        assert not led["flagged"]
        chosen = led["rescaled_perimeter"][led["chosen_index"]]
        feasible = [
            v
            for v in led["rescaled_perimeter"]
            if v <= led["perimeter_before"] * (1 + 1e-12)
        ]
        assert feasible and chosen == min(feasible)

    def test_empty_space_strips_give_zero_depth(self):
        d = tube(1 / 64)
        const = derive_constants(
            200.0, 2, 20.0, d.h, mode="practical:1e12", window_extent=8.0
        )
        plan = plan_cuts(d, (), const)
        t, led = select_cut_depth(d, plan)
        assert t == 0.0
        assert all(m == 0.0 for m in led["mass"])
        assert all(s == 0.0 for s in led["sigma"])


class TestComponentCleanup:
    @staticmethod
    def _two_squares(h=1 / 64):
        n = int(round(0.4 / h))
        gap = int(round(2.0 / h))
        mask = np.zeros((n + gap + n, n), dtype=bool)
        mask[:n] = True
        mask[n + gap :] = True
        return from_mask(mask, h), n, gap

    def test_far_component_replaced_by_ball(self):
        d, n, gap = self._two_squares()
        f = solve_torsion(d)
        X = ((0.0, 0.5),)  # covers the left square only
        out, info = component_cleanup(d, X, f, C0=1.0, r0=0.1, K=1.0, m_hat=0.1, c=1.0)
        assert info["discarded_components"] == 1
        assert info["discarded_measure"] == pytest.approx(0.4 * 0.4, rel=0.1)
        assert measure(out) == pytest.approx(measure(d), rel=1e-9)
        assert len(connected_components(out)) == 2
        names = [r.name for r in info["checks"]]
        assert "component_spectral_floor" in names
        assert "positive_energy" in names
        assert all(r.passed for r in info["checks"])

    def test_high_torsion_component_kept_and_flagged(self):
        d, _, _ = self._two_squares()
        f = solve_torsion(d)
        X = ((0.0, 0.5),)
        out, info = component_cleanup(
            d, X, f, C0=1e-6, r0=0.1, K=1.0, m_hat=0.1
        )
        assert out.equals(d)
        assert info["discarded_components"] == 0
        assert any("component_torsion_above_threshold" in fl for fl in info["flags"])
        assert any(not r.passed for r in info["checks"])

    def test_everything_active_is_noop(self):
        d, _, _ = self._two_squares()
        f = solve_torsion(d)
        X = ((-1.0, 10.0),)
        out, info = component_cleanup(d, X, f, C0=1.0, r0=0.1, K=1.0, m_hat=0.1)
        assert out is d
        assert info["discarded_components"] == 0


class TestStripSurgery:
    def test_dumbbell_guarantees(self, cut_dumbbell):
        d, out, report = cut_dumbbell
        assert report.verdict == "pass"
        assert report.passed
        assert report.flags == ()
        assert abs(report.after["measure"] - 1.0) <= 1e-12
        assert report.after["perimeter"] < report.before["perimeter"] - 1.0
        for lam_a, lam_b in zip(report.after["spectrum"], report.before["spectrum"]):
            assert lam_a <= lam_b * (1 + 1e-3)
        assert report.after["diam_e1"] <= report.diameter_bound["total"]
        assert report.plan.mass_removed <= report.constants.m_hat
        assert len(connected_components(out)) == 3
        assert report.after["diam_e1"] < report.before["diam_e1"]

    def test_disk_is_verified_noop(self):
        d = ball(1 / 96)
        out, report = strip_surgery(d, K=100.0, k=1, mode="practical:1e9")
        assert report.verdict == "no-op"
        assert out.equals(normalized(d))
        assert all(c.passed for c in report.checks)

    def test_tube_becomes_ball(self):
        d = tube(1 / 128)
        out, report = strip_surgery(d, K=200.0, k=2, mode="practical:1e12")
        assert report.verdict == "pass"
        assert "empty_active_region" in report.flags
        assert len(connected_components(out)) == 1
        assert report.after["perimeter"] < report.before["perimeter"]
        assert report.after["diam_e1"] <= report.diameter_bound["total"]
        # whole spectrum above K: the eigenvalue guarantee is vacuous
        eig_checks = [c for c in report.checks if c.name.startswith("eigenvalue_")]
        assert eig_checks and all("outside the guarantee" in c.note for c in eig_checks)

    def test_perimeter_bound_guard(self):
        with pytest.raises(ValueError, match="perimeter"):
            strip_surgery(ball(1 / 96), K=100.0, k=1, P=1.0)

    def test_report_serializes(self, cut_dumbbell):
        _, _, report = cut_dumbbell
        blob = json.dumps(report.to_dict(), sort_keys=True)
        assert '"verdict": "pass"' in blob


class TestSubsolutionTruncate:
    def test_zero_penalty_is_identity(self, blob):
        out, log = subsolution_truncate(blob, 0.0)
        assert out.equals(blob)
        assert log == ()

    def test_strict_descent(self, blob):
        out, log = subsolution_truncate(blob, 0.01, r0=4 / 64)
        assert len(log) >= 1
        assert all(entry["delta"] < 0 for entry in log)
        values = [log[0]["value_before"]] + [entry["value_after"] for entry in log]
        assert all(b < a for a, b in zip(values, values[1:]))
        assert all(entry["cells_removed"] > 0 for entry in log)
        assert measure(out) < measure(blob)
        known = {"sublevel", "edge_strip_low", "edge_strip_high"}
        assert all(entry["move"] in known for entry in log)

    def test_negative_penalty_rejected(self, blob):
        with pytest.raises(ValueError):
            subsolution_truncate(blob, -1.0)


class TestVerifyChoicec:
    def test_equal_domains_equalities(self):
        d = square(1 / 64)
        reports = verify_choicec(d, d, k=2, K=100.0)
        assert all(r.passed for r in reports)
        rescaled = [r for r in reports if r.name.startswith("rescaled")]
        assert all(r.margin == 0.0 for r in rescaled)

    def test_whisker_trim_passes(self):
        # A thin whisker adds volume but no spectrum, so removing it lowers
        # the scale-invariant product lambda_i * |domain|^{2/N}.
        h = 1 / 64
        n = 64
        mask = np.zeros((n + 32, n), dtype=bool)
        mask[:n, :] = True
        mask[n:, n // 2 - 1 : n // 2 + 1] = True
        whiskered = from_mask(mask, h)
        bare = from_mask(mask[:n], h)
        reports = verify_choicec(whiskered, bare, k=2, K=100.0)
        assert all(r.passed for r in reports)
        rescaled = [r for r in reports if r.name.startswith("rescaled")]
        assert all(r.margin > 0 for r in rescaled)

    def test_non_subset_rejected(self):
        a = square(1 / 64)
        b = from_mask(np.ones((32, 32), dtype=bool), 1 / 64, origin=(5.0, 5.0))
        with pytest.raises(ValueError, match="contained"):
            verify_choicec(a, b, k=1, K=100.0)


class TestBoundedSurgery:
    def test_faithful_is_verified_noop(self, blob):
        out, report = bounded_surgery(blob, K=100.0, k=2, mode="faithful")
        assert report.verdict == "no-op"
        assert report.log == ()
        assert out.equals(normalized(blob))
        by_name = {c.name: c for c in report.checks}
        assert by_name["energy_comparison"].margin == 0.0
        assert by_name["torsion_floor"].passed
        assert by_name["volume_floor"].passed
        assert all(c.passed for c in report.checks)

    def test_practical_descent_guarantees(self, blob):
        out, report = bounded_surgery(blob, K=100.0, k=2, mode="practical:1e6")
        assert report.verdict == "pass"
        assert len(report.log) >= 1
        by_name = {c.name: c for c in report.checks}
        assert by_name["descent_monotone"].lhs < 0
        assert by_name["volume_floor"].passed
        assert by_name["torsion_floor"].passed
        assert abs(measure(out) - 1.0) <= 1e-12
        assert all(c.passed for c in report.checks)

    def test_measure_domain_fields(self, blob):
        info = measure_domain(blob, k=2)
        assert set(info) == {"measure", "perimeter", "diam_e1", "diameter", "spectrum"}
        assert len(info["spectrum"]) == 2
        assert info["spectrum"][0] < info["spectrum"][1]


class TestWindowedMaxMatchesStripMax:
    def test_hundred_sampled_strips(self, disk_field):
        f = disk_field
        d = f.domain
        r0 = 5.3 / 96  # deliberately not a multiple of h
        colmax = f.values.max(axis=1)
        win = int(math.floor(2 * r0 / d.h + 1e-9))
        filtered = ndimage.maximum_filter1d(
            colmax, size=2 * win + 1, mode="constant", cval=0.0
        )
        xs = d.centers(0)
        rng = np.random.default_rng(0)
        idx = rng.integers(0, xs.size, size=120)
        for j in idx:
            assert filtered[j] == strip_max(f, Strip(float(xs[j]), 2 * r0))
