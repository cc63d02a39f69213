"""Domain surgery: constant selection, strip tests, cut planning, descent.

The strip pipeline removes low-torsion strips orthogonal to the first axis,
discards the components that end up far from the active (high-torsion)
region, replaces them by a single ball of equal measure, and rescales back
to unit measure.  The descent pipeline greedily truncates low-torsion cells
against the penalized energy E + c|.|.  Both return the surgered domain
together with a report that re-measures every guarantee (measure, perimeter,
directional diameter, eigenvalues) instead of assuming it.

All constants are derived from the spectral threshold ``K``, the eigenvalue
count ``k`` and the perimeter bound ``P``; the theoretical values are
astronomically conservative, so a "practical" mode scaling the energy
penalty by a user factor is provided and recorded in every report.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace as dc_replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage, optimize

from eigsurgery.domain import (
    EmptyDomainError,
    GridDomain,
    Strip,
    connected_components,
    diam_e,
    diameter,
    measure,
    perimeter,
    remove_strips,
    replace_components_with_ball,
    rescale,
)
from eigsurgery.inequalities import (
    IneqReport,
    check_positive_energy,
    default_m_table,
    gamma_stability_constant,
)
from eigsurgery.pde import (
    DEFAULT_CG_TOL,
    DEFAULT_EIG_TOL,
    Spectrum,
    TorsionField,
    ball_lambda1,
    eigenvalues,
    embed_union,
    solve_torsion,
    strip_max,
    torsion_energy,
    unit_ball_volume,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SurgeryConstants",
    "SurgeryPlan",
    "SurgeryReport",
    "bounded_surgery",
    "choose_c",
    "choose_cut_constants",
    "choose_strip_constants",
    "component_cleanup",
    "derive_constants",
    "detect_active_region",
    "energy_volume_constant",
    "measure_domain",
    "parse_mode",
    "plan_cuts",
    "select_cut_depth",
    "strip_removal_test",
    "strip_surgery",
    "subsolution_truncate",
    "verify_choicec",
]


# ---------------------------------------------------------------------------
# constants


def parse_mode(mode: str) -> float:
    """Energy-penalty scaling for ``"faithful"`` or ``"practical:<factor>"``."""
    if mode == "faithful":
        return 1.0
    if mode.startswith("practical:"):
        factor = float(mode[len("practical:") :])
        if not factor > 0:
            raise ValueError("practical-mode factor must be positive")
        return factor
    raise ValueError(f"mode must be 'faithful' or 'practical:<factor>', got {mode!r}")


def energy_volume_constant(N: int) -> float:
    """The constant ``(2N)^{(N+2)/2} omega_N / (N (N+2))``; equals 2*pi at N=2."""
    return (2 * N) ** ((N + 2) / 2) * unit_ball_volume(N) / (N * (N + 2))


def choose_c(
    K: float,
    k: int,
    volume: float = 1.0,
    m_table: Mapping[int, float] | None = None,
    N: int = 2,
    k_power: int = 4,
    gamma_constant: float | None = None,
) -> tuple[float, dict[str, Any]]:
    """Energy-penalty constant: the minimum of four admissible bounds.

    The four bounds control, in order: the penalized-energy excess against
    the domain volume, the bare threshold scale, the eigenvalue chain through
    the ratio bound ``M_k``, and the gamma-stability remainder.  The trace
    names the active bound.  ``k_power`` is 4 as written in the source
    formula (the factor ``k^2`` appears twice); pass 2 if the duplication is
    to be read as a typo.
    """
    if not (K > 0 and volume > 0):
        raise ValueError("K and volume must be positive")
    if k < 1:
        raise ValueError("k must be at least 1")
    if k_power not in (2, 4):
        raise ValueError("k_power must be 2 or 4")
    table = dict(m_table) if m_table is not None else default_m_table(k, N)
    if k not in table:
        raise KeyError(f"no ratio bound M_{k} available; provide it in m_table")
    M_k = float(table[k])
    e_const = (
        gamma_constant if gamma_constant is not None else gamma_stability_constant()
    )
    chain = 8 + 6 * N * math.log(2)
    C_N = energy_volume_constant(N)
    bounds = {
        "energy_volume": C_N / (2 * volume * (2 * K) ** ((N + 2) / 2)),
        "scale_threshold": C_N * K ** (-(N + 2) / 2),
        "spectral_chain": ball_lambda1(N)
        / (2 * M_k * chain * e_const * k**k_power * K ** (N / 2 + 2)),
        "stability": 1.0 / (8 * k**2 * e_const * K ** (N / 2 + 1)),
    }
    active = min(bounds, key=lambda name: (bounds[name], name))
    trace = {
        "bounds": {name: float(v) for name, v in sorted(bounds.items())},
        "active": active,
        "M_k": M_k,
        "k_power": k_power,
        "gamma_constant": float(e_const),
        "chain_factor": float(chain),
        "ball_lambda1": ball_lambda1(N),
        "energy_volume_constant": float(C_N),
    }
    return float(bounds[active]), trace


def choose_strip_constants(
    c: float,
    K: float,
    h: float,
    r0: float | None = None,
    window_extent: float | None = None,
    r0_fraction: float = 0.01,
) -> tuple[float, float]:
    """Strip-test constants with ``C0 * r0 = min(c/2, 1/(2K))`` exact.

    ``r0`` defaults to ``max(4h, r0_fraction * window_extent)`` so a strip is
    always at least four cells wide; an explicit ``r0`` below the grid floor
    is rejected rather than silently coarsened.
    """
    if not (c > 0 and K > 0 and h > 0):
        raise ValueError("c, K and h must be positive")
    grid_floor = 4 * h
    if r0 is None:
        geom = r0_fraction * window_extent if window_extent is not None else 0.0
        r0 = max(grid_floor, geom)
    elif r0 < grid_floor * (1 - 1e-12):
        raise ValueError(
            f"r0 = {r0:g} is below the grid floor 4h = {grid_floor:g}; "
            f"refine the grid to h <= {r0 / 4:g} or widen the strip"
        )
    C0 = min(c / 2, 1 / (2 * K)) / r0
    return C0, float(r0)


def choose_cut_constants(
    P: float, C0: float, r0: float, K: float, N: int = 2
) -> tuple[float, float, int]:
    """Mass threshold, slide length and slide count for the cut planner.

    ``m_hat`` is the largest mass for which (a) the rescaled-perimeter slack
    ``(1-m)^{(N-1)/N} >= 1 - m^{(N-1)/N}/(2P)`` holds up to ``m_hat`` and
    (b) the spectral floor of a replaced component survives the final
    rescale: ``(1-m_hat)^{2/N} >= 1/2``.  The slide length gets a 1% safety
    margin over its strict lower bound.
    """
    if not P > 0:
        raise ValueError("perimeter bound P must be positive")
    if C0 * r0 > 1 / (2 * K) * (1 + 1e-9):
        raise ValueError("strip-test product C0*r0 must not exceed 1/(2K)")
    q = (N - 1) / N

    def slack(m: float) -> float:
        return (1 - m) ** q - 1 + m**q / (2 * P)

    hi = 1 - 1e-12
    if slack(hi) >= 0:
        root = hi
    else:
        # slack rises from 0 with infinite slope and is concave, so it has a
        # single positive root; the condition holds on (0, root].
        root = float(optimize.brentq(slack, 1e-12, hi, xtol=1e-15, rtol=1e-14))
    spectral_cap = 1 - 2 ** (-N / 2)
    m_hat = min(root, spectral_cap)
    l0 = 1.01 * 4 * N * m_hat ** (1 / N) / (2 * unit_ball_volume(N) ** (1 / N) - 1)
    p = math.ceil(1 / m_hat)
    return float(m_hat), float(l0), int(p)


@dataclass(frozen=True)
class SurgeryConstants:
    """All derived constants of one surgery run, with provenance trace."""

    N: int
    K: float
    k: int
    P: float
    volume: float
    c: float
    C0: float
    r0: float
    l0: float
    m_hat: float
    beta: float
    p: int
    trace: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        positive = {
            "K": self.K,
            "P": self.P,
            "volume": self.volume,
            "c": self.c,
            "C0": self.C0,
            "r0": self.r0,
            "l0": self.l0,
            "m_hat": self.m_hat,
            "beta": self.beta,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"constant {name} must be positive, got {value!r}")
        if self.N < 1 or self.k < 1 or self.p < 1:
            raise ValueError("N, k and p must be positive integers")
        if not self.m_hat < 1:
            raise ValueError("mass threshold m_hat must be below 1")
        cap = min(self.c / 2, 1 / (2 * self.K))
        if self.C0 * self.r0 > cap * (1 + 1e-9):
            raise ValueError(
                f"strip-test product C0*r0 = {self.C0 * self.r0:g} exceeds "
                f"min(c/2, 1/(2K)) = {cap:g}"
            )
        floor = (
            4
            * self.N
            * self.m_hat ** (1 / self.N)
            / (2 * unit_ball_volume(self.N) ** (1 / self.N) - 1)
        )
        if not self.l0 > floor:
            raise ValueError(f"slide length l0 = {self.l0:g} must exceed {floor:g}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "N": self.N,
            "K": self.K,
            "k": self.k,
            "P": self.P,
            "volume": self.volume,
            "c": self.c,
            "C0": self.C0,
            "r0": self.r0,
            "l0": self.l0,
            "m_hat": self.m_hat,
            "beta": self.beta,
            "p": self.p,
            "trace": self.trace,
        }


def derive_constants(
    K: float,
    k: int,
    P: float,
    h: float,
    volume: float = 1.0,
    m_table: Mapping[int, float] | None = None,
    mode: str = "faithful",
    r0: float | None = None,
    window_extent: float | None = None,
    r0_fraction: float = 0.01,
    k_power: int = 4,
    N: int = 2,
) -> SurgeryConstants:
    """Full constant chain for one run; the practical factor scales c only."""
    factor = parse_mode(mode)
    c_base, trace = choose_c(K, k, volume=volume, m_table=m_table, N=N, k_power=k_power)
    c = c_base * factor
    C0, r0_val = choose_strip_constants(
        c, K, h, r0=r0, window_extent=window_extent, r0_fraction=r0_fraction
    )
    m_hat, l0, p = choose_cut_constants(P, C0, r0_val, K, N=N)
    beta = unit_ball_volume(N) * (N / K) ** (N / 2) * volume
    trace = dict(trace)
    trace.update(
        {
            "mode": mode,
            "practical_factor": factor,
            "c_faithful": c_base,
            "r0_source": "explicit" if r0 is not None else "max(4h, fraction*extent)",
        }
    )
    return SurgeryConstants(
        N=N,
        K=float(K),
        k=int(k),
        P=float(P),
        volume=float(volume),
        c=float(c),
        C0=float(C0),
        r0=float(r0_val),
        l0=float(l0),
        m_hat=float(m_hat),
        beta=float(beta),
        p=int(p),
        trace=trace,
    )


# ---------------------------------------------------------------------------
# strip test and active region


def strip_removal_test(
    f: TorsionField, x1: float, r: float, C0: float, r0: float
) -> bool:
    """True iff the torsion over the doubled strip S_{2r}(x1) stays below C0*r0."""
    if not 0 < r <= r0 * (1 + 1e-12):
        raise ValueError(f"strip half-width r = {r:g} must lie in (0, r0 = {r0:g}]")
    return strip_max(f, Strip(center=x1, half_width=2 * r)) <= C0 * r0


def _merge_intervals(
    intervals: Sequence[tuple[float, float]], gap: float = 0.0, strict: bool = False
) -> list[tuple[float, float]]:
    """Merge sorted intervals whose separation is <= gap (or < gap if strict)."""
    merged: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if merged:
            sep = lo - merged[-1][1]
            if (sep < gap) if strict else (sep <= gap + 1e-12):
                merged[-1][1] = max(merged[-1][1], hi)
                continue
        merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def detect_active_region(
    f: TorsionField, C0: float, r0: float
) -> tuple[tuple[tuple[float, float], ...], int]:
    """Intervals of first-axis positions whose doubled strip carries torsion >= C0*r0.

    Computes the sliding-window maximum of the per-column torsion maximum
    (window half-width 2*r0), thresholds it at C0*r0, and dilates each run of
    hot columns by 2*r0 so the returned intervals are at least 4*r0 wide.
    """
    d = f.domain
    other_axes = tuple(range(1, f.values.ndim))
    colmax = f.values.max(axis=other_axes) if other_axes else f.values
    win = int(math.floor(2 * r0 / d.h + 1e-9))
    hot = (
        ndimage.maximum_filter1d(colmax, size=2 * win + 1, mode="constant", cval=0.0)
        >= C0 * r0
    )
    idx = np.flatnonzero(hot)
    if idx.size == 0:
        return (), 0
    xs = d.centers(0)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [idx.size - 1]))
    raw = [
        (float(xs[idx[i0]] - 2 * r0), float(xs[idx[i1]] + 2 * r0))
        for i0, i1 in zip(starts, ends)
    ]
    merged = _merge_intervals(raw)
    return tuple(merged), len(merged)


# ---------------------------------------------------------------------------
# cut planning


@dataclass(frozen=True)
class SurgeryPlan:
    """Where to cut: active region, gaps, slide index, strips and depth."""

    active_region: tuple[tuple[float, float], ...]
    segments: tuple[tuple[float, float], ...]
    slide_index: int
    anchors: tuple[tuple[float, float], ...]  # (strip center at t=0, direction)
    strips_to_remove: tuple[Strip, ...]
    cut_depth: float
    t_max: float
    y_mass: float
    mass_removed: float = 0.0
    sigma: float = 0.0
    p_inside: float = 0.0
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        order = sorted(self.strips_to_remove, key=lambda s: s.center)
        for a, b in zip(order, order[1:]):
            if b.lo < a.hi - 1e-12:
                raise ValueError("planned strips overlap")

    def to_dict(self) -> dict[str, Any]:
        return {
            "active_region": [list(iv) for iv in self.active_region],
            "segments": [list(iv) for iv in self.segments],
            "slide_index": self.slide_index,
            "anchors": [[base, direction] for base, direction in self.anchors],
            "strips": [[s.center, s.half_width] for s in self.strips_to_remove],
            "cut_depth": self.cut_depth,
            "t_max": self.t_max,
            "y_mass": self.y_mass,
            "mass_removed": self.mass_removed,
            "sigma": self.sigma,
            "p_inside": self.p_inside,
            "flags": list(self.flags),
        }


def _strips_at(
    anchors: Sequence[tuple[float, float]], r0: float, t: float
) -> tuple[Strip, ...]:
    return tuple(
        Strip(center=base + direction * t, half_width=r0)
        for base, direction in anchors
    )


def _column_mass(d: GridDomain) -> np.ndarray:
    other_axes = tuple(range(1, d.occupancy.ndim))
    return d.occupancy.sum(axis=other_axes) * d.h**d.N


def plan_cuts(
    d: GridDomain,
    X: Sequence[tuple[float, float]],
    constants: SurgeryConstants,
) -> SurgeryPlan:
    """Plan the strips: merge short gaps, choose the slide, place anchors.

    Gaps of the active region no longer than ``8 r0 + 2 l0`` are absorbed
    into it.  The collar mass around the cut positions is evaluated at slide
    0 first; only if it exceeds ``m_hat`` are near-critical gaps absorbed
    (those without room for ``p`` slides) and the smallest feasible slide in
    ``[0, p-1]`` searched, falling back to the minimal-mass slide with a
    flag.  Strip centers are emitted as (base, direction) anchors; the cut
    depth ``t`` shifts each strip by ``direction * t`` away from the active
    region and is chosen later by :func:`select_cut_depth`.
    """
    r0, l0, m_hat, p = constants.r0, constants.l0, constants.m_hat, constants.p
    delta = 4 * r0 + l0
    xs = d.centers(0)
    col_mass = _column_mass(d)
    occupied = col_mass > 0
    vol = float(col_mass.sum())
    flags: list[str] = []

    def window_mass(windows: Sequence[tuple[float, float]]) -> float:
        hit = np.zeros(xs.shape, dtype=bool)
        for lo, hi in windows:
            hit |= (xs >= lo) & (xs <= hi)
        return float(col_mass[hit].sum())

    if not X:
        flags.append("empty_active_region")
        xlo = float(xs[occupied].min())
        xhi = float(xs[occupied].max())
        active: list[tuple[float, float]] = []
        segments: list[tuple[float, float]] = []
        slide = 0
        y_mass = 0.0
        anchors = ((xlo - 2 * r0, -1.0), (xhi + 2 * r0, 1.0))
    else:
        active = _merge_intervals(X, gap=8 * r0 + 2 * l0)

        def collar_windows(
            gaps: Sequence[tuple[float, float]], lo_edge: float, hi_edge: float, s: int
        ) -> list[tuple[float, float]]:
            shift = s * delta
            windows = [
                (lo_edge - shift - delta, lo_edge - shift),
                (hi_edge + shift, hi_edge + shift + delta),
            ]
            for a, b in gaps:
                windows.append((a + shift, a + shift + delta))
                windows.append((b - shift - delta, b - shift))
            return windows

        def gaps_of(iv: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
            return [(iv[i][1], iv[i + 1][0]) for i in range(len(iv) - 1)]

        segments = gaps_of(active)
        slide = 0
        y_mass = window_mass(
            collar_windows(segments, active[0][0], active[-1][1], 0)
        )
        if y_mass > m_hat * vol:
            flags.append("slide_search")
            # absorb gaps without room for p slides, then search s = 0..p-1
            active = _merge_intervals(active, gap=2 * p * delta, strict=True)
            segments = gaps_of(active)
            best_s, best_mass = 0, math.inf
            found = False
            for s in range(p):
                mass_s = window_mass(
                    collar_windows(segments, active[0][0], active[-1][1], s)
                )
                if mass_s < best_mass:
                    best_s, best_mass = s, mass_s
                if mass_s <= m_hat * vol:
                    slide, y_mass = s, mass_s
                    found = True
                    break
            if not found:
                slide, y_mass = best_s, best_mass
                flags.append("mass_threshold_unmet")

        shift = slide * delta
        anchor_list = [(active[0][0] - shift - 2 * r0, -1.0)]
        for a, b in segments:
            anchor_list.append((a + shift + 2 * r0, 1.0))
            anchor_list.append((b - shift - 2 * r0, -1.0))
        anchor_list.append((active[-1][1] + shift + 2 * r0, 1.0))
        anchors = tuple(anchor_list)

    plan = SurgeryPlan(
        active_region=tuple(active),
        segments=tuple(segments),
        slide_index=slide,
        anchors=anchors,
        strips_to_remove=_strips_at(anchors, r0, 0.0),
        cut_depth=0.0,
        t_max=l0,
        y_mass=y_mass,
        flags=tuple(flags),
    )
    logger.info(
        "cut plan: %d active interval(s), %d gap(s), slide %d, collar mass %.3g",
        len(plan.active_region),
        len(plan.segments),
        plan.slide_index,
        plan.y_mass,
    )
    return plan


def _discard_column_mask(
    xs: np.ndarray, strips: Sequence[Strip]
) -> np.ndarray:
    """Columns removed or orphaned by the strips: tails, strips and gap middles.

    The strips alternate direction (away from the active region), so the
    discarded set per gap is the single interval from the low strip's lower
    edge to the high strip's upper edge, and the two tails extend to
    infinity.  Comparisons reuse the strips' own interval arithmetic so the
    mask matches :func:`eigsurgery.domain.remove_strips` bit for bit.
    """
    order = sorted(strips, key=lambda s: s.center)
    mask = xs <= order[0].hi
    mask |= xs >= order[-1].lo
    for lo_strip, hi_strip in zip(order[1::2], order[2::2]):
        mask |= (xs >= lo_strip.lo) & (xs <= hi_strip.hi)
    return mask


def select_cut_depth(
    d: GridDomain,
    plan: SurgeryPlan,
    P: float | None = None,
) -> tuple[float, dict[str, Any]]:
    """Scan cut depths t in {0, h, ..., t_max} and pick by the perimeter ledger.

    For each t the removed mass m(t), the fresh cut surface sigma(t) and the
    boundary surface p(t) carried away are computed exactly on the raster;
    the rescaled perimeter is ``(1 - m)^{-(N-1)/N} (Per - p + sigma)``.  The
    smallest rescaled perimeter not exceeding Per wins (smallest t breaks
    ties); if no depth qualifies the minimizer is returned flagged.
    """
    if len(plan.anchors) < 2 or len(plan.anchors) % 2 != 0:
        raise ValueError("plan must carry an even number (>= 2) of strip anchors")
    r0 = plan.strips_to_remove[0].half_width
    h = d.h
    N = d.N
    xs = d.centers(0)
    col_mass = _column_mass(d)
    occ = d.occupancy
    other_axes = tuple(range(1, occ.ndim))
    # faces between consecutive columns, and boundary faces owned per column
    adjacent = (occ[:-1] & occ[1:]).sum(axis=other_axes).astype(np.int64)
    neighbor_count = np.zeros(occ.shape, dtype=np.int64)
    for axis in range(occ.ndim):
        for shift in (1, -1):
            rolled = np.roll(occ, shift, axis=axis)
            edge = [slice(None)] * occ.ndim
            edge[axis] = 0 if shift == 1 else -1
            rolled[tuple(edge)] = False
            neighbor_count += rolled
    own_faces = ((2 * N - neighbor_count) * occ).sum(axis=other_axes)
    per_before = perimeter(d)
    vol = float(col_mass.sum())
    face_unit = h ** (N - 1)

    t_grid = np.arange(0.0, plan.t_max + h / 2, h)
    masses, sigmas, p_inner, kept_pers, rescaled = [], [], [], [], []
    for t in t_grid:
        strips = _strips_at(plan.anchors, r0, float(t))
        discard = _discard_column_mask(xs, strips)
        m = float(col_mass[discard].sum())
        cut_faces = int(adjacent[discard[:-1] != discard[1:]].sum())
        p_faces = int(own_faces[discard].sum())
        sigma = cut_faces * face_unit
        p_in = p_faces * face_unit
        kept = per_before - p_in + sigma
        frac = m / vol
        value = (
            (1 - frac) ** (-(N - 1) / N) * kept if frac < 1 else math.inf
        )
        masses.append(m)
        sigmas.append(sigma)
        p_inner.append(p_in)
        kept_pers.append(kept)
        rescaled.append(value)

    resc = np.asarray(rescaled)
    feasible = resc <= per_before * (1 + 1e-12)
    flagged = not bool(feasible.any())
    if flagged:
        idx = int(np.argmin(resc))
    else:
        idx = int(np.argmin(np.where(feasible, resc, np.inf)))
    ledger = {
        "t": [float(t) for t in t_grid],
        "mass": masses,
        "sigma": sigmas,
        "p_inside": p_inner,
        "kept_perimeter": kept_pers,
        "rescaled_perimeter": rescaled,
        "perimeter_before": per_before,
        "volume": vol,
        "P": P,
        "chosen_index": idx,
        "chosen_t": float(t_grid[idx]),
        "flagged": flagged,
    }
    return float(t_grid[idx]), ledger


# ---------------------------------------------------------------------------
# component cleanup


def component_cleanup(
    d: GridDomain,
    X: Sequence[tuple[float, float]],
    f: TorsionField,
    C0: float,
    r0: float,
    K: float,
    m_hat: float,
    c: float | None = None,
) -> tuple[GridDomain, dict[str, Any]]:
    """Replace components whose projection misses the active region by one ball.

    Every such component must carry torsion at most ``C0 * r0`` (measured on
    the parent field, which dominates the component's own torsion exactly);
    a violating component is kept and flagged.  For each replaced component
    the spectral floor ``(1/max w) (1 - m_hat)^{2/N} >= K`` and, when ``c``
    is given, the positive penalized energy ``E + c|.|  >= 0`` are recorded.
    """

    def projection_hits_active(sub: GridDomain) -> bool:
        other_axes = tuple(range(1, sub.occupancy.ndim))
        cols = sub.occupancy.any(axis=other_axes)
        xs = sub.centers(0)[cols]
        lo_c, hi_c = float(xs.min()), float(xs.max())
        return any(hi_c >= lo and lo_c <= hi for lo, hi in X)

    threshold = C0 * r0
    checks: list[IneqReport] = []
    flags: list[str] = []
    discarded = 0
    discarded_measure = 0.0
    for comp in connected_components(d):
        if projection_hits_active(comp):
            continue
        wmax = float(f.values[comp.occupancy].max())
        comp_measure = measure(comp)
        if wmax > threshold:
            flags.append(
                f"component_torsion_above_threshold:{wmax:.6g}>{threshold:.6g}"
            )
            checks.append(
                IneqReport.compare(
                    "component_torsion_cap",
                    wmax,
                    threshold,
                    0.0,
                    {"component_measure": comp_measure},
                    note="component kept: torsion exceeds the removal threshold",
                )
            )
            continue
        discarded += 1
        discarded_measure += comp_measure
        lam1_floor = (1.0 / wmax if wmax > 0 else math.inf) * (1 - m_hat) ** (2 / d.N)
        checks.append(
            IneqReport.compare(
                "component_spectral_floor",
                K,
                lam1_floor,
                1e-12,
                {"component_measure": comp_measure, "max_torsion": wmax},
            )
        )
        if c is not None:
            checks.append(check_positive_energy(comp, f, c, threshold))

    if discarded == 0:
        return d, {
            "discarded_components": 0,
            "discarded_measure": 0.0,
            "checks": checks,
            "flags": flags,
        }

    def keep(sub: GridDomain) -> bool:
        if projection_hits_active(sub):
            return True
        return float(f.values[sub.occupancy].max()) > threshold

    out = replace_components_with_ball(d, keep)
    logger.info(
        "component cleanup: replaced %d component(s) of measure %.6g by a ball",
        discarded,
        discarded_measure,
    )
    return out, {
        "discarded_components": discarded,
        "discarded_measure": discarded_measure,
        "checks": checks,
        "flags": flags,
    }


# ---------------------------------------------------------------------------
# reports


def measure_domain(
    d: GridDomain, k: int, eig_tol: float = DEFAULT_EIG_TOL, seed: int = 0
) -> dict[str, Any]:
    """Geometry and low spectrum of a domain, as a plain dictionary."""
    s = eigenvalues(d, k=k, tol=eig_tol, seed=seed)
    return {
        "measure": measure(d),
        "perimeter": perimeter(d),
        "diam_e1": diam_e(d, 0),
        "diameter": diameter(d),
        "spectrum": [float(v) for v in s.eigenvalues],
    }


@dataclass(frozen=True)
class SurgeryReport:
    """Everything one surgery run measured, checked and decided."""

    kind: str  # "strip" or "bounded"
    mode: str
    constants: SurgeryConstants
    plan: SurgeryPlan | None
    before: dict[str, Any]
    after: dict[str, Any]
    diameter_bound: dict[str, Any]
    checks: tuple[IneqReport, ...]
    flags: tuple[str, ...]
    verdict: str  # "pass", "no-op" or "fail"
    ledger: dict[str, Any] = field(default_factory=dict)
    log: tuple[dict[str, Any], ...] = ()

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "no-op")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "mode": self.mode,
            "constants": self.constants.to_dict(),
            "plan": self.plan.to_dict() if self.plan is not None else None,
            "before": self.before,
            "after": self.after,
            "diameter_bound": self.diameter_bound,
            "checks": [c.to_dict() for c in self.checks],
            "flags": list(self.flags),
            "verdict": self.verdict,
            "ledger": self.ledger,
            "log": list(self.log),
        }


def _normalized(d: GridDomain) -> GridDomain:
    return rescale(d, measure(d) ** (-1 / d.N))


def _occupied_extent(d: GridDomain) -> float:
    other_axes = tuple(range(1, d.occupancy.ndim))
    cols = d.occupancy.any(axis=other_axes)
    xs = d.centers(0)[cols]
    return float(xs.max() - xs.min() + d.h)


# ---------------------------------------------------------------------------
# strip pipeline


def strip_surgery(
    d: GridDomain,
    K: float,
    k: int,
    P: float | None = None,
    m_table: Mapping[int, float] | None = None,
    mode: str = "faithful",
    r0: float | None = None,
    r0_fraction: float = 0.01,
    k_power: int = 4,
    cg_tol: float = DEFAULT_CG_TOL,
    eig_tol: float = DEFAULT_EIG_TOL,
    seed: int = 0,
    eig_guard: float = 1e-3,
) -> tuple[GridDomain, SurgeryReport]:
    """Cut low-torsion strips, replace far components by a ball, rescale.

    Returns the surgered unit-measure domain and a report that verifies the
    guarantees directly: exact unit measure, perimeter non-increase (on
    unflagged cut depths), eigenvalue non-increase for every index whose
    starting eigenvalue is at most ``K``, and the directional-diameter bound
    computed from the plan.  A run that changes nothing is a verified no-op.
    """
    d0 = _normalized(d)
    per0 = perimeter(d0)
    if P is None:
        P = per0 * 1.02
    elif per0 > P * (1 + 1e-9):
        raise ValueError(
            f"perimeter {per0:g} exceeds the stated bound P = {P:g}"
        )
    flags: list[str] = []
    constants = derive_constants(
        K,
        k,
        P,
        d0.h,
        volume=measure(d0),
        m_table=m_table,
        mode=mode,
        r0=r0,
        window_extent=_occupied_extent(d0),
        r0_fraction=r0_fraction,
        k_power=k_power,
        N=d0.N,
    )
    f = solve_torsion(d0, tol=cg_tol)
    X, n_active = detect_active_region(f, constants.C0, constants.r0)
    logger.info("active region: %d interval(s)", n_active)
    plan = plan_cuts(d0, X, constants)
    flags.extend(plan.flags)
    t, ledger = select_cut_depth(d0, plan, P)
    if ledger["flagged"]:
        flags.append("cut_depth_infeasible")

    checks: list[IneqReport] = []
    strips = _strips_at(plan.anchors, constants.r0, t)
    kept_strips = []
    for s in strips:
        top = strip_max(f, Strip(center=s.center, half_width=2 * constants.r0))
        ok = top <= constants.C0 * constants.r0
        checks.append(
            IneqReport.compare(
                "strip_test",
                top,
                constants.C0 * constants.r0,
                0.0,
                {"center": s.center, "half_width": s.half_width},
            )
        )
        if ok:
            kept_strips.append(s)
        else:
            flags.append(f"strip_test_failed:{s.center:.6g}")

    if kept_strips:
        try:
            d_cut = remove_strips(d0, kept_strips)
        except EmptyDomainError:
            flags.append("removal_would_empty_domain")
            d_cut = d0
            kept_strips = []
    else:
        d_cut = d0

    # net mass actually removed (the slab middles come back as the ball)
    strip_mass = measure(d0) - measure(d_cut)
    if strip_mass > constants.m_hat * measure(d0) * (1 + 1e-12):
        flags.append("strip_mass_exceeds_threshold")
    idx = ledger["chosen_index"]
    plan = dc_replace(
        plan,
        cut_depth=t,
        strips_to_remove=tuple(kept_strips),
        mass_removed=strip_mass,
        sigma=ledger["sigma"][idx],
        p_inside=ledger["p_inside"][idx],
        flags=tuple(flags),
    )

    d_clean, cleanup = component_cleanup(
        d_cut, plan.active_region, f, constants.C0, constants.r0, K,
        constants.m_hat, c=constants.c,
    )
    checks.extend(cleanup["checks"])
    flags.extend(cleanup["flags"])
    d_out = _normalized(d_clean)

    before = measure_domain(d0, k, eig_tol, seed)
    after = measure_domain(d_out, k, eig_tol, seed)

    n_gaps = len(plan.segments)
    h1_active = sum(hi - lo for lo, hi in plan.active_region)
    delta = 4 * constants.r0 + constants.l0
    base = (
        2
        * (
            h1_active
            + n_gaps * (8 * constants.r0 + 2 * constants.l0)
            + 2 * constants.r0 * (n_gaps + 2)
        )
        + 2 * unit_ball_volume(d0.N) ** (-1 / d0.N)
    )
    slide_allowance = 4 * n_gaps * constants.p * delta
    diameter_bound = {
        "base": base,
        "slide_allowance": slide_allowance,
        "total": base + slide_allowance,
        "rescaled_total": (base + slide_allowance)
        * (1 - constants.m_hat) ** (-1 / d0.N),
    }

    checks.append(
        IneqReport.compare(
            "unit_measure",
            abs(after["measure"] - 1.0),
            1e-12,
            0.0,
            {"measure": after["measure"]},
        )
    )
    if ledger["flagged"]:
        checks.append(
            IneqReport.precondition_unmet(
                "perimeter_non_increase",
                {"before": before["perimeter"], "after": after["perimeter"]},
                "cut-depth scan found no depth within the perimeter budget",
            )
        )
    else:
        checks.append(
            IneqReport.compare(
                "perimeter_non_increase",
                after["perimeter"],
                before["perimeter"],
                1e-12,
                {"cut_depth": t},
            )
        )
    for i in range(1, k + 1):
        lam_before = before["spectrum"][i - 1]
        name = f"eigenvalue_{i}_non_increase"
        if lam_before <= K:
            checks.append(
                IneqReport.compare(
                    name,
                    after["spectrum"][i - 1],
                    lam_before,
                    eig_guard,
                    {"index": i, "K": K},
                )
            )
        else:
            checks.append(
                IneqReport.precondition_unmet(
                    name,
                    {
                        "index": i,
                        "K": K,
                        "before": lam_before,
                        "after": after["spectrum"][i - 1],
                    },
                    f"eigenvalue {i} starts above K: outside the guarantee",
                )
            )
    checks.append(
        IneqReport.compare(
            "diam_e1_bound",
            after["diam_e1"],
            diameter_bound["total"],
            1e-12,
            {
                "base": base,
                "rescaled_total": diameter_bound["rescaled_total"],
            },
        )
    )

    all_pass = all(c.passed for c in checks)
    no_op = d_out.equals(d0)
    verdict = ("no-op" if no_op else "pass") if all_pass else "fail"
    report = SurgeryReport(
        kind="strip",
        mode=mode,
        constants=constants,
        plan=plan,
        before=before,
        after=after,
        diameter_bound=diameter_bound,
        checks=tuple(checks),
        flags=tuple(dict.fromkeys(flags)),
        verdict=verdict,
        ledger=ledger,
    )
    logger.info("strip surgery verdict: %s (%d checks)", verdict, len(checks))
    return d_out, report


# ---------------------------------------------------------------------------
# descent pipeline


def subsolution_truncate(
    d: GridDomain,
    c: float,
    r0: float | None = None,
    tol: float = DEFAULT_CG_TOL,
    max_moves: int = 50,
) -> tuple[GridDomain, tuple[dict[str, Any], ...]]:
    """Greedy monotone descent of E + c|.| over sublevel and edge-strip moves.

    Per iteration the candidate moves are the removal of the sublevel set
    {w < tau} for tau on the geometric ladder ``max(w)/2, max(w)/4, ...``
    (capping tau at half the maximum keeps the torsion peak within a factor
    two per move) and the removal of either boundary strip of width ``r0``
    along the first axis.  The best strictly-decreasing move is accepted;
    descent stops when none exists or after ``max_moves`` accepted moves.
    The result is a subsolution with respect to this move class only.
    """
    if c < 0:
        raise ValueError("penalty constant c must be nonnegative")
    current = d
    f = solve_torsion(current, tol=tol)
    value = torsion_energy(f) + c * measure(current)
    log: list[dict[str, Any]] = []
    for _ in range(max_moves):
        wmax = f.max
        if wmax <= 0:
            break
        candidates: list[tuple[str, float | None, GridDomain]] = []
        prev_removed = -1
        for j in range(20):
            tau = wmax / 2 * 2.0 ** (-j)
            occ_new = current.occupancy & (f.values >= tau)
            removed = current.cell_count - int(occ_new.sum())
            if removed == 0:
                break
            if removed == prev_removed or not occ_new.any():
                prev_removed = removed
                continue
            prev_removed = removed
            candidates.append(
                ("sublevel", tau, GridDomain(current.h, current.origin, occ_new))
            )
        if r0 is not None and r0 >= 4 * current.h * (1 - 1e-12):
            other_axes = tuple(range(1, current.occupancy.ndim))
            cols = current.occupancy.any(axis=other_axes)
            xs = current.centers(0)[cols]
            edge_strips = (
                ("edge_strip_low", Strip(float(xs.min()) + r0 / 2, r0 / 2)),
                ("edge_strip_high", Strip(float(xs.max()) - r0 / 2, r0 / 2)),
            )
            for kind, strip in edge_strips:
                try:
                    trimmed = remove_strips(current, [strip])
                except (ValueError, EmptyDomainError):
                    continue
                if trimmed.cell_count < current.cell_count:
                    candidates.append((kind, None, trimmed))

        best: tuple[str, float | None, GridDomain, TorsionField, float] | None = None
        for kind, tau, cand in candidates:
            fc = solve_torsion(cand, tol=tol)
            val = torsion_energy(fc) + c * measure(cand)
            if val < value and (best is None or val < best[4]):
                best = (kind, tau, cand, fc, val)
        if best is None:
            break
        kind, tau, cand, fc, val = best
        log.append(
            {
                "move": kind,
                "tau": tau,
                "value_before": value,
                "value_after": val,
                "delta": val - value,
                "cells_removed": current.cell_count - cand.cell_count,
            }
        )
        current, f, value = cand, fc, val
    logger.info("descent accepted %d move(s)", len(log))
    return current, tuple(log)


def verify_choicec(
    before: GridDomain,
    after: GridDomain,
    k: int,
    K: float,
    m_table: Mapping[int, float] | None = None,
    s_before: Spectrum | None = None,
    s_after: Spectrum | None = None,
    rel_tol: float = 1e-6,
) -> list[IneqReport]:
    """Eigenvalue guarantees of the penalized minimizer, per index 1..k.

    For each index the rescaled monotonicity
    ``lambda_i(after) |after|^{2/N} <= lambda_i(before) |before|^{2/N}``
    (reported only while ``lambda_i(before) <= K``) and the growth sandwich
    ``lambda_i(before) <= lambda_i(after) <= (8 + 6 N log 2) M_i
    lambda_i(before)`` are checked.  Requires ``after`` to be contained in
    ``before`` cell-wise (both pre-rescale).
    """
    a_mask, b_mask = embed_union(after, before, after.occupancy, before.occupancy)
    if (a_mask & ~b_mask).any():
        raise ValueError("after-domain must be contained in the before-domain")
    N = before.N
    table = dict(m_table) if m_table is not None else default_m_table(k, N)
    sb = s_before if s_before is not None else eigenvalues(before, k=k)
    sa = s_after if s_after is not None else eigenvalues(after, k=k)
    vol_b, vol_a = measure(before), measure(after)
    chain = 8 + 6 * N * math.log(2)
    reports: list[IneqReport] = []
    for i in range(1, k + 1):
        if i not in table:
            raise KeyError(f"no ratio bound M_{i} available; provide it in m_table")
        ctx = {"index": i, "K": K, "before": sb[i], "after": sa[i]}
        if sb[i] <= K:
            reports.append(
                IneqReport.compare(
                    f"rescaled_eigenvalue_{i}",
                    sa[i] * vol_a ** (2 / N),
                    sb[i] * vol_b ** (2 / N),
                    rel_tol,
                    ctx,
                )
            )
        else:
            reports.append(
                IneqReport.precondition_unmet(
                    f"rescaled_eigenvalue_{i}",
                    ctx,
                    f"eigenvalue {i} starts above K: outside the guarantee",
                )
            )
        upper = chain * table[i] * sb[i]
        lower_margin = sa[i] - sb[i]
        upper_report = IneqReport.compare(
            f"eigenvalue_growth_{i}",
            sa[i],
            upper,
            rel_tol,
            {**ctx, "chain_factor": chain, "M_i": table[i], "lower_margin": lower_margin},
            note="lower side lambda_i(before) <= lambda_i(after) folded into margin",
        )
        margin = min(upper_report.margin, lower_margin)
        reports.append(
            IneqReport(
                name=upper_report.name,
                lhs=upper_report.lhs,
                rhs=upper_report.rhs,
                margin=margin,
                tolerance=upper_report.tolerance,
                passed=bool(margin >= -upper_report.tolerance),
                context=upper_report.context,
                note=upper_report.note,
            )
        )
    return reports


def bounded_surgery(
    d: GridDomain,
    K: float,
    k: int,
    m_table: Mapping[int, float] | None = None,
    mode: str = "faithful",
    r0: float | None = None,
    r0_fraction: float = 0.01,
    k_power: int = 4,
    cg_tol: float = DEFAULT_CG_TOL,
    eig_tol: float = DEFAULT_EIG_TOL,
    seed: int = 0,
    max_moves: int = 50,
) -> tuple[GridDomain, SurgeryReport]:
    """Energy descent with the derived penalty, then rescale to unit measure.

    The report asserts strict monotonicity of every accepted move, the
    penalized-energy comparison against the input, the torsion-peak floor
    ``max w(after) >= max w(before) / 2``, the volume floor ``beta``, and the
    per-index eigenvalue guarantees of :func:`verify_choicec`.  Diameter and
    perimeter are measured and reported without an a-priori bound.
    """
    d0 = _normalized(d)
    per0 = perimeter(d0)
    constants = derive_constants(
        K,
        k,
        per0 * 1.02,
        d0.h,
        volume=measure(d0),
        m_table=m_table,
        mode=mode,
        r0=r0,
        window_extent=_occupied_extent(d0),
        r0_fraction=r0_fraction,
        k_power=k_power,
        N=d0.N,
    )
    f0 = solve_torsion(d0, tol=cg_tol)
    d_desc, log = subsolution_truncate(
        d0, constants.c, r0=constants.r0, tol=cg_tol, max_moves=max_moves
    )
    f1 = solve_torsion(d_desc, tol=cg_tol)
    d_out = _normalized(d_desc)

    before = measure_domain(d0, k, eig_tol, seed)
    after = measure_domain(d_out, k, eig_tol, seed)

    checks: list[IneqReport] = []
    if log:
        worst_delta = max(entry["delta"] for entry in log)
        checks.append(
            IneqReport(
                name="descent_monotone",
                lhs=worst_delta,
                rhs=0.0,
                margin=-worst_delta,
                tolerance=0.0,
                passed=bool(worst_delta < 0),
                context={"moves": len(log)},
            )
        )
    else:
        checks.append(
            IneqReport.precondition_unmet(
                "descent_monotone", {"moves": 0}, "no descent move accepted"
            )
        )
    value_before = torsion_energy(f0) + constants.c * measure(d0)
    value_after = torsion_energy(f1) + constants.c * measure(d_desc)
    checks.append(
        IneqReport.compare(
            "energy_comparison",
            value_after,
            value_before,
            max(2 * cg_tol, 1e-12),
            {"c": constants.c},
        )
    )
    checks.append(
        IneqReport.compare(
            "torsion_floor",
            0.5 * f0.max,
            f1.max,
            1e-12,
            {"before_max": f0.max, "after_max": f1.max},
        )
    )
    checks.append(
        IneqReport.compare(
            "volume_floor",
            constants.beta,
            measure(d_desc),
            1e-12,
            {"beta": constants.beta, "mode": mode},
        )
    )
    checks.extend(
        verify_choicec(d0, d_desc, k, K, m_table=m_table, s_before=None, s_after=None)
    )

    all_pass = all(c.passed for c in checks)
    no_op = d_out.equals(d0)
    verdict = ("no-op" if no_op else "pass") if all_pass else "fail"
    report = SurgeryReport(
        kind="bounded",
        mode=mode,
        constants=constants,
        plan=None,
        before=before,
        after=after,
        diameter_bound={
            "measured_diameter": after["diameter"],
            "measured_diam_e1": after["diam_e1"],
            "measured_perimeter": after["perimeter"],
        },
        checks=tuple(checks),
        flags=(),
        verdict=verdict,
        log=log,
    )
    logger.info("bounded surgery verdict: %s (%d moves)", verdict, len(log))
    return d_out, report
