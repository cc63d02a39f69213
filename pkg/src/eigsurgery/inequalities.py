"""Executable checkers for the spectral inequalities the surgery relies on.

Each checker returns a structured :class:`IneqReport` carrying both sides of
the inequality in the convention ``lhs <= rhs``; ``margin = rhs - lhs`` and
the check passes iff ``margin >= -tolerance`` (tolerances are relative to
the magnitude of the compared quantities).  Checkers whose hypotheses are
not met report ``precondition unmet`` instead of a failure.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import special

from eigsurgery.domain import GridDomain, measure
from eigsurgery.pde import (
    Spectrum,
    TorsionField,
    eigenvalues,
    gamma_distance,
    solve_torsion,
    torsion_energy,
    unit_ball_volume,
)

logger = logging.getLogger(__name__)

__all__ = [
    "IneqReport",
    "check_berezin_li_yau",
    "check_density_lemma",
    "check_gamma_stability",
    "check_positive_energy",
    "check_ratio_bound",
    "check_saint_venant",
    "check_talenti",
    "check_vdb",
    "default_m_table",
    "default_tolerance",
    "gamma_stability_constant",
    "li_yau_constant",
    "max_index_below",
    "reports_to_csv",
    "reports_to_jsonl",
]


def default_tolerance(h: float) -> float:
    """Relative check tolerance: max(1e-6, 5h).

    Geometric quantities carry O(h) raster error and spectral ones O(h^2);
    the 5h term absorbs both at the grid sizes used here.
    """
    return max(1e-6, 5.0 * h)


@dataclass(frozen=True)
class IneqReport:
    """Outcome of one inequality check, in the convention ``lhs <= rhs``."""

    name: str
    lhs: float
    rhs: float
    margin: float
    tolerance: float
    passed: bool
    context: dict[str, Any] = field(default_factory=dict)
    note: str = ""

    @classmethod
    def compare(
        cls,
        name: str,
        lhs: float,
        rhs: float,
        rel_tol: float,
        context: dict[str, Any] | None = None,
        note: str = "",
    ) -> "IneqReport":
        margin = rhs - lhs
        scale = max(abs(lhs), abs(rhs))
        tolerance = rel_tol * scale
        return cls(
            name=name,
            lhs=float(lhs),
            rhs=float(rhs),
            margin=float(margin),
            tolerance=float(tolerance),
            passed=bool(margin >= -tolerance),
            context=dict(context or {}),
            note=note,
        )

    @classmethod
    def precondition_unmet(
        cls, name: str, context: dict[str, Any] | None = None, note: str = ""
    ) -> "IneqReport":
        """A vacuous report for checks whose hypotheses do not hold."""
        return cls(
            name=name,
            lhs=0.0,
            rhs=0.0,
            margin=0.0,
            tolerance=0.0,
            passed=True,
            context=dict(context or {}),
            note=note or "precondition unmet",
        )

    @property
    def relative_margin(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return self.margin / scale if scale > 0 else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "context": self.context,
            "note": self.note,
        }


def _context(d: GridDomain, **extra: Any) -> dict[str, Any]:
    ctx: dict[str, Any] = {"h": d.h, "N": d.N, "measure": measure(d)}
    ctx.update(extra)
    return ctx


def _field(d: GridDomain, f: TorsionField | None) -> TorsionField:
    return f if f is not None else solve_torsion(d)


def check_saint_venant(
    d: GridDomain, f: TorsionField | None = None, rel_tol: float | None = None
) -> IneqReport:
    """Saint-Venant: the ball maximizes the L1 norm of the torsion function.

    ``integral(w) <= |O|^{(N+2)/N} * omega_N^{-2/N} / (N (N+2))``.
    """
    f = _field(d, f)
    N = d.N
    vol = measure(d)
    omega = unit_ball_volume(N)
    rhs = vol ** ((N + 2) / N) * omega ** (-2 / N) / (N * (N + 2))
    return IneqReport.compare(
        "saint_venant",
        f.integral,
        rhs,
        rel_tol if rel_tol is not None else default_tolerance(d.h),
        _context(d),
    )


def check_talenti(
    d: GridDomain, f: TorsionField | None = None, rel_tol: float | None = None
) -> IneqReport:
    """Talenti: ``max w <= (|O| / omega_N)^{2/N} / (2N)``."""
    f = _field(d, f)
    N = d.N
    rhs = (measure(d) / unit_ball_volume(N)) ** (2 / N) / (2 * N)
    return IneqReport.compare(
        "talenti",
        f.max,
        rhs,
        rel_tol if rel_tol is not None else default_tolerance(d.h),
        _context(d),
    )


def check_vdb(
    d: GridDomain,
    f: TorsionField | None = None,
    spectrum: Spectrum | None = None,
    rel_tol: float | None = None,
) -> IneqReport:
    """Double-sided torsion/eigenvalue bound.

    ``1/lambda_1 <= max w <= (4 + 3 N log 2) / lambda_1``.  The report's
    lhs/rhs form the upper side; the lower side is folded into the margin
    (the minimum of the two margins decides the verdict) and recorded in the
    context.
    """
    f = _field(d, f)
    spectrum = spectrum if spectrum is not None else eigenvalues(d, k=1)
    lam1 = spectrum[1]
    lower = 1.0 / lam1
    upper = (4 + 3 * d.N * math.log(2)) / lam1
    rel = rel_tol if rel_tol is not None else default_tolerance(d.h)
    up = IneqReport.compare("vdb", f.max, upper, rel, _context(d, lambda1=lam1, lower=lower))
    low = IneqReport.compare("vdb_lower", lower, f.max, rel)
    margin = min(up.margin, low.margin)
    tolerance = min(up.tolerance, low.tolerance)
    return IneqReport(
        name="vdb",
        lhs=up.lhs,
        rhs=up.rhs,
        margin=margin,
        tolerance=tolerance,
        passed=bool(margin >= -tolerance),
        context=up.context,
        note="double-sided: margin is the worse of the two sides",
    )


def li_yau_constant(N: int) -> float:
    """The explicit Berezin-Li-Yau constant ``(N/(N+2)) 4 pi^2 omega_N^{-2/N}``.

    At N=2 this evaluates to ``2 pi``.
    """
    return (N / (N + 2)) * 4 * math.pi**2 * unit_ball_volume(N) ** (-2 / N)


def check_berezin_li_yau(
    d: GridDomain,
    k: int,
    spectrum: Spectrum | None = None,
    constant: float | None = None,
    rel_tol: float | None = None,
) -> IneqReport:
    """Berezin-Li-Yau: ``lambda_k >= C_N (k / |O|)^{2/N}``."""
    spectrum = spectrum if spectrum is not None else eigenvalues(d, k=k)
    C = constant if constant is not None else li_yau_constant(d.N)
    lhs = C * (k / measure(d)) ** (2 / d.N)
    return IneqReport.compare(
        "berezin_li_yau",
        lhs,
        spectrum[k],
        rel_tol if rel_tol is not None else default_tolerance(d.h),
        _context(d, k=k, constant=C),
    )


def max_index_below(
    K: float, volume: float, N: int = 2, constant: float | None = None
) -> int:
    """Counting bound: at most ``(K / C_N)^{N/2} |O|`` eigenvalues below K."""
    if K <= 0:
        return 0
    C = constant if constant is not None else li_yau_constant(N)
    return int(math.floor((K / C) ** (N / 2) * volume))


def default_m_table(k_max: int, N: int = 2) -> dict[int, float]:
    """Eigenvalue-ratio bounds ``lambda_k / lambda_1 <= M_k``.

    ``M_1 = 1``; ``M_2 = (j_{N/2,1} / j_{N/2-1,1})^2`` is the sharp
    Ashbaugh-Benguria bound.  For k > 2 no sharp constants are available and
    the documented literature default chains the Payne-Polya-Weinberger
    neighbor bound ``lambda_{k+1}/lambda_k <= 1 + 4/N``:
    ``M_k = M_2 * (1 + 4/N)^{k-2}``.  Callers may override any entry.
    """
    if N == 2:
        j_upper = float(special.jn_zeros(1, 1)[0])
        j_lower = float(special.jn_zeros(0, 1)[0])
    else:
        from eigsurgery.pde import _bessel_first_zero

        j_upper = _bessel_first_zero(N / 2)
        j_lower = _bessel_first_zero(N / 2 - 1)
    m2 = (j_upper / j_lower) ** 2
    table = {1: 1.0}
    if k_max >= 2:
        table[2] = m2
    for k in range(3, k_max + 1):
        table[k] = m2 * (1 + 4 / N) ** (k - 2)
    return table


def check_ratio_bound(
    d: GridDomain,
    k: int,
    m_table: Mapping[int, float] | None = None,
    spectrum: Spectrum | None = None,
    rel_tol: float | None = None,
) -> IneqReport:
    """Ratio bound ``1 <= lambda_k / lambda_1 <= M_k``."""
    table = dict(m_table) if m_table is not None else default_m_table(k, d.N)
    if k not in table:
        raise KeyError(f"no ratio bound M_{k} available; provide it in m_table")
    spectrum = spectrum if spectrum is not None else eigenvalues(d, k=k)
    ratio = spectrum[k] / spectrum[1]
    return IneqReport.compare(
        "ratio_bound",
        ratio,
        table[k],
        rel_tol if rel_tol is not None else default_tolerance(d.h),
        _context(d, k=k, M_k=table[k]),
    )


def gamma_stability_constant(interpretation: str = "e**(1/(4*pi))") -> float:
    """The eigenvalue-stability constant written ``e^{1/4pi}`` in the source.

    The notation is ambiguous; the default reads it as ``e^(1/(4*pi))``
    (about 1.0828), with ``e^(1/4) * pi`` selectable.
    """
    if interpretation == "e**(1/(4*pi))":
        return math.exp(1 / (4 * math.pi))
    if interpretation == "e**(1/4)*pi":
        return math.exp(0.25) * math.pi
    raise ValueError(f"unknown interpretation {interpretation!r}")


def check_gamma_stability(
    d1: GridDomain,
    d2: GridDomain,
    k: int,
    rel_tol: float | None = None,
    constant: float | None = None,
    s1: Spectrum | None = None,
    s2: Spectrum | None = None,
    f1: TorsionField | None = None,
    f2: TorsionField | None = None,
) -> IneqReport:
    """Gamma-stability of eigenvalues for nested domains ``d1 <= d2``:

    ``|1/lambda_k(d1) - 1/lambda_k(d2)|
        <= 2 k^2 e^{1/(4 pi)} lambda_k(d2)^{N/2} d_gamma(d1, d2)``.
    """
    from eigsurgery.pde import embed_union

    a1, a2 = embed_union(d1, d2, d1.occupancy, d2.occupancy)
    if (a1 & ~a2).any():
        raise ValueError("gamma stability requires d1 to be contained in d2")
    s1 = s1 if s1 is not None else eigenvalues(d1, k=k)
    s2 = s2 if s2 is not None else eigenvalues(d2, k=k)
    dg = gamma_distance(d1, d2, f1=f1, f2=f2)
    const = constant if constant is not None else gamma_stability_constant()
    lhs = abs(1 / s1[k] - 1 / s2[k])
    rhs = 2 * k**2 * const * s2[k] ** (d1.N / 2) * dg
    return IneqReport.compare(
        "gamma_stability",
        lhs,
        rhs,
        rel_tol if rel_tol is not None else default_tolerance(d1.h),
        _context(d1, k=k, gamma_distance=dg),
    )


def check_density_lemma(
    f: TorsionField,
    x: Sequence[float],
    theta: float,
    delta: float,
    rel_tol: float | None = None,
) -> IneqReport:
    """Density of torsion mass near a point where the function is large.

    If ``w(x) >= theta`` and ``delta <= delta_0 = sqrt(theta (N+2))`` then
    ``integral_{B_delta(x)} w >= theta omega_N delta^N / 2``.
    """
    d = f.domain
    N = d.N
    delta0 = math.sqrt(theta * (N + 2))
    ctx = _context(d, theta=theta, delta=delta, delta0=delta0)
    idx = tuple(
        int(round((xi - oi) / d.h - 0.5)) for xi, oi in zip(x, d.origin)
    )
    inside = all(0 <= i < s for i, s in zip(idx, d.shape))
    w_at_x = float(f.values[idx]) if inside else 0.0
    if delta > delta0:
        return IneqReport.precondition_unmet(
            "density_lemma", ctx, f"delta {delta:g} exceeds delta0 {delta0:g}"
        )
    if w_at_x < theta:
        return IneqReport.precondition_unmet(
            "density_lemma", ctx, f"w(x) = {w_at_x:g} below theta = {theta:g}"
        )
    grids = [d.centers(axis) for axis in range(N)]
    mesh = np.meshgrid(*grids, indexing="ij")
    dist2 = sum((m - xi) ** 2 for m, xi in zip(mesh, x))
    ball_mask = dist2 < delta**2
    integral = float(f.values[ball_mask].sum()) * d.h**N
    lhs = theta * unit_ball_volume(N) * delta**N / 2
    return IneqReport.compare(
        "density_lemma",
        lhs,
        integral,
        rel_tol if rel_tol is not None else default_tolerance(d.h),
        ctx,
    )


def check_positive_energy(
    dA: GridDomain,
    parent_field: TorsionField,
    c: float,
    C0r0: float,
    rel_tol: float | None = None,
) -> IneqReport:
    """Positive penalized energy of low-torsion subsets.

    If ``A`` is a subset of the parent domain with ``max_A w_parent <= C0 r0``
    then ``E(A) + c |A| >= 0``.
    """
    from eigsurgery.pde import embed_union

    parent = parent_field.domain
    ctx = _context(dA, c=c, C0r0=C0r0)
    if dA.cell_count == 0:
        return IneqReport.compare("positive_energy", 0.0, 0.0, 0.0, ctx, note="empty A")
    a_mask, p_mask = embed_union(dA, parent, dA.occupancy, parent.occupancy)
    if (a_mask & ~p_mask).any():
        raise ValueError("A must be a subset of the parent domain")
    _, w_parent = embed_union(dA, parent, dA.occupancy * 0.0, parent_field.values)
    w_on_A = float(w_parent[a_mask].max(initial=0.0))
    if w_on_A > C0r0:
        return IneqReport.precondition_unmet(
            "positive_energy",
            ctx,
            f"max w on A = {w_on_A:g} exceeds C0 r0 = {C0r0:g}",
        )
    energy = torsion_energy(solve_torsion(dA))
    value = energy + c * measure(dA)
    return IneqReport.compare(
        "positive_energy",
        0.0,
        value,
        rel_tol if rel_tol is not None else default_tolerance(dA.h),
        ctx,
    )


def reports_to_jsonl(reports: Iterable[IneqReport], path: str | Path) -> Path:
    """Append-friendly JSON-lines serialization (one report per line)."""
    out = Path(path)
    with open(out, "w", encoding="ascii") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return out


def reports_to_csv(reports: Iterable[IneqReport], path: str | Path) -> Path:
    """Summary CSV with one row per report."""
    out = Path(path)
    with open(out, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "domain", "h", "lhs", "rhs", "margin", "pass"])
        for r in reports:
            writer.writerow(
                [
                    r.name,
                    r.context.get("domain", ""),
                    repr(r.context.get("h", "")),
                    repr(r.lhs),
                    repr(r.rhs),
                    repr(r.margin),
                    r.passed,
                ]
            )
    return out
