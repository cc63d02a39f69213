"""Batch runner: corpus suites, report files, and grid-convergence studies.

A suite run takes a list of corpus specs and a shared :class:`RunConfig`,
generates each domain, gates it through the basic torsion/eigenvalue sanity
checks, evaluates the inequality battery, performs strip surgery, and emits
one report row per domain.  Failures are isolated per domain: a crash in one
generator or solver becomes an error row and the rest of the corpus still
runs.  Rows are merged in corpus order (by domain id), never in completion
order, so repeated runs of the same corpus produce byte-identical reports.

Reports are persisted as append-only JSON lines plus a summary CSV that is
regenerated from the full JSONL log after every append.  No timestamps or
hostnames are recorded anywhere.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from eigsurgery.corpus import CorpusSpec, generate
from eigsurgery.domain import measure, perimeter
from eigsurgery.inequalities import (
    IneqReport,
    check_berezin_li_yau,
    check_ratio_bound,
    check_saint_venant,
    check_talenti,
    check_vdb,
    default_m_table,
)
from eigsurgery.pde import (
    DEFAULT_CG_TOL,
    DEFAULT_EIG_TOL,
    eigenvalues,
    solve_torsion,
)
from eigsurgery.surgery import parse_mode, strip_surgery

logger = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "SuiteResult",
    "run_one",
    "run_suite",
    "write_reports",
    "summary_table",
    "convergence_study",
    "richardson",
]


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Shared knobs for every run in a batch.

    ``P = None`` derives the perimeter budget per domain as 1.02 times the
    measured perimeter of the unit-measure normalization, so every corpus
    member is admissible by construction.  ``mode`` is either ``"faithful"``
    or ``"practical:<factor>"`` with factor > 1; the factor scales only the
    energy-penalty constant and is recorded in each report.
    """

    K: float = 100.0
    k: int = 3
    P: float | None = None
    m_table: Mapping[int, float] | None = None
    mode: str = "faithful"
    cg_tol: float = DEFAULT_CG_TOL
    eig_tol: float = DEFAULT_EIG_TOL
    r0: float | None = None
    r0_fraction: float = 0.01
    k_power: int = 4
    seed: int = 0
    bly_orders: tuple[int, ...] = (1, 2, 3, 4, 5)
    ratio_orders: tuple[int, ...] = (2,)
    workers: int = 1
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if not self.K > 0:
            raise ValueError(f"spectral threshold K must be positive, got {self.K}")
        if self.k < 1:
            raise ValueError(f"eigenvalue count k must be >= 1, got {self.k}")
        if self.P is not None and not self.P > 0:
            raise ValueError(f"perimeter bound P must be positive, got {self.P}")
        if not self.cg_tol > 0 or not self.eig_tol > 0:
            raise ValueError("solver tolerances must be positive")
        factor = parse_mode(self.mode)
        if self.mode != "faithful" and factor == 1.0:
            raise ValueError(
                "practical factor 1 is faithful mode; spell it mode='faithful'"
            )
        if factor < 1.0:
            raise ValueError(f"practical factor must be >= 1, got {factor}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if any(j < 1 for j in self.bly_orders) or any(
            j < 1 for j in self.ratio_orders
        ):
            raise ValueError("inequality orders must be >= 1")
        if self.k_power not in (2, 4):
            raise ValueError(f"k_power must be 2 or 4, got {self.k_power}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "K": self.K,
            "k": self.k,
            "P": self.P,
            "m_table": None if self.m_table is None else dict(self.m_table),
            "mode": self.mode,
            "cg_tol": self.cg_tol,
            "eig_tol": self.eig_tol,
            "r0": self.r0,
            "r0_fraction": self.r0_fraction,
            "k_power": self.k_power,
            "seed": self.seed,
            "bly_orders": list(self.bly_orders),
            "ratio_orders": list(self.ratio_orders),
            "workers": self.workers,
            "out_dir": self.out_dir,
        }


# --------------------------------------------------------------------------
# single-domain run


def _spec_dict(spec: CorpusSpec) -> dict[str, Any]:
    return {
        "name": spec.name,
        "generator": spec.generator,
        "h": spec.h,
        "seed": spec.seed,
        "params": dict(spec.params),
    }


def run_one(spec: CorpusSpec, config: RunConfig = RunConfig()) -> dict[str, Any]:
    """Run the full pipeline on one corpus spec and return its report row.

    Pipeline: generate -> sanity gate (Saint-Venant, Talenti, torsion vs
    lambda_1 bracket) -> inequality battery (Berezin-Li-Yau, eigenvalue
    ratios) -> strip surgery.  A failed sanity check stops the row before
    surgery.  Exceptions propagate; :func:`run_suite` isolates them.
    """
    d = generate(spec)
    f = solve_torsion(d, tol=config.cg_tol)
    k_need = max((config.k, 1, *config.bly_orders, *config.ratio_orders))
    s = eigenvalues(d, k=k_need, tol=config.eig_tol, seed=config.seed)

    sanity = [
        check_saint_venant(d, f),
        check_talenti(d, f),
        check_vdb(d, f, spectrum=s),
    ]
    row: dict[str, Any] = {
        "id": spec.name,
        "spec": _spec_dict(spec),
        "status": "ok",
        "error": None,
        "geometry": {
            "measure": measure(d),
            "perimeter": perimeter(d),
            "spectrum": list(s.eigenvalues),
        },
        "sanity": [r.to_dict() for r in sanity],
        "inequalities": [],
        "surgery": None,
        "passed": False,
    }
    if not all(r.passed for r in sanity):
        row["status"] = "sanity_failed"
        logger.error("domain %s failed the sanity gate", spec.name)
        return row

    m_table = (
        dict(config.m_table)
        if config.m_table is not None
        else default_m_table(max((config.k, *config.ratio_orders)), d.N)
    )
    checks = [check_berezin_li_yau(d, j, spectrum=s) for j in config.bly_orders]
    checks += [
        check_ratio_bound(d, j, m_table=m_table, spectrum=s)
        for j in config.ratio_orders
    ]
    row["inequalities"] = [r.to_dict() for r in checks]

    _, report = strip_surgery(
        d,
        K=config.K,
        k=config.k,
        P=config.P,
        m_table=m_table,
        mode=config.mode,
        r0=config.r0,
        r0_fraction=config.r0_fraction,
        k_power=config.k_power,
        cg_tol=config.cg_tol,
        eig_tol=config.eig_tol,
        seed=config.seed,
    )
    row["surgery"] = report.to_dict()
    row["passed"] = all(r.passed for r in checks) and report.passed
    return row


def _error_row(spec: CorpusSpec, exc: Exception) -> dict[str, Any]:
    return {
        "id": spec.name,
        "spec": _spec_dict(spec),
        "status": "error",
        "error": f"{type(exc).__name__}: {exc}",
        "geometry": None,
        "sanity": [],
        "inequalities": [],
        "surgery": None,
        "passed": False,
    }


def _safe_run(spec: CorpusSpec, config: RunConfig) -> dict[str, Any]:
    try:
        return run_one(spec, config)
    except Exception as exc:  # per-domain isolation
        logger.exception("domain %s failed", spec.name)
        return _error_row(spec, exc)


# --------------------------------------------------------------------------
# suite


@dataclass(frozen=True)
class SuiteResult:
    """Rows (one dict per corpus member, in corpus order) plus an exit code."""

    rows: tuple[dict[str, Any], ...]
    config: RunConfig
    exit_code: int

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if not r["passed"])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)


def run_suite(
    specs: Sequence[CorpusSpec], config: RunConfig = RunConfig()
) -> SuiteResult:
    """Run every corpus member and merge the rows in corpus order.

    Returns exit code 0 when every row passes (an empty corpus passes), and
    1 when any row errors or fails a check.  With ``config.workers > 1`` the
    members are processed by a thread pool; rows are still merged by corpus
    position, never by completion order.  When ``config.out_dir`` is set the
    rows are appended to ``reports.jsonl`` there and ``summary.csv`` is
    regenerated from the whole log.
    """
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate domain ids in corpus: {dupes}")

    if config.workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(lambda sp: _safe_run(sp, config), specs))
    else:
        rows = [_safe_run(sp, config) for sp in specs]

    exit_code = 0 if all(r["passed"] for r in rows) else 1
    result = SuiteResult(rows=tuple(rows), config=config, exit_code=exit_code)
    logger.info("suite finished: %d rows, exit %d\n%s",
                len(rows), exit_code, summary_table(rows))
    if config.out_dir is not None:
        write_reports(result, config.out_dir)
    return result


_CSV_COLUMNS = (
    "id",
    "status",
    "passed",
    "measure",
    "perimeter",
    "lambda_1",
    "checks_passed",
    "checks_total",
    "surgery_verdict",
    "flags",
    "error",
)


def _summary_record(row: Mapping[str, Any]) -> dict[str, Any]:
    geom = row.get("geometry") or {}
    spectrum = geom.get("spectrum") or []
    checks = list(row.get("sanity") or []) + list(row.get("inequalities") or [])
    surgery = row.get("surgery") or {}
    checks += list(surgery.get("checks") or [])
    return {
        "id": row["id"],
        "status": row["status"],
        "passed": row["passed"],
        "measure": geom.get("measure", ""),
        "perimeter": geom.get("perimeter", ""),
        "lambda_1": spectrum[0] if spectrum else "",
        "checks_passed": sum(1 for c in checks if c.get("pass")),
        "checks_total": len(checks),
        "surgery_verdict": surgery.get("verdict", ""),
        "flags": ";".join(surgery.get("flags") or []),
        "error": row.get("error") or "",
    }


def summary_table(rows: Sequence[Mapping[str, Any]]) -> str:
    """Fixed-width text table of the per-domain outcomes."""
    recs = [_summary_record(r) for r in rows]
    cols = ("id", "status", "passed", "checks_passed", "checks_total",
            "surgery_verdict", "flags")
    cells = [cols] + [[str(rec[c]) for c in cols] for rec in recs]
    widths = [max(len(line[i]) for line in cells) for i in range(len(cols))]
    return "\n".join(
        "  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()
        for line in cells
    )


def write_reports(result: SuiteResult, out_dir: str | Path) -> tuple[Path, Path]:
    """Append rows to ``reports.jsonl`` and regenerate ``summary.csv``.

    The JSONL log is the authoritative record and is only ever appended to;
    the CSV is rebuilt from the full log so the two never diverge.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jsonl_path = out / "reports.jsonl"
    with jsonl_path.open("a", encoding="ascii") as fh:
        fh.write(result.to_jsonl())

    all_rows = [
        json.loads(line)
        for line in jsonl_path.read_text(encoding="ascii").splitlines()
        if line.strip()
    ]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in all_rows:
        writer.writerow(_summary_record(row))
    csv_path = out / "summary.csv"
    csv_path.write_text(buf.getvalue(), encoding="ascii")
    return jsonl_path, csv_path


# --------------------------------------------------------------------------
# convergence study


def richardson(h_values: Sequence[float], values: Sequence[float]) -> dict[str, float]:
    """Observed order and extrapolated limit from three refined values.

    Requires three grid spacings with a uniform refinement ratio r (h0/h1 ==
    h1/h2).  Order p = log((v0 - v1) / (v1 - v2)) / log(r); the limit is
    v2 + (v2 - v1) / (r^p - 1).
    """
    if len(h_values) != 3 or len(values) != 3:
        raise ValueError("richardson extrapolation needs exactly three levels")
    h0, h1, h2 = h_values
    if not h0 > h1 > h2 > 0:
        raise ValueError(f"grid spacings must decrease, got {h_values}")
    r = h0 / h1
    if abs(h1 / h2 - r) > 1e-9 * r:
        raise ValueError(f"refinement ratio must be uniform, got {h_values}")
    v0, v1, v2 = values
    d01, d12 = v0 - v1, v1 - v2
    if d12 == 0 or d01 * d12 <= 0:
        raise ValueError(
            "differences are not monotone with refinement; cannot estimate order"
        )
    p = math.log(d01 / d12) / math.log(r)
    limit = v2 + (v2 - v1) / (r**p - 1.0)
    return {"order": p, "limit": limit}


_STUDY_FIELDS = ("lambda_1", "torsion_max", "torsion_integral")


def convergence_study(
    spec: CorpusSpec,
    h_list: Sequence[float],
    cg_tol: float = DEFAULT_CG_TOL,
    eig_tol: float = DEFAULT_EIG_TOL,
    seed: int = 0,
) -> dict[str, Any]:
    """Re-rasterize one spec on several grids and extrapolate the limits.

    Returns a dict with one row per grid spacing (coarse to fine) holding
    lambda_1, the torsion maximum and the torsion integral, plus a Richardson
    extrapolation over the three finest levels when at least three spacings
    are given (fields that are non-monotone under refinement extrapolate to
    ``None``).
    """
    hs = sorted(set(h_list), reverse=True)
    if not hs:
        raise ValueError("h_list must contain at least one grid spacing")
    rows: list[dict[str, Any]] = []
    for h in hs:
        d = generate(dc_replace(spec, h=h))
        f = solve_torsion(d, tol=cg_tol)
        s = eigenvalues(d, k=1, tol=eig_tol, seed=seed)
        rows.append(
            {
                "h": h,
                "measure": measure(d),
                "lambda_1": s[1],
                "torsion_max": f.max,
                "torsion_integral": f.integral,
            }
        )
        logger.info("study %s h=%g lambda_1=%.9g", spec.name, h, s[1])

    extrapolation: dict[str, Any] | None = None
    if len(rows) >= 3:
        tail = rows[-3:]
        hs3 = [row["h"] for row in tail]
        extrapolation = {"h_values": hs3}
        for name in _STUDY_FIELDS:
            try:
                extrapolation[name] = richardson(hs3, [row[name] for row in tail])
            except ValueError:
                extrapolation[name] = None
    return {"spec": _spec_dict(spec), "rows": rows, "extrapolation": extrapolation}
