"""Command-line interface.

Subcommands: ``gen``, ``torsion``, ``spectrum``, ``check``, ``surgery``,
``bounded-surgery``, ``study``.  Repeated settings (K, k, P, h, seed, mode,
solver tolerances, output directory) resolve in precedence order:

1. command-line flags,
2. ``EIGSURGERY_``-prefixed environment variables (variable name = setting
   name with its case preserved, e.g. ``EIGSURGERY_K``, ``EIGSURGERY_k``,
   ``EIGSURGERY_mode``, ``EIGSURGERY_cg_tol``),
3. a ``key=value`` config file passed with ``--config`` (``#`` comments),
4. built-in defaults.

Grid spacings accept fractions (``--h 1/256``).  Results print as JSON with
sorted keys on stdout; diagnostics go to stderr.  Exit codes: 0 on success
(for ``check``/``surgery``/``bounded-surgery``: all checks passed), 1 when a
check or suite run failed, 2 on usage or runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from eigsurgery.corpus import (
    CorpusSpec,
    default_corpus,
    generate,
    surgery_corpus,
)
from eigsurgery.domain import (
    GridDomain,
    load_domain,
    measure,
    perimeter,
    save_domain,
)
from eigsurgery.harness import (
    RunConfig,
    convergence_study,
    run_suite,
    summary_table,
)
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
    save_field,
    save_spectrum,
    solve_torsion,
    torsion_energy,
)
from eigsurgery.surgery import bounded_surgery, parse_mode, strip_surgery

logger = logging.getLogger(__name__)

ENV_PREFIX = "EIGSURGERY_"


def _fraction(text: str) -> float:
    """Parse a positive float, accepting fraction syntax like ``1/256``."""
    if "/" in text:
        num, den = text.split("/", 1)
        value = float(num) / float(den)
    else:
        value = float(text)
    if not value > 0:
        raise ValueError(f"expected a positive value, got {text!r}")
    return value


def _optional(cast: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str) -> Any:
        return None if text.lower() in ("none", "") else cast(text)

    return parse


# name -> (cast from string, default); cases are significant (K vs k).
_SETTINGS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "K": (float, 100.0),
    "k": (int, 3),
    "P": (_optional(float), None),
    "h": (_fraction, 1 / 256),
    "seed": (int, 0),
    "mode": (str, "faithful"),
    "out": (_optional(str), None),
    "cg_tol": (float, DEFAULT_CG_TOL),
    "eig_tol": (float, DEFAULT_EIG_TOL),
    "r0": (_optional(float), None),
    "r0_fraction": (float, 0.01),
    "k_power": (int, 4),
    "workers": (int, 1),
}


def _read_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SETTINGS:
            raise ValueError(
                f"{path}:{lineno}: unknown setting {key!r}; "
                f"choose from {sorted(_SETTINGS)}"
            )
        values[key] = value
    return values


class Settings:
    """Layered setting lookup: CLI over environment over config over default."""

    def __init__(self, args: argparse.Namespace) -> None:
        self._cli = vars(args)
        self._file = (
            _read_config_file(args.config) if getattr(args, "config", None) else {}
        )

    def __getitem__(self, key: str) -> Any:
        cast, default = _SETTINGS[key]
        cli = self._cli.get(key)
        if cli is not None:
            return cast(str(cli))
        env = os.environ.get(ENV_PREFIX + key)
        if env is not None:
            return cast(env)
        if key in self._file:
            return cast(self._file[key])
        return default


# --------------------------------------------------------------------------
# argument plumbing


def _add_setting_flags(p: argparse.ArgumentParser, names: Sequence[str]) -> None:
    help_by_name = {
        "K": "spectral threshold",
        "k": "number of eigenvalues under control",
        "P": "perimeter budget (default: 1.02 x measured perimeter)",
        "h": "grid spacing, e.g. 1/256",
        "seed": "seed for generators and eigensolver start vectors",
        "mode": "faithful | practical:<factor>",
        "out": "output directory",
        "cg_tol": "torsion solver tolerance",
        "eig_tol": "eigenvalue solver tolerance",
        "r0": "strip half-width scale (default: derived from the window)",
        "r0_fraction": "r0 as a fraction of the window extent",
        "k_power": "k exponent in the spectral-chain bound (2 or 4)",
        "workers": "thread-pool size for corpus runs",
    }
    for name in names:
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, default=None, help=help_by_name[name])


def _add_domain_source(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--spec",
        help="domain generator: ball, square, dumbbell, tube, blob_union, perforated",
    )
    p.add_argument(
        "--param",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="generator parameter (repeatable); values parse as JSON, else strings",
    )
    p.add_argument("--name", help="domain id (default: the generator name)")
    p.add_argument(
        "--domain", help="path stem of a domain written by gen (.pbm + .json)"
    )


def _parse_params(pairs: Sequence[str]) -> dict[str, Any]:
    params: dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--param expects KEY=VALUE, got {pair!r}")
        key, text = pair.split("=", 1)
        try:
            params[key] = json.loads(text)
        except json.JSONDecodeError:
            params[key] = text
    return params


def _domain_from_args(
    args: argparse.Namespace, settings: Settings
) -> tuple[str, GridDomain]:
    if args.domain and args.spec:
        raise ValueError("give either --spec or --domain, not both")
    if args.domain:
        path = Path(args.domain)
        return args.name or path.stem, load_domain(path)
    if args.spec:
        spec = CorpusSpec(
            name=args.name or args.spec,
            generator=args.spec,
            h=settings["h"],
            seed=settings["seed"],
            params=_parse_params(args.param),
        )
        return spec.name, generate(spec)
    raise ValueError("a domain is required: pass --spec or --domain")


def _corpus(name: str, h: float) -> list[CorpusSpec]:
    if name == "default":
        return default_corpus(h)
    if name == "surgery":
        return surgery_corpus(h)
    raise ValueError(f"unknown corpus {name!r}; choose default or surgery")


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


def _print_report_line(r: IneqReport) -> None:
    verdict = "PASS" if r.passed else "FAIL"
    note = f"  ({r.note})" if r.note else ""
    print(
        f"{verdict} {r.name}: lhs={r.lhs:.12g} rhs={r.rhs:.12g} "
        f"margin={r.margin:.6g}{note}"
    )


def _out_dir(settings: Settings) -> Path | None:
    out = settings["out"]
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# subcommands


def _cmd_gen(args: argparse.Namespace) -> int:
    settings = Settings(args)
    name, d = _domain_from_args(args, settings)
    info: dict[str, Any] = {
        "id": name,
        "h": d.h,
        "cells": int(d.occupancy.sum()),
        "measure": measure(d),
        "perimeter": perimeter(d),
    }
    out = _out_dir(settings)
    if out is not None:
        info["files"] = [str(p) for p in save_domain(d, out / name)]
    _print_json(info)
    return 0


def _cmd_torsion(args: argparse.Namespace) -> int:
    settings = Settings(args)
    name, d = _domain_from_args(args, settings)
    f = solve_torsion(d, tol=settings["cg_tol"])
    info: dict[str, Any] = {
        "id": name,
        "max": f.max,
        "integral": f.integral,
        "energy": torsion_energy(f),
        "residual": f.residual,
    }
    out = _out_dir(settings)
    if out is not None:
        bin_path, hdr_path = save_field(f, out / f"{name}-torsion")
        info["files"] = [str(bin_path), str(hdr_path)]
    _print_json(info)
    return 0


def _cmd_spectrum(args: argparse.Namespace) -> int:
    settings = Settings(args)
    name, d = _domain_from_args(args, settings)
    s = eigenvalues(d, k=settings["k"], tol=settings["eig_tol"], seed=settings["seed"])
    info: dict[str, Any] = {
        "id": name,
        "k": s.k,
        "eigenvalues": list(s.eigenvalues),
    }
    out = _out_dir(settings)
    if out is not None:
        info["files"] = [str(save_spectrum(s, out / f"{name}-spectrum.json"))]
    _print_json(info)
    return 0


def _battery(d: GridDomain, settings: Settings) -> list[IneqReport]:
    f = solve_torsion(d, tol=settings["cg_tol"])
    s = eigenvalues(d, k=5, tol=settings["eig_tol"], seed=settings["seed"])
    reports = [
        check_saint_venant(d, f),
        check_talenti(d, f),
        check_vdb(d, f, spectrum=s),
    ]
    reports += [check_berezin_li_yau(d, j, spectrum=s) for j in range(1, 6)]
    reports.append(check_ratio_bound(d, 2, m_table=default_m_table(2, d.N), spectrum=s))
    return reports


def _cmd_check(args: argparse.Namespace) -> int:
    settings = Settings(args)
    if args.corpus:
        specs = _corpus(args.corpus, settings["h"])
        failed = 0
        for spec in specs:
            reports = _battery(generate(spec), settings)
            ok = all(r.passed for r in reports)
            failed += not ok
            print(f"{'PASS' if ok else 'FAIL'} {spec.name} "
                  f"({sum(r.passed for r in reports)}/{len(reports)} checks)")
            if not ok:
                for r in reports:
                    if not r.passed:
                        _print_report_line(r)
        print(f"{len(specs) - failed}/{len(specs)} domains passed")
        return 0 if failed == 0 else 1
    name, d = _domain_from_args(args, settings)
    reports = _battery(d, settings)
    for r in reports:
        _print_report_line(r)
    return 0 if all(r.passed for r in reports) else 1


def _run_config(settings: Settings, out: Path | None) -> RunConfig:
    return RunConfig(
        K=settings["K"],
        k=settings["k"],
        P=settings["P"],
        mode=settings["mode"],
        cg_tol=settings["cg_tol"],
        eig_tol=settings["eig_tol"],
        r0=settings["r0"],
        r0_fraction=settings["r0_fraction"],
        k_power=settings["k_power"],
        seed=settings["seed"],
        workers=settings["workers"],
        out_dir=None if out is None else str(out),
    )


def _finish_surgery(
    name: str,
    result: GridDomain,
    report: Any,
    out: Path | None,
) -> int:
    for r in report.checks:
        _print_report_line(r)
    if report.flags:
        print("flags: " + ", ".join(report.flags))
    print(f"verdict: {report.verdict}")
    if out is not None:
        report_path = out / f"{name}-report.json"
        report_path.write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
            encoding="ascii",
        )
        save_domain(result, out / f"{name}-after")
        logger.info("wrote %s", report_path)
    return 0 if report.passed else 1


def _cmd_surgery(args: argparse.Namespace) -> int:
    settings = Settings(args)
    out = _out_dir(settings)
    if args.corpus:
        specs = _corpus(args.corpus, settings["h"])
        result = run_suite(specs, _run_config(settings, out))
        print(summary_table(result.rows))
        return result.exit_code
    name, d = _domain_from_args(args, settings)
    result, report = strip_surgery(
        d,
        K=settings["K"],
        k=settings["k"],
        P=settings["P"],
        mode=settings["mode"],
        r0=settings["r0"],
        r0_fraction=settings["r0_fraction"],
        k_power=settings["k_power"],
        cg_tol=settings["cg_tol"],
        eig_tol=settings["eig_tol"],
        seed=settings["seed"],
    )
    return _finish_surgery(name, result, report, out)


def _cmd_bounded_surgery(args: argparse.Namespace) -> int:
    settings = Settings(args)
    name, d = _domain_from_args(args, settings)
    result, report = bounded_surgery(
        d,
        K=settings["K"],
        k=settings["k"],
        mode=settings["mode"],
        r0=settings["r0"],
        r0_fraction=settings["r0_fraction"],
        k_power=settings["k_power"],
        cg_tol=settings["cg_tol"],
        eig_tol=settings["eig_tol"],
        seed=settings["seed"],
    )
    return _finish_surgery(name, result, report, _out_dir(settings))


def _cmd_study(args: argparse.Namespace) -> int:
    settings = Settings(args)
    h_list = [_fraction(part) for part in args.h_list.split(",") if part.strip()]
    spec = CorpusSpec(
        name=args.name or args.spec,
        generator=args.spec,
        h=h_list[0],
        seed=settings["seed"],
        params=_parse_params(args.param),
    )
    study = convergence_study(
        spec,
        h_list,
        cg_tol=settings["cg_tol"],
        eig_tol=settings["eig_tol"],
        seed=settings["seed"],
    )
    _print_json(study)
    out = _out_dir(settings)
    if out is not None:
        (out / f"{spec.name}-study.json").write_text(
            json.dumps(study, sort_keys=True, indent=2) + "\n", encoding="ascii"
        )
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eigsurgery",
        description="Rasterized-domain surgery with verified spectral guarantees.",
    )
    parser.add_argument("--config", help="key=value settings file")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v info, -vv debug"
    )
    # the same flags are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering a value parsed before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument(
        "-v", "--verbose", action="count", default=argparse.SUPPRESS
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "gen",
        parents=[common], help="rasterize a domain and save npz/pbm snapshots")
    _add_domain_source(p)
    _add_setting_flags(p, ["h", "seed", "out"])
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser(
        "torsion",
        parents=[common], help="solve the torsion problem on a domain")
    _add_domain_source(p)
    _add_setting_flags(p, ["h", "seed", "cg_tol", "out"])
    p.set_defaults(func=_cmd_torsion)

    p = sub.add_parser(
        "spectrum",
        parents=[common], help="lowest Dirichlet eigenvalues of a domain")
    _add_domain_source(p)
    _add_setting_flags(p, ["h", "seed", "k", "eig_tol", "out"])
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser(
        "check",
        parents=[common], help="run the inequality battery")
    _add_domain_source(p)
    p.add_argument("--corpus", help="run on a whole corpus: default or surgery")
    _add_setting_flags(p, ["h", "seed", "cg_tol", "eig_tol"])
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser(
        "surgery",
        parents=[common], help="strip surgery on a domain or corpus")
    _add_domain_source(p)
    p.add_argument("--corpus", help="run the batch suite: default or surgery")
    _add_setting_flags(
        p,
        ["K", "k", "P", "h", "seed", "mode", "r0", "r0_fraction", "k_power",
         "cg_tol", "eig_tol", "workers", "out"],
    )
    p.set_defaults(func=_cmd_surgery)

    p = sub.add_parser(
        "bounded-surgery",
        parents=[common], help="penalized-energy descent on a domain"
    )
    _add_domain_source(p)
    _add_setting_flags(
        p,
        ["K", "k", "h", "seed", "mode", "r0", "r0_fraction", "k_power",
         "cg_tol", "eig_tol", "out"],
    )
    p.set_defaults(func=_cmd_bounded_surgery)

    p = sub.add_parser(
        "study",
        parents=[common], help="grid-convergence study for one generator")
    p.add_argument("--spec", required=True, help="domain generator name")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--name", help="domain id (default: the generator name)")
    p.add_argument(
        "--h-list",
        default="1/64,1/128,1/256",
        help="comma-separated grid spacings, e.g. 1/64,1/128,1/256",
    )
    _add_setting_flags(p, ["seed", "cg_tol", "eig_tol", "out"])
    p.set_defaults(func=_cmd_study)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = max(logging.WARNING - 10 * args.verbose, logging.DEBUG)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
