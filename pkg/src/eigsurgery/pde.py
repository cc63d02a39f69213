"""Finite-difference torsion and eigenvalue solvers on rasterized domains.

The Dirichlet Laplacian is the standard (2N+1)-point stencil restricted to
the occupied cells (Dirichlet conditions by node exclusion): the matrix has
``2N / h^2`` on the diagonal and ``-1 / h^2`` for each occupied face
neighbor.  With this convention domain monotonicity is an exact
matrix-theoretic fact - removing cells yields a principal submatrix, so the
torsion function decreases cell-wise (M-matrix comparison) and every
eigenvalue increases (Cauchy interlacing).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as sparse_linalg
from scipy import special

from eigsurgery.domain import EmptyDomainError, GridDomain, Strip

logger = logging.getLogger(__name__)

DEFAULT_CG_TOL = 1e-10
DEFAULT_EIG_TOL = 1e-8
_DENSE_CUTOFF = 400  # below this many cells the dense eigensolver is used

__all__ = [
    "Spectrum",
    "TorsionField",
    "ball_lambda1",
    "build_laplacian",
    "eigenvalues",
    "gamma_distance",
    "load_field",
    "save_field",
    "save_spectrum",
    "solve_torsion",
    "strip_max",
    "torsion_energy",
]


@dataclass(frozen=True)
class TorsionField:
    """Discrete torsion function on a domain, extended by zero outside.

    ``values`` covers the full occupancy window; it is zero on unoccupied
    cells and nonnegative everywhere (discrete maximum principle).
    """

    domain: GridDomain
    values: np.ndarray
    residual: float

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def max(self) -> float:
        return float(self.values.max(initial=0.0))

    @property
    def integral(self) -> float:
        """L1 norm: sum of values times h^N."""
        return float(self.values.sum()) * self.domain.h**self.domain.N

    def rescaled(self, t: float, domain: GridDomain) -> "TorsionField":
        """Field on the metadata-rescaled domain: values scale by t^2."""
        return TorsionField(domain=domain, values=t**2 * self.values, residual=self.residual)


@dataclass(frozen=True)
class Spectrum:
    """Lowest-k Dirichlet eigenvalues, ascending, with certified accuracy."""

    eigenvalues: tuple[float, ...]
    k: int
    rel_tol: float

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.eigenvalues)
        if len(vals) != self.k:
            raise ValueError("eigenvalue count does not match k")
        if any(v <= 0 for v in vals):
            raise ValueError("Dirichlet eigenvalues must be strictly positive")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValueError("eigenvalues must be ascending")
        object.__setattr__(self, "eigenvalues", vals)

    def __getitem__(self, i: int) -> float:
        """1-based access: spectrum[1] is the first eigenvalue."""
        if not 1 <= i <= self.k:
            raise IndexError(f"eigenvalue index {i} outside 1..{self.k}")
        return self.eigenvalues[i - 1]

    def rescaled(self, t: float) -> "Spectrum":
        """Spectrum of the domain rescaled by t: eigenvalues divide by t^2."""
        return Spectrum(
            eigenvalues=tuple(v / t**2 for v in self.eigenvalues),
            k=self.k,
            rel_tol=self.rel_tol,
        )


def build_laplacian(d: GridDomain) -> tuple[sparse.csr_matrix, np.ndarray]:
    """Sparse SPD Dirichlet Laplacian and the cell index map.

    Returns ``(A, index)`` where ``index`` holds the row number of each
    occupied cell and -1 elsewhere.
    """
    occ = d.occupancy
    n = int(occ.sum())
    if n == 0:
        raise EmptyDomainError("cannot assemble a Laplacian on an empty domain")
    index = -np.ones(occ.shape, dtype=np.int64)
    index[occ] = np.arange(n)
    h2 = d.h * d.h
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 2.0 * d.N / h2)]
    for axis in range(occ.ndim):
        lead = [slice(None)] * occ.ndim
        trail = [slice(None)] * occ.ndim
        lead[axis] = slice(1, None)
        trail[axis] = slice(None, -1)
        pair = occ[tuple(lead)] & occ[tuple(trail)]
        a = index[tuple(trail)][pair]
        b = index[tuple(lead)][pair]
        off = np.full(a.shape, -1.0 / h2)
        rows += [a, b]
        cols += [b, a]
        vals += [off, off]
    A = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return A.tocsr(), index


def solve_torsion(d: GridDomain, tol: float = DEFAULT_CG_TOL) -> TorsionField:
    """Solve ``-Lap w = 1`` on occupied cells, w = 0 outside, by CG.

    The relative residual is driven below ``tol``; tiny negative values from
    solver noise are clamped to zero with a warning.
    """
    A, index = build_laplacian(d)
    n = A.shape[0]
    b = np.ones(n)
    maxiter = max(1000, 50 * int(math.isqrt(n)) + 200)
    x, info = sparse_linalg.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter)
    if info != 0:
        raise RuntimeError(
            f"torsion solve did not converge within {maxiter} iterations (info={info})"
        )
    residual = float(np.linalg.norm(A @ x - b) / np.linalg.norm(b))
    negative = x < 0
    if negative.any():
        worst = float(x.min())
        if worst < -tol * max(1.0, float(np.abs(x).max())):
            logger.warning("torsion values dipped to %.3e; clamping to zero", worst)
        x = np.where(negative, 0.0, x)
    values = np.zeros(d.shape)
    values[d.occupancy] = x
    return TorsionField(domain=d, values=values, residual=residual)


def torsion_energy(f: TorsionField) -> float:
    """Torsion energy ``E = -1/2 * integral(w)``; strictly negative."""
    return -0.5 * f.integral


def eigenvalues(
    d: GridDomain,
    k: int,
    tol: float = DEFAULT_EIG_TOL,
    seed: int = 0,
) -> Spectrum:
    """Lowest ``k`` Dirichlet eigenvalues of the FD Laplacian.

    Uses shift-invert Lanczos with a deterministic start vector; small
    systems fall back to a dense solve.  Results are reproducible for a
    fixed seed.
    """
    A, _ = build_laplacian(d)
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= occupied cells, got k={k}, cells={n}")
    if n <= _DENSE_CUTOFF or k >= n - 1:
        vals = scipy.linalg.eigvalsh(A.toarray())[:k]
    else:
        v0 = np.random.default_rng(seed).standard_normal(n)
        vals = sparse_linalg.eigsh(
            A,
            k=k,
            sigma=0.0,
            which="LM",
            v0=v0,
            tol=tol,
            maxiter=max(5000, 20 * n),
            return_eigenvectors=False,
        )
        vals = np.sort(vals)
    return Spectrum(eigenvalues=tuple(float(v) for v in vals), k=k, rel_tol=tol)


def _aligned_offset(d1: GridDomain, d2: GridDomain) -> tuple[int, ...]:
    """Integer cell offset of d1's window inside d2's lattice."""
    if not math.isclose(d1.h, d2.h, rel_tol=1e-12):
        raise ValueError(
            f"mismatched lattice spacing: {d1.h!r} vs {d2.h!r} (rescale first)"
        )
    offs = []
    for o1, o2 in zip(d1.origin, d2.origin):
        shift = (o1 - o2) / d1.h
        if abs(shift - round(shift)) > 1e-9:
            raise ValueError("domain windows are not grid-aligned")
        offs.append(int(round(shift)))
    return tuple(offs)


def _paste(values: np.ndarray, offset: tuple[int, ...], shape: tuple[int, ...]) -> np.ndarray:
    values = np.asarray(values)
    out = np.zeros(shape, dtype=values.dtype)
    sl = tuple(slice(o, o + s) for o, s in zip(offset, values.shape))
    out[sl] = values
    return out


def embed_union(
    d1: GridDomain, d2: GridDomain, a1: np.ndarray, a2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Paste two window arrays into a common bounding window (zero filled)."""
    off = _aligned_offset(d1, d2)
    lo = tuple(min(0, o) for o in off)
    hi = tuple(
        max(s2, o + s1) for s2, o, s1 in zip(d2.shape, off, d1.shape)
    )
    shape = tuple(h - l for h, l in zip(hi, lo))
    off1 = tuple(o - l for o, l in zip(off, lo))
    off2 = tuple(-l for l in lo)
    return _paste(a1, off1, shape), _paste(a2, off2, shape)


def gamma_distance(
    d1: GridDomain,
    d2: GridDomain,
    tol: float = DEFAULT_CG_TOL,
    f1: TorsionField | None = None,
    f2: TorsionField | None = None,
) -> float:
    """L1 distance between the torsion functions of two domains.

    Both lattices must share the spacing ``h`` (rescale first otherwise);
    windows may differ as long as they are grid-aligned.  For nested domains
    this equals ``2 (E(d1) - E(d2))`` up to solver tolerance.
    """
    f1 = f1 if f1 is not None else solve_torsion(d1, tol)
    f2 = f2 if f2 is not None else solve_torsion(d2, tol)
    w1, w2 = embed_union(d1, d2, f1.values, f2.values)
    return float(np.abs(w1 - w2).sum()) * d1.h**d1.N


def strip_max(f: TorsionField, s: Strip) -> float:
    """Maximum of the field over cells with center in the strip (0 if none)."""
    hit = s.contains(f.domain.centers(0))
    if not np.any(hit):
        return 0.0
    return float(f.values[hit].max(initial=0.0))


@lru_cache(maxsize=None)
def _bessel_first_zero(nu: float) -> float:
    """First positive zero of the Bessel function J_nu."""
    if nu == int(nu):
        return float(special.jn_zeros(int(nu), 1)[0])
    # Bracket the first zero; j_{nu,1} is increasing in nu and lies in
    # (nu, nu + pi + 2) for the orders used here.
    from scipy.optimize import brentq

    lo = max(nu, 1e-6)
    hi = nu + math.pi + 2.0
    while special.jv(nu, hi) > 0:  # pragma: no cover - safety margin
        hi += math.pi
    return float(brentq(lambda x: special.jv(nu, x), lo + 1e-9, hi))


@lru_cache(maxsize=None)
def ball_lambda1(N: int = 2) -> float:
    """First Dirichlet eigenvalue of the unit-measure ball, analytic.

    Equals ``omega_N^(2/N) * j_{N/2-1,1}^2`` where ``omega_N`` is the unit
    ball volume; at N=2 this is ``pi * j_{0,1}^2``.  Computed once per
    dimension so that constant selection carries no grid error.
    """
    omega = unit_ball_volume(N)
    j = _bessel_first_zero(N / 2 - 1)
    return omega ** (2.0 / N) * j**2


def unit_ball_volume(N: int) -> float:
    """Volume of the unit ball in R^N."""
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1)


def save_field(f: TorsionField, path: str | Path) -> tuple[Path, Path]:
    """Write field values as a flat float64 binary plus a JSON header."""
    bin_path = Path(path).with_suffix(".bin")
    hdr_path = Path(path).with_suffix(".json")
    bin_path.write_bytes(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    header = {
        "shape": list(f.values.shape),
        "dtype": "<f8",
        "h": f.domain.h,
        "origin": list(f.domain.origin),
        "residual": f.residual,
    }
    hdr_path.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="ascii")
    return bin_path, hdr_path


def load_field(path: str | Path, domain: GridDomain) -> TorsionField:
    """Load a field written by :func:`save_field` onto its domain."""
    bin_path = Path(path).with_suffix(".bin")
    hdr_path = Path(path).with_suffix(".json")
    header = json.loads(hdr_path.read_text(encoding="ascii"))
    values = np.frombuffer(bin_path.read_bytes(), dtype=header["dtype"]).reshape(
        header["shape"]
    )
    return TorsionField(domain=domain, values=values.copy(), residual=header["residual"])


def save_spectrum(s: Spectrum, path: str | Path) -> Path:
    """Write a spectrum as JSON."""
    out = Path(path)
    out.write_text(
        json.dumps(
            {"eigenvalues": list(s.eigenvalues), "rel_tol": s.rel_tol},
            sort_keys=True,
        )
        + "\n",
        encoding="ascii",
    )
    return out
