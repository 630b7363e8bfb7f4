"""Sum-of-squares programs compiled to block SDPs via Gram matrices.

A polynomial F is SOS iff F = m(z)^T Q m(z) for some Q >= 0, where m(z) is
a vector of monomials. Programs may contain unknown polynomials whose
coefficients enter every constraint affinely; products of two unknowns are
rejected when the expression is built.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .poly import Monomial, Polynomial, grlex_key, mono_mul, monomials_up_to
from .sdp import SdpProblem, SdpSettings, SdpSolution, SdpStatus, solve as sdp_solve, tril_index

log = logging.getLogger(__name__)


class NonAffineError(ValueError):
    """A constraint would contain a product of two unknowns."""


class SolverFailure(RuntimeError):
    """The SDP solver did not reach a usable answer."""


# ---------------------------------------------------------------------------
# Monomial bases and Gram parameterizations


@dataclass(frozen=True)
class MonomialBasis:
    entries: tuple[Monomial, ...]
    nvars: int
    max_degree: int

    def __len__(self):
        return len(self.entries)

    @property
    def include_constant(self) -> bool:
        return (0,) * self.nvars in self.entries

    def products(self) -> dict[Monomial, list[tuple[int, int]]]:
        """Map each product monomial to the (p >= q) index pairs producing it."""
        out: dict[Monomial, list[tuple[int, int]]] = {}
        for q, mq in enumerate(self.entries):
            for p in range(q, len(self.entries)):
                out.setdefault(mono_mul(self.entries[p], mq), []).append((p, q))
        return out

    def quadratic_form(self, Q: np.ndarray) -> Polynomial:
        """m^T Q m as a polynomial."""
        terms: dict[Monomial, float] = {}
        n = len(self.entries)
        for p in range(n):
            for q in range(n):
                if Q[p, q] != 0.0:
                    m = mono_mul(self.entries[p], self.entries[q])
                    terms[m] = terms.get(m, 0.0) + Q[p, q]
        return Polynomial(self.nvars, terms)


def make_basis(nvars: int, half_degree: int, include_constant: bool = True) -> MonomialBasis:
    if half_degree < 0:
        raise ValueError("half_degree must be non-negative")
    mons = monomials_up_to(nvars, half_degree, 0 if include_constant else 1)
    return MonomialBasis(tuple(mons), nvars, half_degree)


def basis_for_support(nvars: int, support: Sequence[Monomial]) -> MonomialBasis:
    """Gram basis for a polynomial whose monomials lie in ``support``.

    Keeps monomials m with ceil(dmin/2) <= deg(m) <= floor(dmax/2) and, per
    variable, exponent <= floor(max exponent / 2).
    """
    if not support:
        return MonomialBasis((), nvars, 0)
    degs = [sum(m) for m in support]
    lo, hi = math.ceil(min(degs) / 2), max(degs) // 2
    vmax = [max(m[i] for m in support) // 2 for i in range(nvars)]
    mons = [m for m in monomials_up_to(nvars, hi, lo) if all(e <= b for e, b in zip(m, vmax))]
    return MonomialBasis(tuple(mons), nvars, hi)


@dataclass(frozen=True)
class GramParam:
    """Affine family Q0 + sum_i t_i Q_i of Gram matrices of a fixed polynomial."""

    Q0: np.ndarray
    basis_matrices: tuple[np.ndarray, ...]
    basis: MonomialBasis


def _coefficient_map(basis: MonomialBasis):
    """Matrix L with L @ tril(Q) = coefficients of m^T Q m over ``monos``."""
    prods = basis.products()
    monos = sorted(prods, key=grlex_key)
    row = {m: i for i, m in enumerate(monos)}
    idx = tril_index(len(basis))
    col = {pq: j for j, pq in enumerate(idx)}
    L = np.zeros((len(monos), len(idx)))
    for m, pairs in prods.items():
        for p, q in pairs:
            L[row[m], col[(p, q)]] += 1.0 if p == q else 2.0
    return L, monos, idx


def _tril_to_sym(vec: np.ndarray, idx, n: int) -> np.ndarray:
    Q = np.zeros((n, n))
    for v, (p, q) in zip(vec, idx):
        Q[p, q] = Q[q, p] = v
    return Q


def gram_decompose(F: Polynomial, basis: MonomialBasis, tol: float = 1e-10) -> GramParam:
    """Particular Gram matrix of F plus a basis of {Q : m^T Q m == 0}."""
    if F.nvars != basis.nvars:
        raise ValueError("variable count mismatch between F and basis")
    n = len(basis)
    if n == 0:
        if not F.is_zero():
            raise ValueError("empty basis cannot represent a nonzero polynomial")
        return GramParam(np.zeros((0, 0)), (), basis)
    L, monos, idx = _coefficient_map(basis)
    known = set(monos)
    bad = [m for m in F.monomials() if m not in known]
    if bad:
        raise ValueError(f"monomial {bad[0]} of F is not a product of two basis entries")
    f = np.array([F.coef(m) for m in monos])
    q0, *_ = np.linalg.lstsq(L, f, rcond=None)
    if np.max(np.abs(L @ q0 - f), initial=0.0) > tol * max(1.0, np.max(np.abs(f), initial=0.0)):
        raise ValueError("F is not representable in this basis")
    N = scipy.linalg.null_space(L)
    mats = tuple(_tril_to_sym(N[:, k], idx, n) for k in range(N.shape[1]))
    return GramParam(_tril_to_sym(q0, idx, n), mats, basis)


# ---------------------------------------------------------------------------
# Expressions affine in decision variables


class AffinePoly:
    """``const + sum_k x_k * lin[k]`` with decision variables x_k."""

    __slots__ = ("nvars", "const", "lin")

    def __init__(self, const: Polynomial, lin: dict[int, Polynomial] | None = None):
        self.nvars = const.nvars
        self.const = const
        self.lin = {k: p for k, p in (lin or {}).items() if not p.is_zero()}

    @classmethod
    def wrap(cls, other, nvars: int) -> "AffinePoly":
        if isinstance(other, AffinePoly):
            return other
        if isinstance(other, Polynomial):
            return cls(other)
        return cls(Polynomial.constant(nvars, float(other)))

    @property
    def is_constant(self) -> bool:
        return not self.lin

    def __add__(self, other):
        other = AffinePoly.wrap(other, self.nvars)
        lin = dict(self.lin)
        for k, p in other.lin.items():
            lin[k] = lin[k] + p if k in lin else p
        return AffinePoly(self.const + other.const, lin)

    __radd__ = __add__

    def __neg__(self):
        return AffinePoly(-self.const, {k: -p for k, p in self.lin.items()})

    def __sub__(self, other):
        return self + (-AffinePoly.wrap(other, self.nvars))

    def __rsub__(self, other):
        return AffinePoly.wrap(other, self.nvars) + (-self)

    def __mul__(self, other):
        if isinstance(other, AffinePoly):
            if other.is_constant:
                other = other.const
            elif self.is_constant:
                return other * self.const
            else:
                raise NonAffineError("product of two unknown polynomials")
        if isinstance(other, (int, float, np.floating)):
            other = Polynomial.constant(self.nvars, float(other))
        return AffinePoly(self.const * other, {k: p * other for k, p in self.lin.items()})

    __rmul__ = __mul__

    def support(self) -> set[Monomial]:
        s = set(self.const.monomials())
        for p in self.lin.values():
            s.update(p.monomials())
        return s

    def degree(self) -> int:
        return max((sum(m) for m in self.support()), default=0)

    def evaluate(self, x: np.ndarray) -> Polynomial:
        out = self.const
        for k, p in self.lin.items():
            if x[k] != 0.0:
                out = out + p * float(x[k])
        return out


# ---------------------------------------------------------------------------
# Programs


@dataclass
class _Unknown:
    name: str
    kind: str  # "free" | "sos"
    monomials: tuple[Monomial, ...] = ()
    basis: MonomialBasis | None = None
    var_ids: tuple[int, ...] = ()
    block: int | None = None


@dataclass
class CompiledSos:
    sdp: SdpProblem
    var_columns: np.ndarray  # program variable id -> SDP column
    constraint_bases: list[MonomialBasis]
    constraint_blocks: list[int]


class SosProgram:
    """Collects unknowns, SOS constraints, equalities and an objective."""

    def __init__(self, nvars: int):
        self.nvars = nvars
        self._nvar = 0
        self._var_kind: list[tuple] = []  # ("free", j) | ("gram", unknown_block, tril_j)
        self._n_free = 0
        self._unknowns: dict[str, _Unknown] = {}
        self._sos_blocks: list[MonomialBasis] = []
        self.sos_constraints: list[tuple[str, AffinePoly]] = []
        self.equalities: list[tuple[str, AffinePoly]] = []
        self.objective: AffinePoly | None = None

    def _new_var(self, kind: tuple) -> int:
        self._var_kind.append(kind)
        self._nvar += 1
        return self._nvar - 1

    def free_poly(self, name: str, monomials: Sequence[Monomial]) -> AffinePoly:
        """Sign-free unknown polynomial over the given monomials."""
        if name in self._unknowns:
            raise ValueError(f"duplicate unknown {name!r}")
        monomials = sorted(set(tuple(m) for m in monomials), key=grlex_key)
        ids = []
        lin = {}
        for m in monomials:
            vid = self._new_var(("free", self._n_free))
            self._n_free += 1
            ids.append(vid)
            lin[vid] = Polynomial.monomial(m)
        self._unknowns[name] = _Unknown(name, "free", tuple(monomials), var_ids=tuple(ids))
        return AffinePoly(Polynomial.zero(self.nvars), lin)

    def free_scalar(self, name: str) -> AffinePoly:
        return self.free_poly(name, [(0,) * self.nvars])

    def sos_poly(self, name: str, basis: MonomialBasis) -> AffinePoly:
        """Unknown SOS polynomial m^T S m with S >= 0."""
        if name in self._unknowns:
            raise ValueError(f"duplicate unknown {name!r}")
        k = len(self._sos_blocks)
        self._sos_blocks.append(basis)
        lin = {}
        ids = []
        for j, (p, q) in enumerate(tril_index(len(basis))):
            vid = self._new_var(("gram", k, j))
            ids.append(vid)
            m = mono_mul(basis.entries[p], basis.entries[q])
            lin[vid] = Polynomial.monomial(m, 1.0 if p == q else 2.0)
        self._unknowns[name] = _Unknown(name, "sos", basis=basis, var_ids=tuple(ids), block=k)
        return AffinePoly(Polynomial.zero(self.nvars), lin)

    def add_sos(self, expr, name: str | None = None) -> None:
        expr = AffinePoly.wrap(expr, self.nvars)
        self.sos_constraints.append((name or f"sos{len(self.sos_constraints)}", expr))

    def add_equality(self, expr, name: str | None = None) -> None:
        """Coefficientwise ``expr == 0``."""
        expr = AffinePoly.wrap(expr, self.nvars)
        self.equalities.append((name or f"eq{len(self.equalities)}", expr))

    def minimize(self, expr) -> None:
        expr = AffinePoly.wrap(expr, self.nvars)
        if any(sum(m) for m in expr.support()):
            raise ValueError("objective must be a scalar (degree-0) expression")
        self.objective = expr

    def unknown_names(self) -> list[str]:
        return list(self._unknowns)

    # -- compilation ------------------------------------------------------
    def compile(self) -> CompiledSos:
        if not self.sos_constraints and not self.equalities:
            raise ValueError("empty program")
        sos_bases = [basis_for_support(self.nvars, sorted(e.support(), key=grlex_key))
                     for _, e in self.sos_constraints]
        block_dims = [len(b) for b in self._sos_blocks] + [len(b) for b in sos_bases]
        n_unknown_blocks = len(self._sos_blocks)
        names = [f"gram:{u.name}" for u in self._unknowns.values() if u.kind == "sos"]
        names += [f"sos:{n}" for n, _ in self.sos_constraints]
        tmp = SdpProblem(tuple(block_dims), self._n_free, sp.csr_matrix((0, self._n_free + sum(
            n * (n + 1) // 2 for n in block_dims))), np.zeros(0), np.zeros(self._n_free + sum(
                n * (n + 1) // 2 for n in block_dims)), tuple(names))
        offsets = tmp.block_offsets
        var_cols = np.empty(self._nvar, dtype=int)
        for vid, kind in enumerate(self._var_kind):
            var_cols[vid] = kind[1] if kind[0] == "free" else offsets[kind[1]] + kind[2]

        rows, cols, vals, rhs = [], [], [], []
        r = 0

        def emit(expr: AffinePoly, monos, gram=None):
            nonlocal r
            # gram: (block index, basis) subtracting m^T Q m
            by_mono: dict[Monomial, dict[int, float]] = {m: {} for m in monos}
            for vid, p in expr.lin.items():
                col = var_cols[vid]
                for m, c in p.items():
                    d = by_mono.setdefault(m, {})
                    d[col] = d.get(col, 0.0) + c
            if gram is not None:
                blk, basis = gram
                off = offsets[blk]
                for j, (p, q) in enumerate(tril_index(len(basis))):
                    m = mono_mul(basis.entries[p], basis.entries[q])
                    d = by_mono.setdefault(m, {})
                    d[off + j] = d.get(off + j, 0.0) - (1.0 if p == q else 2.0)
            for m in sorted(by_mono, key=grlex_key):
                d = by_mono[m]
                const = expr.const.coef(m)
                entries = [(c, v) for c, v in d.items() if v != 0.0]
                if not entries and const == 0.0:
                    continue
                for c, v in sorted(entries):
                    rows.append(r)
                    cols.append(c)
                    vals.append(v)
                rhs.append(-const)
                r += 1

        for i, ((_, expr), basis) in enumerate(zip(self.sos_constraints, sos_bases)):
            monos = expr.support() | set(basis.products())
            emit(expr, monos, (n_unknown_blocks + i, basis))
        for _, expr in self.equalities:
            emit(expr, expr.support())

        nvar = tmp.nvar
        A = sp.csr_matrix((vals, (rows, cols)), shape=(r, nvar))
        c = np.zeros(nvar)
        if self.objective is not None:
            for vid, p in self.objective.lin.items():
                c[var_cols[vid]] += p.coef((0,) * self.nvars)
        sdp = SdpProblem(tuple(block_dims), self._n_free, A, np.array(rhs), c, tuple(names))
        return CompiledSos(sdp, var_cols, sos_bases,
                           list(range(n_unknown_blocks, n_unknown_blocks + len(sos_bases))))

    def solve(self, settings: SdpSettings | None = None) -> "SosSolution":
        compiled = self.compile()
        sol = sdp_solve(compiled.sdp, settings)
        return SosSolution(self, compiled, sol)


@dataclass
class SosSolution:
    program: SosProgram
    compiled: CompiledSos
    sdp: SdpSolution
    _x: np.ndarray | None = field(default=None, repr=False)

    @property
    def status(self) -> SdpStatus:
        return self.sdp.status

    @property
    def ok(self) -> bool:
        return self.sdp.ok

    def _values(self) -> np.ndarray:
        if self._x is None:
            prob = self.compiled.sdp
            x = np.zeros(prob.nvar)
            x[: prob.n_free] = self.sdp.free
            for off, n, X in zip(prob.block_offsets, prob.block_dims, self.sdp.blocks):
                for j, (p, q) in enumerate(tril_index(n)):
                    x[off + j] = X[p, q]
            self._x = x[self.compiled.var_columns]
        return self._x

    def value(self, expr) -> Polynomial:
        """Decode an expression at the solution."""
        expr = AffinePoly.wrap(expr, self.program.nvars)
        return expr.evaluate(self._values())

    def unknown(self, name: str) -> Polynomial:
        u = self.program._unknowns[name]
        x = self._values()
        nv = self.program.nvars
        if u.kind == "free":
            return Polynomial(nv, {m: x[v] for m, v in zip(u.monomials, u.var_ids)})
        return AffinePoly(Polynomial.zero(nv), {
            v: Polynomial.monomial(mono_mul(u.basis.entries[p], u.basis.entries[q]),
                                   1.0 if p == q else 2.0)
            for v, (p, q) in zip(u.var_ids, tril_index(len(u.basis)))}).evaluate(x)

    def constraint_gram(self, i: int) -> tuple[MonomialBasis, np.ndarray]:
        blk = self.compiled.constraint_blocks[i]
        return self.compiled.constraint_bases[i], self.sdp.blocks[blk]


# ---------------------------------------------------------------------------
# Deciding whether a fixed polynomial is SOS


@dataclass
class SosCheck:
    is_sos: bool
    basis: MonomialBasis | None = None
    gram: np.ndarray | None = None
    margin: float = np.nan
    status: SdpStatus | None = None

    def __bool__(self):
        return self.is_sos


def _verify_witness(F: Polynomial, basis: MonomialBasis, Q: np.ndarray,
                    coef_tol: float, eig_tol: float) -> tuple[bool, float, float]:
    err = basis.quadratic_form(Q).max_abs_diff(F)
    eig = float(np.linalg.eigvalsh(Q)[0]) if len(basis) else 0.0
    return err <= coef_tol and eig >= -eig_tol, err, eig


def check_sos(F: Polynomial, settings: SdpSettings | None = None,
              coef_tol: float = 1e-8, eig_tol: float = 1e-8) -> SosCheck:
    """Decide whether F is a sum of squares.

    Returns a verified Gram witness when it is. Raises :class:`SolverFailure`
    if the solver gives no usable answer either way.
    """
    settings = settings or SdpSettings()
    if F.is_zero():
        b = MonomialBasis((), F.nvars, 0)
        return SosCheck(True, b, np.zeros((0, 0)), 0.0, SdpStatus.FEASIBLE)
    if F.degree() % 2:
        return SosCheck(False)
    if F.min_degree() % 2:
        # lowest-degree part of a sum of squares has even degree
        return SosCheck(False)
    basis = basis_for_support(F.nvars, F.monomials())
    if not basis.entries:
        return SosCheck(False)
    try:
        gram_decompose(F, basis, tol=1e-10)
    except ValueError:
        return SosCheck(False, basis)

    prog = SosProgram(F.nvars)
    prog.add_sos(F, "F")
    sol = prog.solve(settings)
    if sol.status is SdpStatus.INFEASIBLE:
        return SosCheck(False, basis, status=sol.status)
    if sol.ok:
        b, Q = sol.constraint_gram(0)
        good, err, eig = _verify_witness(F, b, Q, coef_tol, eig_tol)
        if good:
            return SosCheck(True, b, Q, eig, sol.status)
    # Fall back to the margin problem: max t s.t. Q - t I >= 0, m^T Q m = F.
    margin, Q = _max_margin(F, basis, settings)
    if margin is None:
        raise SolverFailure(f"SDP solver failed on SOS check (status {sol.status.value})")
    if margin >= -eig_tol:
        good, err, eig = _verify_witness(F, basis, Q, coef_tol, eig_tol)
        if good:
            return SosCheck(True, basis, Q, margin, SdpStatus.OPTIMAL)
        raise SolverFailure(f"witness failed verification (coef err {err:.2e}, eig {eig:.2e})")
    return SosCheck(False, basis, margin=margin, status=SdpStatus.OPTIMAL)


def _max_margin(F: Polynomial, basis: MonomialBasis, settings: SdpSettings):
    """Largest t with F - t * m^T m SOS, as a bounded SDP (t <= 1 by a slack)."""
    prog = SosProgram(F.nvars)
    t = prog.free_scalar("t")
    mtm = basis.quadratic_form(np.eye(len(basis)))
    slack = prog.sos_poly("cap", MonomialBasis(((0,) * F.nvars,), F.nvars, 0))
    prog.add_sos(AffinePoly(F) - t * mtm, "F")
    prog.add_equality(t + slack - 1.0, "cap")
    prog.minimize(-t)
    sol = prog.solve(settings)
    if not sol.ok:
        return None, None
    tval = sol.unknown("t").coef((0,) * F.nvars)
    _, Q = sol.constraint_gram(0)
    return tval, Q + tval * np.eye(len(basis))
