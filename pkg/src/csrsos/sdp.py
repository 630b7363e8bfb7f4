"""Dense semidefinite programs in block form.

Problem (primal)::

    minimize    c_free . u + sum_k <C_k, X_k>
    subject to  A_free u + sum_k <A_ik, X_k> = b_i      for every row i
                X_k positive semidefinite

``u`` is a vector of sign-free variables (polynomial coefficients of
unknowns that carry no SOS requirement). Block variables are addressed by
their lower-triangular entries, so the coefficient stored for ``X_k[p, q]``
with ``p > q`` already accounts for the symmetric partner (it is
``2 * A_ik[p, q]``).

The numerical work is done by cvxopt's cone LP solver (primal-dual
interior point, Nesterov-Todd scaling). Everything it returns is re-checked
here from the raw matrices before a feasible status is reported.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SdpStatus(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"

    @property
    def ok(self) -> bool:
        return self in (SdpStatus.OPTIMAL, SdpStatus.FEASIBLE)


@dataclass(frozen=True)
class SdpSettings:
    eig_tol: float = 1e-8
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iters: int = 200
    verbose: bool = False


def tril_index(n: int) -> list[tuple[int, int]]:
    """Lower-triangular (p >= q) entries of an n x n block, column-major."""
    return [(p, q) for q in range(n) for p in range(q, n)]


@dataclass
class SdpProblem:
    """Block SDP with equality constraints.

    ``A`` has ``n_free + sum(tri(n_k))`` columns: the free variables first,
    then the lower-triangular entries of each block in :func:`tril_index`
    order.
    """

    block_dims: tuple[int, ...]
    n_free: int
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    block_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.block_dims = tuple(int(n) for n in self.block_dims)
        if not self.block_dims and self.n_free == 0:
            raise ValueError("SDP needs at least one variable")
        self.A = sp.csr_matrix(self.A)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.c = np.asarray(self.c, dtype=float).ravel()
        nvar = self.nvar
        if self.A.shape[1] != nvar:
            raise ValueError(f"A has {self.A.shape[1]} columns, expected {nvar}")
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b row counts differ")
        if self.c.size != nvar:
            raise ValueError(f"c has {self.c.size} entries, expected {nvar}")
        if not self.block_names:
            self.block_names = tuple(f"X{k}" for k in range(len(self.block_dims)))

    @property
    def nvar(self) -> int:
        return self.n_free + sum(n * (n + 1) // 2 for n in self.block_dims)

    @property
    def block_offsets(self) -> list[int]:
        offs, o = [], self.n_free
        for n in self.block_dims:
            offs.append(o)
            o += n * (n + 1) // 2
        return offs

    @classmethod
    def from_matrices(cls, block_dims, constraints, b, objective=None, n_free=0,
                      free_constraints=None, free_objective=None, block_names=()):
        """Build from per-block symmetric coefficient matrices.

        ``constraints[i][k]`` is the symmetric matrix A_ik (or None);
        ``objective[k]`` the symmetric C_k.
        """
        block_dims = tuple(block_dims)
        m = len(constraints)
        cols = []
        for k, n in enumerate(block_dims):
            idx = tril_index(n)
            blk = np.zeros((m, len(idx)))
            for i in range(m):
                Ak = constraints[i][k] if constraints[i] is not None else None
                if Ak is None:
                    continue
                Ak = np.asarray(Ak, dtype=float)
                for j, (p, q) in enumerate(idx):
                    blk[i, j] = Ak[p, q] if p == q else Ak[p, q] + Ak[q, p]
            cols.append(blk)
        Af = np.zeros((m, n_free)) if free_constraints is None else np.asarray(free_constraints, float)
        A = np.hstack([Af] + cols) if cols else Af
        c_parts = [np.zeros(n_free) if free_objective is None else np.asarray(free_objective, float)]
        for k, n in enumerate(block_dims):
            Ck = None if objective is None else objective[k]
            if Ck is None:
                c_parts.append(np.zeros(n * (n + 1) // 2))
            else:
                Ck = np.asarray(Ck, float)
                c_parts.append(np.array([Ck[p, q] if p == q else Ck[p, q] + Ck[q, p]
                                         for p, q in tril_index(n)]))
        return cls(block_dims, n_free, sp.csr_matrix(A), np.asarray(b, float),
                   np.concatenate(c_parts), tuple(block_names))

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Split a variable vector into free part and symmetric blocks."""
        x = np.asarray(x, dtype=float)
        u = x[: self.n_free].copy()
        blocks = []
        for off, n in zip(self.block_offsets, self.block_dims):
            X = np.zeros((n, n))
            for j, (p, q) in enumerate(tril_index(n)):
                X[p, q] = X[q, p] = x[off + j]
            blocks.append(X)
        return u, blocks

    def to_json(self) -> str:
        """Sparse-triplet dump for debugging."""
        coo = self.A.tocoo()
        return json.dumps({
            "block_dims": list(self.block_dims),
            "block_names": list(self.block_names),
            "n_free": self.n_free,
            "n_rows": int(self.A.shape[0]),
            "A": [[int(i), int(j), float(v)] for i, j, v in zip(coo.row, coo.col, coo.data)],
            "b": self.b.tolist(),
            "c": [[int(j), float(v)] for j, v in enumerate(self.c) if v != 0.0],
        }, indent=1)


@dataclass
class SdpSolution:
    status: SdpStatus
    free: np.ndarray = field(default_factory=lambda: np.zeros(0))
    blocks: list[np.ndarray] = field(default_factory=list)
    dual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    gap: float = np.inf
    min_eig: float = -np.inf
    objective: float = np.nan
    iterations: int = 0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status.ok


def _cvxopt_data(prob: SdpProblem):
    from cvxopt import matrix, spmatrix

    nvar = prob.nvar
    # G x + s = h with s the stacked full blocks: s = X (only lower triangle read).
    rows, cols, vals = [], [], []
    srow = 0
    for off, n in zip(prob.block_offsets, prob.block_dims):
        for j, (p, q) in enumerate(tril_index(n)):
            rows.append(srow + p + q * n)
            cols.append(off + j)
            vals.append(-1.0)
        srow += n * n
    G = spmatrix(vals, rows, cols, (srow, nvar)) if srow else spmatrix([], [], [], (0, nvar))
    h = matrix(0.0, (srow, 1))
    coo = prob.A.tocoo()
    A = spmatrix(coo.data.tolist(), coo.row.tolist(), coo.col.tolist(), (prob.A.shape[0], nvar))
    b = matrix(prob.b.tolist(), (prob.b.size, 1), "d")
    c = matrix(prob.c.tolist(), (nvar, 1), "d")
    return c, G, h, A, b


def _presolve_rows(prob: SdpProblem, tol: float):
    """Drop empty rows (rhs must vanish) and exactly duplicated rows.

    Returns (kept_row_indices, inconsistent) where ``inconsistent`` flags an
    empty row with nonzero rhs.
    """
    A = prob.A.tocsr()
    keep, seen = [], {}
    inconsistent = False
    for i in range(A.shape[0]):
        start, end = A.indptr[i], A.indptr[i + 1]
        idx = A.indices[start:end]
        val = A.data[start:end]
        mask = val != 0.0
        idx, val = idx[mask], val[mask]
        if idx.size == 0:
            if abs(prob.b[i]) > tol:
                inconsistent = True
            continue
        order = np.argsort(idx)
        key = (tuple(idx[order]), tuple(val[order]))
        if key in seen:
            if abs(prob.b[seen[key]] - prob.b[i]) > tol:
                inconsistent = True
            continue
        seen[key] = i
        keep.append(i)
    return keep, inconsistent


def _rank_basis(M: np.ndarray, tol: float) -> np.ndarray:
    """Indices of a maximal independent set of columns of M (pivoted QR)."""
    if M.size == 0:
        return np.arange(M.shape[1])
    _, R, piv = scipy.linalg.qr(M, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return np.zeros(0, dtype=int)
    r = int(np.sum(d > tol * d[0]))
    return np.sort(piv[:r])


def _presolve_rank(prob: SdpProblem, rows: list[int], tol: float = 1e-10):
    """Remove linearly dependent free columns and rows.

    Dependent free columns are fixed at zero, which loses nothing when the
    objective is consistent with the dependency. Dependent rows are dropped
    after checking that their right-hand sides agree.
    Returns (rows, columns, inconsistent).
    """
    A = prob.A[rows].toarray()
    b = prob.b[rows]
    nf = prob.n_free
    cols = np.arange(prob.nvar)
    if nf:
        Af = A[:, :nf]
        kept = _rank_basis(Af, tol)
        if kept.size < nf:
            dropped = np.setdiff1d(np.arange(nf), kept)
            T = np.linalg.lstsq(Af[:, kept], Af[:, dropped], rcond=None)[0]
            cf = prob.c[:nf]
            if np.allclose(T.T @ cf[kept], cf[dropped], atol=1e-12):
                cols = np.concatenate([kept, np.arange(nf, prob.nvar)])
    Ak = A[:, cols]
    kr = _rank_basis(Ak.T, tol)
    inconsistent = False
    if kr.size < len(rows):
        dropped = np.setdiff1d(np.arange(len(rows)), kr)
        W = np.linalg.lstsq(Ak[kr].T, Ak[dropped].T, rcond=None)[0]
        scale = max(1.0, float(np.max(np.abs(b)))) if b.size else 1.0
        if np.max(np.abs(W.T @ b[kr] - b[dropped])) > 1e-8 * scale:
            inconsistent = True
    return [rows[i] for i in kr], cols, inconsistent


def certify(prob: SdpProblem, x: np.ndarray, y: np.ndarray | None = None,
            z_blocks: list[np.ndarray] | None = None) -> dict:
    """Residuals recomputed from the returned point only."""
    u, blocks = prob.unpack(x)
    r = prob.A @ x - prob.b
    pres = float(np.max(np.abs(r))) if r.size else 0.0
    min_eig = min((float(np.linalg.eigvalsh(X)[0]) for X in blocks), default=np.inf)
    out = {"primal_residual": pres, "min_eig": min_eig, "objective": float(prob.c @ x)}
    if y is not None:
        # dual: c - A^T y = slack; free part of slack must vanish, block part is Z
        s = prob.c - prob.A.T @ y
        dres = float(np.max(np.abs(s[: prob.n_free]))) if prob.n_free else 0.0
        out["dual_residual"] = dres
        out["gap"] = abs(float(prob.c @ x - prob.b @ y))
    return out


def solve(prob: SdpProblem, settings: SdpSettings | None = None) -> SdpSolution:
    """Solve ``prob``; deterministic for identical inputs and settings."""
    from cvxopt import solvers, matrix

    settings = settings or SdpSettings()
    keep, inconsistent = _presolve_rows(prob, settings.feas_tol)
    if inconsistent:
        return SdpSolution(SdpStatus.INFEASIBLE, message="inconsistent coefficient rows")
    keep, cols, inconsistent = _presolve_rank(prob, keep)
    if inconsistent:
        return SdpSolution(SdpStatus.INFEASIBLE, message="inconsistent dependent rows")
    n_free = prob.n_free - (prob.nvar - cols.size)
    reduced = SdpProblem(prob.block_dims, n_free, prob.A[keep][:, cols], prob.b[keep], prob.c[cols],
                         prob.block_names)
    c, G, h, A, b = _cvxopt_data(reduced)
    dims = {"l": 0, "q": [], "s": list(reduced.block_dims)}
    opts = {
        "show_progress": settings.verbose,
        "maxiters": settings.max_iters,
        "abstol": settings.gap_tol * 1e-2,
        "reltol": settings.gap_tol * 1e-1,
        "feastol": settings.feas_tol * 1e-2,
        "refinement": 2,
    }
    try:
        res = solvers.conelp(c, G, h, dims, A, b, options=opts)
    except (ArithmeticError, ValueError) as exc:
        log.debug("cvxopt raised %s", exc)
        return SdpSolution(SdpStatus.NUMERICAL_FAILURE, message=str(exc))

    status = res["status"]
    iters = int(res.get("iterations", 0) or 0)
    if status == "primal infeasible":
        return SdpSolution(SdpStatus.INFEASIBLE, iterations=iters, message=status)
    if status == "dual infeasible":
        return SdpSolution(SdpStatus.UNBOUNDED, iterations=iters, message=status)
    if res["x"] is None:
        return SdpSolution(SdpStatus.NUMERICAL_FAILURE, iterations=iters, message=status)

    x = np.zeros(prob.nvar)
    x[cols] = np.array(res["x"]).ravel()
    y_red = np.array(res["y"]).ravel() if res["y"] is not None else np.zeros(len(keep))
    y = np.zeros(prob.b.size)
    y[keep] = -y_red  # cvxopt uses c + A^T y + G^T z = 0
    cert = certify(prob, x, y)
    u, blocks = prob.unpack(x)
    sol = SdpSolution(
        status=SdpStatus.NUMERICAL_FAILURE,
        free=u,
        blocks=blocks,
        dual=y,
        primal_residual=cert["primal_residual"],
        dual_residual=cert["dual_residual"],
        gap=cert["gap"],
        min_eig=cert["min_eig"],
        objective=cert["objective"],
        iterations=iters,
        message=status,
    )
    is_feas_problem = not np.any(prob.c)
    gap_ok = is_feas_problem or sol.gap <= settings.gap_tol * max(1.0, abs(sol.objective))
    if (sol.primal_residual <= settings.feas_tol and sol.min_eig >= -settings.eig_tol and gap_ok
            and status in ("optimal", "unknown")):
        if status == "optimal" or is_feas_problem:
            sol.status = SdpStatus.FEASIBLE if is_feas_problem else SdpStatus.OPTIMAL
    if settings.verbose:
        log.info("sdp %s: iters=%d pres=%.2e gap=%.2e mineig=%.2e", sol.status.value, iters,
                 sol.primal_residual, sol.gap, sol.min_eig)
    return sol
