"""Lyapunov estimates of the constrained stability region via SOS programs.

Conventions: the estimate is ``{V <= 1}`` on the manifold ``{g = 0}``; the
shape being expanded is ``P_beta = {p <= beta}``; ``l(z) = eps * z^T z``.

The four certificate families that define an estimate, for known V and
multipliers, are::

    positivity   s2 V - lam1.g - l                      is SOS
    containment  -s6 (beta - p) - lam2.g - (V - 1)      is SOS
    decrease     -s8 (1 - V) - s9 dV/dt - lam3.g - l    is SOS
    feasibility  -sh_j (1 - V) - lamh_j.g + h_j         is SOS   (every j)

s2 and s9 are normalized to constant term 1 (each family is homogeneous in
its multipliers up to the small ``l`` term, so this only rescales eps).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .poly import Polynomial, lie_derivative, monomials_up_to, squared_norm
from .powersys import ConstrainedPolySystem
from .sdp import SdpSettings, SdpStatus
from .sos import AffinePoly, SosProgram, SosSolution, SolverFailure, check_sos, make_basis

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    """An SOS step that must be feasible was not."""


@dataclass(frozen=True)
class DegreeProfile:
    V: int = 2
    s2: int = 0
    s6: int = 0
    s8: int = 2
    s9: int = 0
    lambda1: int = 0
    lambda2: int = 0
    lambda3: int = 2
    s_h: int = 0
    lambda_h: int = 0
    # multipliers of the local (fixed p) problem; its decrease condition
    # carries s6 (beta - p) next to dV/dt, which needs degree >= deg(dV/dt)
    local_s6: int = 2
    local_lambda2: int = 2
    local_s9: int = 0
    local_lambda3: int = 0

    def __post_init__(self):
        for name in ("s2", "s6", "s8", "s9", "s_h", "local_s6", "local_s9"):
            d = getattr(self, name)
            if d < 0 or d % 2:
                raise ValueError(f"SOS multiplier {name} must have even non-negative degree, got {d}")
        if self.V < 1:
            raise ValueError("V needs degree >= 1")

    def check_system(self, sys: ConstrainedPolySystem) -> None:
        """Reject profiles whose assembled constraints have odd top degree."""
        df = max(fi.degree() for fi in sys.f)
        dg = max((gi.degree() for gi in sys.g), default=0)
        dh = max((hi.degree() for hi in sys.h), default=0)
        dVdot = self.V - 1 + df
        decrease = max(self.s8 + self.V, self.s9 + dVdot, (self.lambda3 + dg) if sys.g else 0, 2)
        if decrease % 2:
            raise ValueError(f"decrease constraint has odd degree {decrease}")
        if sys.h:
            feas = max(self.s_h + self.V, dh, (self.lambda_h + dg) if sys.g else 0)
            if feas % 2:
                raise ValueError(f"feasibility constraint has odd degree {feas}")


@dataclass(frozen=True)
class RoaOptions:
    eps: float = 1e-6
    beta_tol: float = 1e-3
    max_solves: int = 50
    beta_max: float = 1e4
    inner_tol: float = 1e-3
    max_inner: int = 20
    outer_tol: float = 1e-4
    max_outer: int = 10
    # near-boundary probes that stall are counted as infeasible after this cap
    sdp: SdpSettings = field(default_factory=lambda: SdpSettings(max_iters=50))
    verify: bool = True


@dataclass
class LyapunovCertificate:
    V: Polynomial
    beta_history: list[list[float]]
    multipliers: dict[str, Polynomial]
    p_final: Polynomial
    profile: DegreeProfile
    options: RoaOptions
    labels: list[str]
    local_beta: float = float("nan")
    verified: bool = False

    @property
    def level(self) -> float:
        return 1.0

    def to_dict(self) -> dict:
        opts = asdict(self.options)
        return {
            "V": self.V.to_json(),
            "V_text": self.V.to_string(self.labels, ".17g"),
            "level": 1.0,
            "labels": list(self.labels),
            "beta_history": [[float(b) for b in run] for run in self.beta_history],
            "local_beta": float(self.local_beta),
            "p_final": self.p_final.to_json(),
            "multipliers": {k: self.multipliers[k].to_json() for k in sorted(self.multipliers)},
            "degree_profile": asdict(self.profile),
            "tolerances": opts,
            "verified": bool(self.verified),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LyapunovCertificate":
        opts = dict(d.get("tolerances", {}))
        sdp = SdpSettings(**opts.pop("sdp", {})) if "sdp" in opts else SdpSettings()
        return cls(
            V=Polynomial.from_json(d["V"]),
            beta_history=[list(r) for r in d.get("beta_history", [])],
            multipliers={k: Polynomial.from_json(v) for k, v in d.get("multipliers", {}).items()},
            p_final=Polynomial.from_json(d["p_final"]),
            profile=DegreeProfile(**d.get("degree_profile", {})),
            options=RoaOptions(sdp=sdp, **opts),
            labels=list(d.get("labels", [])),
            local_beta=float(d.get("local_beta", float("nan"))),
            verified=bool(d.get("verified", False)),
        )


# ---------------------------------------------------------------------------
# helpers


def _zero(n: int) -> Polynomial:
    return Polynomial.zero(n)


def _sos_mult(prog: SosProgram, name: str, degree: int, n: int, constant: bool = True) -> AffinePoly:
    """SOS multiplier of the given degree; without constant term if requested."""
    if not constant and degree == 0:
        return AffinePoly(_zero(n))
    return prog.sos_poly(name, make_basis(n, degree // 2, include_constant=constant))


def _free_mult(prog: SosProgram, name: str, degree: int, n: int) -> AffinePoly:
    return prog.free_poly(name, monomials_up_to(n, degree))


def _lam_dot_g(prog: SosProgram, name: str, degree: int, g: list[Polynomial], n: int) -> AffinePoly:
    out = AffinePoly(_zero(n))
    for k, gk in enumerate(g):
        out = out + _free_mult(prog, f"{name}_{k + 1}", degree, n) * gk
    return out


def _fixed_one_sos(prog: SosProgram, name: str, degree: int, n: int) -> AffinePoly:
    """SOS multiplier whose constant term is pinned to 1."""
    if degree == 0:
        return AffinePoly(Polynomial.constant(n, 1.0))
    s = prog.sos_poly(name, make_basis(n, degree // 2))
    prog.add_equality(_constant_part(s) - 1.0, f"{name}_norm")
    return s


def _constant_part(e: AffinePoly) -> AffinePoly:
    n = e.nvars
    cut = lambda p: p.homogeneous_part(0)
    return AffinePoly(cut(e.const), {k: cut(p) for k, p in e.lin.items()})


def _unknown_V(prog: SosProgram, n: int, degree: int) -> AffinePoly:
    return prog.free_poly("V", monomials_up_to(n, degree, 1))


def line_search(feasible: Callable[[float], object | None], lo: float, tol: float,
                max_solves: int, beta_max: float, lo_solution=None, step: float | None = None):
    """Largest beta (to ``tol``) for which ``feasible`` returns a solution.

    ``lo`` is assumed feasible. Steps up by doubling increments (starting
    from ``step``, default a tenth of ``lo``), then bisects.
    Returns (beta, solution_at_beta, n_solves).
    """
    best, best_sol = lo, lo_solution
    step = max(2 * tol, step if step is not None else 0.1 * abs(lo))
    hi = None
    n = 0
    while n < max_solves:
        cand = best + step
        if cand > beta_max:
            hi = beta_max
            break
        sol = feasible(cand)
        n += 1
        if sol is None:
            hi = cand
            break
        best, best_sol = cand, sol
        step *= 2.0
    if hi is None:
        return best, best_sol, n
    while hi - best > tol and n < max_solves:
        mid = 0.5 * (best + hi)
        sol = feasible(mid)
        n += 1
        if sol is None:
            hi = mid
        else:
            best, best_sol = mid, sol
    return best, best_sol, n


def _solve(prog: SosProgram, opts: RoaOptions) -> SosSolution | None:
    sol = prog.solve(opts.sdp)
    if sol.ok:
        return sol
    if sol.status is SdpStatus.NUMERICAL_FAILURE:
        log.debug("SDP numerical failure treated as infeasible (%s)", sol.sdp.message)
    return None


# ---------------------------------------------------------------------------
# local estimate


def _local_program(sys: ConstrainedPolySystem, prof: DegreeProfile, opts: RoaOptions,
                   p: Polynomial, beta: float) -> SosProgram:
    n = sys.nvars
    prog = SosProgram(n)
    l_term = opts.eps * squared_norm(n)
    V = _unknown_V(prog, n, prof.V)
    # scale normalization: sum of pure-square coefficients of V equals n
    squares = [tuple(2 if k == i else 0 for k in range(n)) for i in range(n)]
    norm = AffinePoly(_zero(n))
    for vid, mono in V.lin.items():
        (m, c), = mono.items()
        if m in squares:
            norm = norm + AffinePoly(_zero(n), {vid: Polynomial.constant(n, c)})
    prog.add_equality(norm - float(n), "V_scale")
    Vdot = AffinePoly(_zero(n), {k: lie_derivative(q, sys.f) for k, q in V.lin.items()})
    s2 = _sos_mult(prog, "s2", prof.s2, n, constant=False)
    s6 = _sos_mult(prog, "s6", prof.local_s6, n, constant=False)
    gap = beta - p
    prog.add_sos(V - s2 * gap - _lam_dot_g(prog, "lam1", prof.lambda1, sys.g, n) - l_term, "positivity")
    prog.add_sos(-(s6 * gap) - Vdot - _lam_dot_g(prog, "lam2", prof.local_lambda2, sys.g, n) - l_term,
                 "decrease")
    for j, hj in enumerate(sys.h):
        s9 = _sos_mult(prog, f"s9_{j + 1}", prof.local_s9, n)
        prog.add_sos(hj - s9 * gap - _lam_dot_g(prog, f"lam3_{j + 1}", prof.local_lambda3, sys.g, n),
                     f"feasibility_{j + 1}")
    return prog


def _level_program(sys: ConstrainedPolySystem, prof: DegreeProfile, opts: RoaOptions,
                   V: Polynomial, gamma: float) -> SosProgram:
    """{V <= gamma} lies where dV/dt < 0 and every h_j >= 0 (on the manifold)."""
    n = sys.nvars
    prog = SosProgram(n)
    l_term = opts.eps * squared_norm(n)
    Vdot = lie_derivative(V, sys.f)
    s8 = _sos_mult(prog, "s8", prof.s8, n, constant=False)
    s9 = _fixed_one_sos(prog, "s9", prof.s9, n)
    prog.add_sos(-(s8 * (gamma - V)) - s9 * Vdot - _lam_dot_g(prog, "lam3", prof.lambda3, sys.g, n)
                 - l_term, "decrease")
    for j, hj in enumerate(sys.h):
        sh = _sos_mult(prog, f"sh_{j + 1}", prof.s_h, n)
        prog.add_sos(hj - sh * (gamma - V) - _lam_dot_g(prog, f"lamh_{j + 1}", prof.lambda_h, sys.g, n),
                     f"feasibility_{j + 1}")
    return prog


def local_lyapunov(sys: ConstrainedPolySystem, prof: DegreeProfile | None = None,
                   opts: RoaOptions | None = None, p: Polynomial | None = None):
    """Local Lyapunov function V0 (scaled so {V0 <= 1} is a valid estimate) and beta0.

    beta0 is the largest beta for which V decreases on ``{p <= beta}``.
    """
    prof = prof or DegreeProfile()
    opts = opts or RoaOptions()
    prof.check_system(sys)
    n = sys.nvars
    p = p if p is not None else squared_norm(n)

    def feas(beta):
        return _solve(_local_program(sys, prof, opts, p, beta), opts)

    # find any feasible beta: shrink from a small seed
    beta = 1e-2
    sol = None
    for _ in range(12):
        sol = feas(beta)
        if sol is not None:
            break
        beta *= 0.25
    if sol is None:
        raise EstimationError("local Lyapunov problem infeasible for every tried beta > 0; "
                              "check the degree profile and the system model")
    beta0, sol, ns = line_search(feas, beta, opts.beta_tol * max(beta, 1e-3) if beta < 1e-2
                                 else opts.beta_tol, opts.max_solves, opts.beta_max, sol)
    V0 = sol.unknown("V")
    log.info("local estimate: beta0=%.6g after %d solves", beta0, ns)

    # scale so that the certified level is 1
    def lev(gamma):
        return _solve(_level_program(sys, prof, opts, V0, gamma), opts)

    gamma = None
    for g0 in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        s = lev(g0)
        if s is not None:
            gamma, _, _ = line_search(lev, g0, opts.beta_tol * g0 if g0 < 1 else opts.beta_tol,
                                      opts.max_solves, opts.beta_max, s)
            break
    if gamma is None:
        raise EstimationError("no level set of the local Lyapunov function could be certified")
    log.info("local estimate: level gamma=%.6g", gamma)
    return V0 / gamma, beta0


# ---------------------------------------------------------------------------
# expanding interior


@dataclass
class _Multipliers:
    s2: Polynomial
    s8: Polynomial
    s9: Polynomial
    sh: list[Polynomial]


def _fixed_V_parts(sys, prof, opts, V: Polynomial):
    """Multipliers for positivity, decrease and feasibility with V known."""
    n = sys.nvars
    l_term = opts.eps * squared_norm(n)
    Vdot = lie_derivative(V, sys.f)
    out = {}

    prog = SosProgram(n)
    s2 = _fixed_one_sos(prog, "s2", prof.s2, n)
    prog.add_sos(s2 * V - _lam_dot_g(prog, "lam1", prof.lambda1, sys.g, n) - l_term, "positivity")
    sol = _solve(prog, opts)
    if sol is None:
        raise EstimationError("positivity certificate infeasible for the current V")
    out["s2"] = sol.value(s2)

    prog = SosProgram(n)
    s8 = _sos_mult(prog, "s8", prof.s8, n, constant=False)
    s9 = _fixed_one_sos(prog, "s9", prof.s9, n)
    prog.add_sos(-(s8 * (1.0 - V)) - s9 * Vdot - _lam_dot_g(prog, "lam3", prof.lambda3, sys.g, n)
                 - l_term, "decrease")
    sol = _solve(prog, opts)
    if sol is None:
        raise EstimationError("decrease certificate infeasible for the current V")
    out["s8"], out["s9"] = sol.value(s8), sol.value(s9)

    out["sh"] = []
    for j, hj in enumerate(sys.h):
        prog = SosProgram(n)
        sh = _sos_mult(prog, "sh", prof.s_h, n)
        prog.add_sos(hj - sh * (1.0 - V) - _lam_dot_g(prog, "lamh", prof.lambda_h, sys.g, n),
                     "feasibility")
        sol = _solve(prog, opts)
        if sol is None:
            raise EstimationError(f"feasibility certificate {j + 1} infeasible for the current V")
        out["sh"].append(sol.value(sh))
    return _Multipliers(out["s2"], out["s8"], out["s9"], out["sh"])


def _containment_program(sys, prof, opts, V: Polynomial, p: Polynomial, beta: float) -> SosProgram:
    n = sys.nvars
    prog = SosProgram(n)
    s6 = _sos_mult(prog, "s6", prof.s6, n)
    prog.add_sos(-(s6 * (beta - p)) - _lam_dot_g(prog, "lam2", prof.lambda2, sys.g, n) - (V - 1.0),
                 "containment")
    return prog


def _joint_program(sys, prof, opts, mult: _Multipliers, p: Polynomial, beta: float):
    """All four families with V unknown and s2, s8, s9, sh fixed."""
    n = sys.nvars
    prog = SosProgram(n)
    l_term = opts.eps * squared_norm(n)
    V = _unknown_V(prog, n, prof.V)
    Vdot = AffinePoly(_zero(n), {k: lie_derivative(q, sys.f) for k, q in V.lin.items()})
    s6 = _sos_mult(prog, "s6", prof.s6, n)
    terms = {"V": V, "s6": s6}
    lam1 = _lam_dot_g(prog, "lam1", prof.lambda1, sys.g, n)
    lam2 = _lam_dot_g(prog, "lam2", prof.lambda2, sys.g, n)
    lam3 = _lam_dot_g(prog, "lam3", prof.lambda3, sys.g, n)
    prog.add_sos(V * mult.s2 - lam1 - l_term, "positivity")
    prog.add_sos(-(s6 * (beta - p)) - lam2 - (V - 1.0), "containment")
    prog.add_sos((V - 1.0) * mult.s8 - Vdot * mult.s9 - lam3 - l_term, "decrease")
    terms.update(lam1=lam1, lam2=lam2, lam3=lam3)
    for j, (hj, sh) in enumerate(zip(sys.h, mult.sh)):
        lamh = _lam_dot_g(prog, f"lamh_{j + 1}", prof.lambda_h, sys.g, n)
        prog.add_sos(hj - (1.0 - V) * sh - lamh, f"feasibility_{j + 1}")
        terms[f"lamh_{j + 1}"] = lamh
    return prog, terms


def expanding_interior(sys: ConstrainedPolySystem, p: Polynomial, beta0: float, V0: Polynomial,
                       prof: DegreeProfile | None = None, opts: RoaOptions | None = None):
    """Alternate between multipliers (V fixed) and V (multipliers fixed).

    Returns (V, beta, multipliers, beta_history).
    """
    prof = prof or DegreeProfile()
    opts = opts or RoaOptions()
    V, beta = V0, beta0
    history = [beta0]
    decoded: dict[str, Polynomial] = {}
    for it in range(opts.max_inner):
        t0 = time.perf_counter()
        try:
            mult = _fixed_V_parts(sys, prof, opts, V)
        except EstimationError as exc:
            raise EstimationError(f"expanding interior, iteration {it}: {exc}") from None

        def contain(b):
            return _solve(_containment_program(sys, prof, opts, V, p, b), opts)

        if it == 0 and contain(beta) is None:
            raise EstimationError(f"warm start infeasible: {{p <= {beta:.4g}}} not inside {{V <= 1}}")
        beta_ii, _, n1 = line_search(contain, beta, opts.beta_tol, opts.max_solves, opts.beta_max)

        def joint(b):
            prog, terms = _joint_program(sys, prof, opts, mult, p, b)
            sol = _solve(prog, opts)
            return None if sol is None else (sol, terms)

        start = joint(beta_ii)
        if start is None:
            # the fixed-V point is feasible in exact arithmetic; back off a tolerance step
            beta_ii = max(beta, beta_ii - opts.beta_tol)
            start = joint(beta_ii)
            if start is None:
                raise EstimationError(f"expanding interior, iteration {it}: V step infeasible at "
                                      f"beta={beta_ii:.6g}")
        growth = history[-1] - history[-2] if len(history) > 1 else None
        beta_iii, res, n2 = line_search(joint, beta_ii, opts.beta_tol, opts.max_solves,
                                        opts.beta_max, start, growth)
        sol, terms = res
        V = sol.value(terms["V"])
        decoded = {"s2": mult.s2, "s8": mult.s8, "s9": mult.s9, "s6": sol.value(terms["s6"]),
                   "lam1.g": sol.value(terms["lam1"]), "lam2.g": sol.value(terms["lam2"]),
                   "lam3.g": sol.value(terms["lam3"])}
        for j, sh in enumerate(mult.sh):
            decoded[f"sh_{j + 1}"] = sh
            decoded[f"lamh_{j + 1}.g"] = sol.value(terms[f"lamh_{j + 1}"])
        log.info("expanding interior it=%d: beta %.6g -> %.6g -> %.6g (%d+%d solves, %.1fs)",
                 it, history[-1], beta_ii, beta_iii, n1, n2, time.perf_counter() - t0)
        prev = history[-1]
        history.append(beta_iii)
        beta = beta_iii
        if abs(beta_iii - prev) <= opts.inner_tol:
            break
    return V, beta, decoded, history


def certificate_polynomials(sys: ConstrainedPolySystem, V: Polynomial, p: Polynomial, beta: float,
                            mult: dict[str, Polynomial], eps: float) -> dict[str, Polynomial]:
    """Assemble the four certificate families from decoded multipliers."""
    n = sys.nvars
    l_term = eps * squared_norm(n)
    Vdot = lie_derivative(V, sys.f)
    z = _zero(n)
    out = {
        "positivity": mult["s2"] * V - mult.get("lam1.g", z) - l_term,
        "containment": -(mult["s6"] * (beta - p)) - mult.get("lam2.g", z) - (V - 1.0),
        "decrease": -(mult["s8"] * (1.0 - V)) - mult["s9"] * Vdot - mult.get("lam3.g", z) - l_term,
    }
    for j, hj in enumerate(sys.h):
        out[f"feasibility_{j + 1}"] = hj - mult[f"sh_{j + 1}"] * (1.0 - V) - mult.get(f"lamh_{j + 1}.g", z)
    return out


def verify_certificate(sys, V, p, beta, mult, eps, settings: SdpSettings | None = None) -> dict[str, bool]:
    """Independent SOS re-check of every assembled family."""
    out = {}
    for name, poly in certificate_polynomials(sys, V, p, beta, mult, eps).items():
        try:
            out[name] = check_sos(poly, settings).is_sos
        except SolverFailure:
            out[name] = False
    return out


def estimate_csr(sys: ConstrainedPolySystem, prof: DegreeProfile | None = None,
                 opts: RoaOptions | None = None) -> LyapunovCertificate:
    """Local estimate, then expanding interior with p updated to V each round."""
    prof = prof or DegreeProfile()
    opts = opts or RoaOptions()
    prof.check_system(sys)
    n = sys.nvars
    V0, beta_local = local_lyapunov(sys, prof, opts)
    p = squared_norm(n)
    beta = 0.0
    V = V0
    history = []
    mult: dict[str, Polynomial] = {}
    p_used = p
    for j in range(opts.max_outer):
        V_new, beta, mult, hist = expanding_interior(sys, p, beta, V, prof, opts)
        history.append(hist)
        p_used = p
        change = max((abs(c) for c in (V_new - V).terms.values()), default=0.0)
        log.info("outer iteration %d: final beta %.6g, max V change %.3g", j, beta, change)
        V = V_new
        # stop at a fixpoint of V, or once a round no longer enlarges {p <= 1}
        if j > 0 and (change < opts.outer_tol or beta - 1.0 <= opts.inner_tol):
            break
        if j + 1 < opts.max_outer:
            p, beta = V, 1.0
    labels = list(sys.labels) if sys.labels else [f"z{i + 1}" for i in range(n)]
    cert = LyapunovCertificate(V, history, mult, p_used, prof, opts, labels, beta_local)
    if opts.verify:
        checks = verify_certificate(sys, V, p_used, history[-1][-1], mult, opts.eps, opts.sdp)
        cert.verified = all(checks.values())
        if not cert.verified:
            log.warning("certificate re-verification failed: %s", checks)
    return cert


# ---------------------------------------------------------------------------
# sampling check


@dataclass
class CheckReport:
    n_samples: int
    n_inside: int
    positivity_violations: int
    decrease_violations: int
    feasibility_violations: int
    min_V_off_origin: float
    max_Vdot_inside: float
    min_h_inside: float

    @property
    def violations(self) -> int:
        return self.positivity_violations + self.decrease_violations + self.feasibility_violations

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _offsets_to_z(sys: ConstrainedPolySystem, y: np.ndarray) -> np.ndarray:
    """Offsets from the SEP (angles then speeds) to z; identity without angles."""
    if not sys.angle_pairs:
        return y
    m = len(sys.angle_pairs)
    return sys.state_to_z(np.hstack([sys.sep + y[:, :m], y[:, m:]]))


def first_crossing(sys: ConstrainedPolySystem, V: Polynomial, dirs: np.ndarray,
                   t_max: float = 4 * np.pi, n_coarse: int = 400, n_bisect: int = 50) -> np.ndarray:
    """Distance along each ray from the SEP to the first point with V > 1.

    Rays that stay inside up to ``t_max`` report ``t_max``.
    """
    ts = np.linspace(0.0, t_max, n_coarse + 1)[1:]
    radius = np.full(dirs.shape[0], t_max)
    lo = np.zeros(dirs.shape[0])
    hi = np.full(dirs.shape[0], np.inf)
    for t in ts:
        open_ = np.isinf(hi)
        if not open_.any():
            break
        out = V.evaluate(_offsets_to_z(sys, dirs[open_] * t)) > 1.0
        idx = np.flatnonzero(open_)
        hi[idx[out]] = t
        lo[idx[~out]] = t
    found = np.isfinite(hi)
    lo_f, hi_f, d = lo[found], hi[found], dirs[found]
    for _ in range(n_bisect):
        mid = 0.5 * (lo_f + hi_f)
        ins = V.evaluate(_offsets_to_z(sys, d * mid[:, None])) <= 1.0
        lo_f = np.where(ins, mid, lo_f)
        hi_f = np.where(ins, hi_f, mid)
    radius[found] = lo_f
    return radius


def sample_sublevel(sys: ConstrainedPolySystem, V: Polynomial, n: int, rng: np.random.Generator,
                    boundary: bool = False, **kw) -> np.ndarray:
    """Offsets from the SEP inside the connected part of {V <= 1} seen from the SEP.

    Random directions, then a uniform-volume fraction of the distance to the
    first crossing (or 0.999 of it when ``boundary``).
    """
    dim = 2 * len(sys.angle_pairs) if sys.angle_pairs else sys.nvars
    dirs = rng.normal(size=(n, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = first_crossing(sys, V, dirs, **kw)
    frac = np.full(n, 0.999) if boundary else rng.uniform(0.0, 1.0, n) ** (1.0 / dim)
    return dirs * (r * frac)[:, None]


def sample_manifold(sys: ConstrainedPolySystem, V: Polynomial, n_samples: int,
                    rng: np.random.Generator, speed_box: float = 10.0,
                    z_box: float = 2.0) -> np.ndarray:
    """Points z on {g = 0}: half inside {V <= 1}, half spread over a wide box."""
    n_in = n_samples // 2
    n_glob = n_samples - n_in
    if sys.angle_pairs:
        m = len(sys.angle_pairs)
        glob = np.hstack([rng.uniform(-np.pi, np.pi, (n_glob, m)),
                          rng.uniform(-speed_box, speed_box, (n_glob, m))])
    else:
        glob = rng.uniform(-z_box, z_box, (n_glob, sys.nvars))
    inner = sample_sublevel(sys, V, n_in, rng)
    return _offsets_to_z(sys, np.vstack([inner, glob]))


def slice_level_set(sys: ConstrainedPolySystem, V: Polynomial, axes: tuple[int, int] = (0, 1),
                    n_dirs: int = 720, t_max: float = 4 * np.pi):
    """Boundary of {V <= 1} on a coordinate plane through the SEP.

    Returns (points, area): offsets of the boundary along ``n_dirs`` rays and
    the enclosed (star-shaped) area by the shoelace formula.
    """
    dim = 2 * len(sys.angle_pairs) if sys.angle_pairs else sys.nvars
    th = np.linspace(0.0, 2 * np.pi, n_dirs, endpoint=False)
    dirs = np.zeros((n_dirs, dim))
    dirs[:, axes[0]] = np.cos(th)
    dirs[:, axes[1]] = np.sin(th)
    r = first_crossing(sys, V, dirs, t_max=t_max)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    x, y = pts[:, 0], pts[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return pts, float(area)


def certificate_check(sys: ConstrainedPolySystem, V: Polynomial, n_samples: int = 10_000,
                      seed: int = 0, origin_radius: float = 1e-9, **kw) -> CheckReport:
    """Sample the manifold and test the three Lyapunov conditions pointwise."""
    rng = np.random.default_rng(seed)
    z = sample_manifold(sys, V, n_samples, rng, **kw)
    r = np.linalg.norm(z, axis=1)
    z = z[r > origin_radius]
    v = V.evaluate(z)
    vdot = lie_derivative(V, sys.f).evaluate(z)
    inside = v <= 1.0
    pos_bad = int(np.sum(v <= 0.0))
    dec_bad = int(np.sum(inside & (vdot >= 0.0)))
    feas_bad = 0
    min_h = np.inf
    for hj in sys.h:
        hv = hj.evaluate(z[inside]) if inside.any() else np.zeros(0)
        feas_bad += int(np.sum(hv < 0.0))
        if hv.size:
            min_h = min(min_h, float(hv.min()))
    return CheckReport(
        n_samples=int(z.shape[0]),
        n_inside=int(inside.sum()),
        positivity_violations=pos_bad,
        decrease_violations=dec_bad,
        feasibility_violations=feas_bad,
        min_V_off_origin=float(v.min()) if v.size else np.inf,
        max_Vdot_inside=float(vdot[inside].max()) if inside.any() else -np.inf,
        min_h_inside=min_h,
    )
