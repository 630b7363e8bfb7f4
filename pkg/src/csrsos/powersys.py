"""Classical multi-machine power system as a constrained polynomial system.

Machines are constant EMFs behind transient reactance; loads (PV units
included, as negative loads) become constant admittances at the solved
operating point; the network is reduced onto the machine internal nodes.

Relative-frame state ordering, for non-reference machines i = 1..m with
m = n_g - 1::

    x = (delta_1 .. delta_m, omega_1 .. omega_m)       angles, speeds
    z = (omega_1 .. omega_m, s_1, c_1, .., s_m, c_m)   polynomial coordinates

with s_i = sin(delta_i - delta_i^s) and c_i = 1 - cos(delta_i - delta_i^s).
"""

from __future__ import annotations

import logging
import math
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .poly import Polynomial, variables

log = logging.getLogger(__name__)


class ModelError(ValueError):
    """Invalid or inconsistent model data."""


class PowerFlowError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Data


@dataclass(frozen=True)
class LvrtCurve:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.points:
            raise ModelError("LVRT curve needs at least one point")
        for t, v in self.points:
            if not 0.0 < v <= 1.0:
                raise ModelError(f"LVRT voltage {v} outside (0, 1]")

    @property
    def max_value(self) -> float:
        return max(v for _, v in self.points)


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str  # slack | pv | pq
    v: float = 1.0
    p_gen: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0


@dataclass(frozen=True)
class Branch:
    f: int
    t: int
    r: float
    x: float
    b: float = 0.0
    in_service_post_fault: bool = True

    @property
    def y(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class Machine:
    name: str
    bus: int
    M: float  # s^2/rad (per unit power)
    D: float
    xd: float


@dataclass(frozen=True)
class PvUnit:
    name: str
    bus: int
    p: float  # injection, pu
    q: float
    lvrt: LvrtCurve


@dataclass
class PowerSystemModel:
    buses: list[Bus]
    branches: list[Branch]
    machines: list[Machine]
    pv_units: list[PvUnit] = field(default_factory=list)
    frequency: float = 60.0
    reference: str | None = None

    def __post_init__(self):
        self.validate()

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def ref_index(self) -> int:
        if self.reference is not None:
            names = [m.name for m in self.machines]
            if self.reference not in names:
                raise ModelError(f"reference machine {self.reference!r} not defined")
            return names.index(self.reference)
        return int(np.argmax([m.M for m in self.machines]))

    @property
    def damping_ratio(self) -> float:
        return self.machines[0].D / self.machines[0].M

    def validate(self) -> None:
        idx = self.bus_index
        if len(idx) != len(self.buses):
            raise ModelError("duplicate bus ids")
        if sum(b.kind == "slack" for b in self.buses) != 1:
            raise ModelError("exactly one slack bus required")
        if len(self.machines) < 2:
            raise ModelError("at least two machines required")
        for br in self.branches:
            for k in (br.f, br.t):
                if k not in idx:
                    raise ModelError(f"branch {br.f}-{br.t} refers to unknown bus {k}")
            if br.r == 0.0 and br.x == 0.0:
                raise ModelError(f"branch {br.f}-{br.t} has zero impedance")
        for m in self.machines:
            if m.bus not in idx:
                raise ModelError(f"machine {m.name} on unknown bus {m.bus}")
            if m.M <= 0 or m.xd <= 0:
                raise ModelError(f"machine {m.name}: inertia and reactance must be positive")
        for pv in self.pv_units:
            if pv.bus not in idx:
                raise ModelError(f"PV unit {pv.name} on unknown bus {pv.bus}")
        gen_buses = {m.bus for m in self.machines}
        for b in self.buses:
            if b.kind in ("slack", "pv") and b.id not in gen_buses:
                raise ModelError(f"bus {b.id} is {b.kind} but has no machine")
        ratios = [m.D / m.M for m in self.machines]
        if max(ratios) - min(ratios) > 1e-9 * max(1.0, max(abs(r) for r in ratios)):
            raise ModelError(
                "non-uniform damping: D/M must be identical for all machines, got "
                + ", ".join(f"{m.name}={r:.6g}" for m, r in zip(self.machines, ratios)))
        # connectivity
        adj = {b.id: set() for b in self.buses}
        for br in self.branches:
            adj[br.f].add(br.t)
            adj[br.t].add(br.f)
        seen, stack = set(), [self.buses[0].id]
        while stack:
            k = stack.pop()
            if k in seen:
                continue
            seen.add(k)
            stack.extend(adj[k] - seen)
        if len(seen) != len(self.buses):
            raise ModelError(f"network is not connected (isolated buses {sorted(set(adj) - seen)})")


# ---------------------------------------------------------------------------
# Model file


def _kv(tokens: Sequence[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ModelError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k.lower()] = v
    return out


def _num(d: dict, key: str, lineno: int, default=None) -> float:
    if key not in d:
        if default is None:
            raise ModelError(f"line {lineno}: missing {key}=")
        return default
    try:
        return float(d[key])
    except ValueError:
        raise ModelError(f"line {lineno}: {key}={d[key]!r} is not a number") from None


def _parse_curve(text: str, lineno: int) -> LvrtCurve:
    pts = []
    for item in text.split(","):
        try:
            t, v = item.split(":")
            pts.append((float(t), float(v)))
        except ValueError:
            raise ModelError(f"line {lineno}: bad LVRT point {item!r} (want time:voltage)") from None
    try:
        return LvrtCurve(tuple(pts))
    except ModelError as exc:
        raise ModelError(f"line {lineno}: {exc}") from None


def parse_model(text: str) -> PowerSystemModel:
    """Parse the record-per-line model format (see ``data/README.md``)."""
    frequency = 60.0
    reference = None
    damping_ratio = None
    buses, branches, machines, pvs = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            tok = shlex.split(line)
        except ValueError as exc:
            raise ModelError(f"line {lineno}: {exc}") from None
        kind, rest = tok[0].lower(), tok[1:]
        try:
            if kind == "system":
                d = _kv(rest, lineno)
                frequency = _num(d, "frequency", lineno, 60.0)
                reference = d.get("reference")
                if "damping_ratio" in d:
                    damping_ratio = _num(d, "damping_ratio", lineno)
            elif kind == "bus":
                if not rest:
                    raise ModelError(f"line {lineno}: bus record needs an id")
                d = _kv(rest[1:], lineno)
                btype = d.get("type", "pq").lower()
                if btype not in ("slack", "pv", "pq"):
                    raise ModelError(f"line {lineno}: unknown bus type {btype!r}")
                buses.append(Bus(int(rest[0]), btype, _num(d, "v", lineno, 1.0),
                                 _num(d, "pg", lineno, 0.0), _num(d, "pl", lineno, 0.0),
                                 _num(d, "ql", lineno, 0.0)))
            elif kind == "branch":
                if len(rest) < 2:
                    raise ModelError(f"line {lineno}: branch record needs two bus ids")
                d = _kv(rest[2:], lineno)
                post = d.get("postfault", "in").lower()
                if post not in ("in", "out"):
                    raise ModelError(f"line {lineno}: postfault must be 'in' or 'out'")
                branches.append(Branch(int(rest[0]), int(rest[1]), _num(d, "r", lineno, 0.0),
                                       _num(d, "x", lineno), _num(d, "b", lineno, 0.0),
                                       post == "in"))
            elif kind == "machine":
                if not rest:
                    raise ModelError(f"line {lineno}: machine record needs a name")
                d = _kv(rest[1:], lineno)
                if "m" in d:
                    M = _num(d, "m", lineno)
                else:
                    M = 2.0 * _num(d, "h", lineno) / (2.0 * math.pi * frequency)
                if "d" in d:
                    D = _num(d, "d", lineno)
                elif damping_ratio is not None:
                    D = damping_ratio * M
                else:
                    raise ModelError(f"line {lineno}: machine needs d= or a system damping_ratio")
                machines.append(Machine(rest[0], int(_num(d, "bus", lineno)), M, D,
                                        _num(d, "xd", lineno)))
            elif kind == "pv":
                if not rest:
                    raise ModelError(f"line {lineno}: pv record needs a name")
                d = _kv(rest[1:], lineno)
                if "lvrt" not in d:
                    raise ModelError(f"line {lineno}: missing lvrt=")
                pvs.append(PvUnit(rest[0], int(_num(d, "bus", lineno)), _num(d, "p", lineno),
                                  _num(d, "q", lineno, 0.0), _parse_curve(d["lvrt"], lineno)))
            else:
                raise ModelError(f"line {lineno}: unknown record type {kind!r}")
        except ModelError:
            raise
        except ValueError as exc:
            raise ModelError(f"line {lineno}: {exc}") from None
    return PowerSystemModel(buses, branches, machines, pvs, frequency, reference)


def load_model(path: str | Path) -> PowerSystemModel:
    return parse_model(Path(path).read_text())


def fixture_path(name: str = "three_machine.txt") -> Path:
    return Path(__file__).parent / "data" / name


# ---------------------------------------------------------------------------
# Network


def branch_admittance(model: PowerSystemModel, post_fault: bool = False) -> np.ndarray:
    """Bus admittance matrix of the physical network (lines and charging)."""
    idx = model.bus_index
    Y = np.zeros((len(idx), len(idx)), dtype=complex)
    for br in model.branches:
        if post_fault and not br.in_service_post_fault:
            continue
        f, t, y = idx[br.f], idx[br.t], br.y
        Y[f, f] += y + 0.5j * br.b
        Y[t, t] += y + 0.5j * br.b
        Y[f, t] -= y
        Y[t, f] -= y
    return Y


def net_load(model: PowerSystemModel) -> np.ndarray:
    """Complex load per bus, with PV injections counted as negative load."""
    idx = model.bus_index
    S = np.array([complex(b.p_load, b.q_load) for b in model.buses])
    for pv in model.pv_units:
        S[idx[pv.bus]] -= complex(pv.p, pv.q)
    return S


def build_admittance(model: PowerSystemModel, voltages: np.ndarray,
                     post_fault: bool = True) -> np.ndarray:
    """Augmented admittance matrix: network buses first, then internal nodes.

    Loads become shunt admittances conj(S)/|V|^2 at the given voltages.
    """
    nb, ng = len(model.buses), len(model.machines)
    Y = np.zeros((nb + ng, nb + ng), dtype=complex)
    Y[:nb, :nb] = branch_admittance(model, post_fault)
    S = net_load(model)
    Y[np.arange(nb), np.arange(nb)] += np.conj(S) / np.abs(voltages) ** 2
    idx = model.bus_index
    for k, m in enumerate(model.machines):
        y = 1.0 / (1j * m.xd)
        b, e = idx[m.bus], nb + k
        Y[b, b] += y
        Y[e, e] += y
        Y[b, e] -= y
        Y[e, b] -= y
    return Y


@dataclass(frozen=True)
class ReducedNetwork:
    Y_red: np.ndarray  # over retained nodes
    K: np.ndarray  # retained-node EMF phasors (scaled by E_mag) -> eliminated-node voltages
    eliminated: tuple[int, ...]
    retained: tuple[int, ...]
    E_mag: np.ndarray

    def voltages(self, unit_phasors: np.ndarray) -> np.ndarray:
        """Eliminated-node voltages for EMF phasors ``E_mag * unit_phasors``.

        ``unit_phasors`` may be (n_retained,) or (N, n_retained).
        """
        return np.asarray(unit_phasors) @ self.K.T


def kron_reduce(Y: np.ndarray, retained: Sequence[int], E_mag: np.ndarray | None = None) -> ReducedNetwork:
    """Eliminate every node not in ``retained`` by Schur complement."""
    n = Y.shape[0]
    keep = list(retained)
    elim = [k for k in range(n) if k not in set(keep)]
    E_mag = np.ones(len(keep)) if E_mag is None else np.asarray(E_mag, dtype=float)
    if not elim:
        return ReducedNetwork(Y[np.ix_(keep, keep)].copy(), np.zeros((0, len(keep)), complex),
                              (), tuple(keep), E_mag)
    Y11 = Y[np.ix_(elim, elim)]
    Y12 = Y[np.ix_(elim, keep)]
    Y21 = Y[np.ix_(keep, elim)]
    Y22 = Y[np.ix_(keep, keep)]
    if np.linalg.cond(Y11) > 1e14:
        raise ModelError("singular Y11 in network reduction (isolated buses?)")
    X = np.linalg.solve(Y11, Y12)
    Y_red = Y22 - Y21 @ X
    K = -X * E_mag[None, :]
    return ReducedNetwork(Y_red, K, tuple(elim), tuple(keep), E_mag)


# ---------------------------------------------------------------------------
# Operating point


def newton_power_flow(model: PowerSystemModel, tol: float = 1e-12, max_iter: int = 30):
    """Polar Newton-Raphson load flow. Returns complex bus voltages and injections."""
    Y = branch_admittance(model, post_fault=False)
    n = len(model.buses)
    S_load = net_load(model)
    kinds = [b.kind for b in model.buses]
    slack = kinds.index("slack")
    pv = [k for k in range(n) if kinds[k] == "pv"]
    pq = [k for k in range(n) if kinds[k] == "pq"]
    V = np.array([b.v if b.kind != "pq" else 1.0 for b in model.buses])
    th = np.zeros(n)
    P_spec = np.array([b.p_gen for b in model.buses]) - S_load.real
    Q_spec = -S_load.imag
    ang = [k for k in range(n) if k != slack]
    for it in range(max_iter):
        v = V * np.exp(1j * th)
        S = v * np.conj(Y @ v)
        mis = np.r_[P_spec[ang] - S.real[ang], Q_spec[pq] - S.imag[pq]]
        if np.max(np.abs(mis), initial=0.0) < tol:
            break
        # dS/dtheta and dS/d|V| (standard complex forms)
        I = Y @ v
        dS_dth = 1j * np.diag(v) @ np.conj(np.diag(I) - Y @ np.diag(v))
        dS_dV = np.diag(v) @ np.conj(Y @ np.diag(v / V)) + np.diag(v / V) @ np.conj(np.diag(I))
        J = np.block([
            [dS_dth.real[np.ix_(ang, ang)], dS_dV.real[np.ix_(ang, pq)]],
            [dS_dth.imag[np.ix_(pq, ang)], dS_dV.imag[np.ix_(pq, pq)]],
        ])
        dx = np.linalg.solve(J, mis)
        th[ang] += dx[: len(ang)]
        V[pq] += dx[len(ang):]
    else:
        raise PowerFlowError(f"power flow did not converge in {max_iter} iterations")
    v = V * np.exp(1j * th)
    S_inj = v * np.conj(Y @ v)
    return v, S_inj + S_load  # generation per bus


@dataclass(frozen=True)
class Equilibrium:
    delta: np.ndarray  # absolute internal angles at the pre-fault operating point [rad]
    delta_rel: np.ndarray  # post-fault SEP, non-reference machines relative to reference [rad]
    E_mag: np.ndarray
    Pm: np.ndarray
    bus_voltages: np.ndarray
    residual: float


def _relative_accel(Y_red, E_mag, Pm, M, ref, delta_rel):
    """(Pm_i - Pe_i)/M_i - (Pm_r - Pe_r)/M_r for non-reference i, batched."""
    d = np.atleast_2d(delta_rel)
    full = np.insert(d, ref, 0.0, axis=1)
    E = E_mag[None, :] * np.exp(1j * full)
    Pe = np.real(E * np.conj(E @ Y_red.T))
    a = (Pm[None, :] - Pe) / M[None, :]
    out = np.delete(a - a[:, [ref]], ref, axis=1)
    return out


def solve_equilibrium(model: PowerSystemModel, tol: float = 1e-11) -> Equilibrium:
    """Operating point from a load flow, then the post-fault SEP.

    With no branch switched out post-fault, the SEP is the load-flow point.
    Otherwise a Newton iteration on the relative swing equations starts from it.
    """
    v, S_gen = newton_power_flow(model)
    idx = model.bus_index
    ng = len(model.machines)
    E = np.zeros(ng, dtype=complex)
    Pm = np.zeros(ng)
    for k, m in enumerate(model.machines):
        b = idx[m.bus]
        share = [mm for mm in model.machines if mm.bus == m.bus]
        Sg = S_gen[b] / len(share)
        I = np.conj(Sg / v[b])
        E[k] = v[b] + 1j * m.xd * I
        Pm[k] = Sg.real
    delta = np.angle(E)
    E_mag = np.abs(E)
    ref = model.ref_index
    M = np.array([m.M for m in model.machines])
    Y = build_admittance(model, v, post_fault=True)
    nb = len(model.buses)
    red = kron_reduce(Y, list(range(nb, nb + ng)), E_mag)
    x = np.delete(delta - delta[ref], ref)
    F = lambda d: _relative_accel(red.Y_red, E_mag, Pm, M, ref, d)[0]
    for _ in range(50):
        r = F(x)
        if np.max(np.abs(r)) < tol:
            break
        J = np.zeros((x.size, x.size))
        h = 1e-7
        for j in range(x.size):
            e = np.zeros(x.size)
            e[j] = h
            J[:, j] = (F(x + e) - F(x - e)) / (2 * h)
        x = x - np.linalg.solve(J, r)
    res = float(np.max(np.abs(F(x))))
    if res > 1e-8:
        raise PowerFlowError(f"post-fault equilibrium residual {res:.3e} exceeds 1e-8")
    return Equilibrium(delta, x, E_mag, Pm, v, res)


# ---------------------------------------------------------------------------
# Study system: reduced network + dynamics


@dataclass
class PowerSystemStudy:
    model: PowerSystemModel
    eq: Equilibrium
    Y_aug: np.ndarray
    reduced: ReducedNetwork
    M: np.ndarray
    ref: int

    @property
    def n_rel(self) -> int:
        return len(self.model.machines) - 1

    @property
    def nonref(self) -> list[int]:
        return [k for k in range(len(self.model.machines)) if k != self.ref]

    @property
    def damping_ratio(self) -> float:
        return self.model.damping_ratio

    @property
    def sep_state(self) -> np.ndarray:
        return np.r_[self.eq.delta_rel, np.zeros(self.n_rel)]

    def pv_bus_rows(self) -> list[int]:
        idx = self.model.bus_index
        elim = list(self.reduced.eliminated)
        rows = []
        for pv in self.model.pv_units:
            b = idx[pv.bus]
            if b not in elim:
                raise ModelError(f"PV bus {pv.bus} is not among the network buses")
            rows.append(elim.index(b))
        return rows

    def bus_voltages(self, delta_rel: np.ndarray) -> np.ndarray:
        """Network bus voltage phasors (reference-machine frame), batched."""
        d = np.atleast_2d(delta_rel)
        full = np.insert(d, self.ref, 0.0, axis=1)
        v = self.reduced.voltages(np.exp(1j * full))
        return v[0] if np.ndim(delta_rel) == 1 else v


def build_study(model: PowerSystemModel) -> PowerSystemStudy:
    eq = solve_equilibrium(model)
    nb, ng = len(model.buses), len(model.machines)
    Y = build_admittance(model, eq.bus_voltages, post_fault=True)
    red = kron_reduce(Y, list(range(nb, nb + ng)), eq.E_mag)
    M = np.array([m.M for m in model.machines])
    return PowerSystemStudy(model, eq, Y, red, M, model.ref_index)


def swing_rhs(study: PowerSystemStudy, state: np.ndarray) -> np.ndarray:
    """Relative-frame classical swing dynamics; ``state`` is (2m,) or (N, 2m)."""
    x = np.atleast_2d(np.asarray(state, dtype=float))
    m = study.n_rel
    d, w = x[:, :m], x[:, m:]
    acc = _relative_accel(study.reduced.Y_red, study.eq.E_mag, study.eq.Pm, study.M, study.ref, d)
    out = np.hstack([w, acc - study.damping_ratio * w])
    return out[0] if np.ndim(state) == 1 else out


# ---------------------------------------------------------------------------
# Polynomial form


@dataclass
class ConstrainedPolySystem:
    """dz/dt = f(z) on {g(z) = 0}, with h(z) >= 0 required along trajectories."""

    f: list[Polynomial]
    g: list[Polynomial] = field(default_factory=list)
    h: list[Polynomial] = field(default_factory=list)
    labels: list[str] | None = None
    # (omega, sin, cos-deficit) index triples, one per non-reference machine
    angle_pairs: list[tuple[int, int, int]] = field(default_factory=list)
    sep: np.ndarray | None = None

    def __post_init__(self):
        n = self.nvars
        for p in list(self.f) + list(self.g) + list(self.h):
            if p.nvars != n:
                raise ValueError("all polynomials must share the variable count")
        if len(self.f) != n:
            raise ValueError(f"vector field has {len(self.f)} components for {n} variables")
        if self.labels is None:
            self.labels = [f"z{i + 1}" for i in range(n)]

    @property
    def nvars(self) -> int:
        return self.f[0].nvars

    def without_inequalities(self) -> "ConstrainedPolySystem":
        return ConstrainedPolySystem(list(self.f), list(self.g), [], list(self.labels),
                                     list(self.angle_pairs), self.sep)

    def vector_field(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.stack([fi.evaluate(z) for fi in self.f], axis=-1)

    # -- coordinate maps (power-system form only) --------------------------
    def state_to_z(self, state: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(state, dtype=float))
        m = len(self.angle_pairs)
        z = np.zeros((x.shape[0], self.nvars))
        for i, (iw, js, jc) in enumerate(self.angle_pairs):
            dd = x[:, i] - self.sep[i]
            z[:, iw] = x[:, m + i]
            z[:, js] = np.sin(dd)
            z[:, jc] = 1.0 - np.cos(dd)
        return z[0] if np.ndim(state) == 1 else z

    def z_to_state(self, z: np.ndarray) -> np.ndarray:
        """Inverse map for points on the manifold (angles wrapped to (-pi, pi])."""
        zz = np.atleast_2d(np.asarray(z, dtype=float))
        m = len(self.angle_pairs)
        x = np.zeros((zz.shape[0], 2 * m))
        for i, (iw, js, jc) in enumerate(self.angle_pairs):
            x[:, i] = self.sep[i] + np.arctan2(zz[:, js], 1.0 - zz[:, jc])
            x[:, m + i] = zz[:, iw]
        return x[0] if np.ndim(z) == 1 else x


class _CPoly:
    """Complex polynomial as a (real, imaginary) pair."""

    def __init__(self, re: Polynomial, im: Polynomial):
        self.re, self.im = re, im

    def __add__(self, o):
        return _CPoly(self.re + o.re, self.im + o.im)

    def __mul__(self, o):
        if isinstance(o, complex):
            return _CPoly(self.re * o.real - self.im * o.imag, self.re * o.imag + self.im * o.real)
        return _CPoly(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    def conj(self):
        return _CPoly(self.re, -self.im)


def _unit_phasors(study: PowerSystemStudy, nvars: int, pairs) -> list[_CPoly]:
    """e^{j delta_k} for each machine as affine polynomials in z."""
    zero = Polynomial.zero(nvars)
    one = Polynomial.constant(nvars, 1.0)
    z = variables(nvars)
    out = []
    rel = {k: i for i, k in enumerate(study.nonref)}
    for k in range(len(study.model.machines)):
        if k == study.ref:
            out.append(_CPoly(one, zero))
            continue
        i = rel[k]
        _, js, jc = pairs[i]
        w = _CPoly(one - z[jc], z[js])  # cos(x) + j sin(x), x = delta - delta^s
        out.append(w * complex(np.exp(1j * study.eq.delta_rel[i])))
    return out


def state_pairs(m: int) -> list[tuple[int, int, int]]:
    return [(i, m + 2 * i, m + 2 * i + 1) for i in range(m)]


def transform_to_polynomial(study: PowerSystemStudy, with_lvrt: bool = True,
                            check_tol: float = 1e-10) -> ConstrainedPolySystem:
    m = study.n_rel
    n = 3 * m
    pairs = state_pairs(m)
    z = variables(n)
    u = _unit_phasors(study, n, pairs)
    Y = study.reduced.Y_red
    E = study.eq.E_mag
    ng = len(u)
    # Pe_k = Re(E_k u_k conj(sum_j Y_kj E_j u_j))
    Pe = []
    for k in range(ng):
        I = None
        for j in range(ng):
            term = u[j] * complex(Y[k, j] * E[j])
            I = term if I is None else I + term
        Pe.append((u[k] * complex(E[k]) * I.conj()).re)
    Pm, M, ref = study.eq.Pm, study.M, study.ref
    lam = study.damping_ratio
    ref_acc = (Pm[ref] - Pe[ref]) / M[ref]
    f: list[Polynomial] = [Polynomial.zero(n)] * n
    g = []
    labels = [""] * n
    for i, k in enumerate(study.nonref):
        iw, js, jc = pairs[i]
        name = study.model.machines[k].name
        rname = study.model.machines[ref].name
        f[iw] = (Pm[k] - Pe[k]) / M[k] - ref_acc - lam * z[iw]
        f[js] = (1.0 - z[jc]) * z[iw]
        f[jc] = z[js] * z[iw]
        g.append(z[js] ** 2 + (1.0 - z[jc]) ** 2 - 1.0)
        labels[iw] = f"w{name}{rname}"
        labels[js] = f"s{name}{rname}"
        labels[jc] = f"c{name}{rname}"
    origin = np.zeros(n)
    f0 = max(abs(fi.evaluate(origin)) for fi in f)
    if f0 > check_tol:
        raise ModelError(f"transformed vector field does not vanish at the SEP ({f0:.3e})")
    f = [fi - fi.coef((0,) * n) for fi in f]
    h = lvrt_polynomials(study) if with_lvrt else []
    return ConstrainedPolySystem(f, g, h, labels, pairs, study.eq.delta_rel.copy())


def voltage_polynomials(study: PowerSystemStudy) -> list[tuple[Polynomial, Polynomial]]:
    """(Re v, Im v) for every network bus, affine in z."""
    m = study.n_rel
    n = 3 * m
    u = _unit_phasors(study, n, state_pairs(m))
    out = []
    for row in range(study.reduced.K.shape[0]):
        acc = None
        for k in range(len(u)):
            term = u[k] * complex(study.reduced.K[row, k])
            acc = term if acc is None else acc + term
        out.append((acc.re, acc.im))
    return out


def lvrt_polynomials(study: PowerSystemStudy) -> list[Polynomial]:
    """|v_j(z)|^2 - (max LVRT_j)^2 for every PV unit."""
    vp = voltage_polynomials(study)
    out = []
    for pv, row in zip(study.model.pv_units, study.pv_bus_rows()):
        re, im = vp[row]
        out.append(re * re + im * im - pv.lvrt.max_value ** 2)
    return out


def swing_rhs_in_z(study: PowerSystemStudy, sys: ConstrainedPolySystem, state: np.ndarray) -> np.ndarray:
    """dz/dt from the trigonometric model via the chain rule (independent of f)."""
    x = np.atleast_2d(state)
    m = study.n_rel
    dx = swing_rhs(study, x)
    out = np.zeros((x.shape[0], sys.nvars))
    for i, (iw, js, jc) in enumerate(sys.angle_pairs):
        dd = x[:, i] - sys.sep[i]
        out[:, iw] = dx[:, m + i]
        out[:, js] = np.cos(dd) * dx[:, i]
        out[:, jc] = np.sin(dd) * dx[:, i]
    return out[0] if np.ndim(state) == 1 else out
