"""Time-domain oracle for the post-fault swing dynamics.

Fixed-step RK4 in the relative frame. Bus voltages are rebuilt at every step
from the reduced network, and initial states are classified against the
constant (conservative) ride-through bound of each PV unit.
"""

from __future__ import annotations

import csv
import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .powersys import PowerSystemStudy, swing_rhs

DT = 1e-3
HORIZON = 20.0
CONV_TOL = 1e-3


class ClassKind(enum.IntEnum):
    CONVERGED_FEASIBLE = 0
    INFEASIBLE_LVRT = 1
    NOT_CONVERGED = 2


@dataclass(frozen=True)
class Classification:
    kind: ClassKind
    violation_time: float | None = None  # first LVRT violation [s]
    truncated: bool = False  # state became non-finite

    @property
    def label(self) -> str:
        return {ClassKind.CONVERGED_FEASIBLE: "ConvergedFeasible",
                ClassKind.INFEASIBLE_LVRT: "InfeasibleLvrt",
                ClassKind.NOT_CONVERGED: "NotConverged"}[self.kind]


@dataclass
class Trajectory:
    times: np.ndarray  # (K,)
    states: np.ndarray  # (K, 2m): delta_rel then omega_rel
    voltages: np.ndarray  # (K, n_bus) magnitudes at the network buses
    truncated: bool = False

    def __post_init__(self):
        k = self.times.shape[0]
        if self.states.shape[0] != k or self.voltages.shape[0] != k:
            raise ValueError("trajectory arrays have inconsistent lengths")


def _check_step(T: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not T >= dt:
        raise ValueError(f"horizon {T} shorter than the step {dt}")
    return int(round(T / dt))


class _BatchRhs:
    """swing_rhs specialised for batches, reusing the phasors of the k1 stage."""

    def __init__(self, study: PowerSystemStudy):
        self.m = study.n_rel
        self.ng = self.m + 1
        self.ref = study.ref
        self.nonref = np.array(study.nonref)
        self.YT = study.reduced.Y_red.T.copy()
        self.E = study.eq.E_mag
        self.Pm_over_M = study.eq.Pm / study.M
        self.inv_M = 1.0 / study.M
        self.damp = study.damping_ratio

    def phasors(self, x: np.ndarray) -> np.ndarray:
        full = np.zeros((x.shape[0], self.ng))
        full[:, self.nonref] = x[:, : self.m]
        return np.exp(1j * full)

    def __call__(self, x: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        if u is None:
            u = self.phasors(x)
        Eu = u * self.E
        Pe = (Eu * np.conj(Eu @ self.YT)).real
        a = self.Pm_over_M - Pe * self.inv_M
        w = x[:, self.m:]
        acc = a[:, self.nonref] - a[:, [self.ref]] - self.damp * w
        return np.hstack([w, acc])


def _rk4_batch(rhs: _BatchRhs, x: np.ndarray, dt: float, u: np.ndarray) -> np.ndarray:
    k1 = rhs(x, u)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(study: PowerSystemStudy, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = swing_rhs(study, x)
    k2 = swing_rhs(study, x + 0.5 * dt * k1)
    k3 = swing_rhs(study, x + 0.5 * dt * k2)
    k4 = swing_rhs(study, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def bus_voltage_magnitudes(study: PowerSystemStudy, delta_rel: np.ndarray) -> np.ndarray:
    return np.abs(study.bus_voltages(delta_rel))[..., : len(study.model.buses)]


def integrate(study: PowerSystemStudy, x0, T: float = HORIZON, dt: float = DT) -> Trajectory:
    """Single trajectory from ``x0 = [delta_rel; omega_rel]``, stored at every step."""
    steps = _check_step(T, dt)
    m = study.n_rel
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (2 * m,):
        raise ValueError(f"state must have {2 * m} entries")
    states = np.empty((steps + 1, 2 * m))
    states[0] = x
    k = 0
    truncated = False
    for k in range(1, steps + 1):
        x = rk4_step(study, x, dt)
        if not np.all(np.isfinite(x)):
            truncated = True
            k -= 1
            break
        states[k] = x
    states = states[: k + 1]
    times = dt * np.arange(states.shape[0])
    volts = bus_voltage_magnitudes(study, states[:, :m])
    return Trajectory(times, states, volts, truncated)


def pv_thresholds(study: PowerSystemStudy) -> np.ndarray:
    """Conservative voltage floor per PV unit: the largest value on its curve."""
    return np.array([pv.lvrt.max_value for pv in study.model.pv_units])


def classify_points(study: PowerSystemStudy, x0: np.ndarray, v_min=None, T: float = HORIZON,
                    dt: float = DT, conv_tol: float = CONV_TOL):
    """Vectorized classification of initial states ``x0`` of shape (N, 2m).

    ``v_min`` is a scalar or one value per PV unit (default: each unit's
    conservative bound). Returns (kinds, violation_times, truncated).
    """
    steps = _check_step(T, dt)
    x = np.array(np.atleast_2d(x0), dtype=float)
    n = x.shape[0]
    m = study.n_rel
    rows = study.pv_bus_rows()
    if v_min is None:
        v_min = pv_thresholds(study)
    v_min = np.broadcast_to(np.asarray(v_min, dtype=float), (len(rows),))
    K = study.reduced.K[rows]
    kinds = np.full(n, ClassKind.NOT_CONVERGED, dtype=int)
    vtime = np.full(n, np.nan)
    trunc = np.zeros(n, dtype=bool)
    active = np.arange(n)

    rhs = _BatchRhs(study)

    def monitor(t):
        # returns the phasors of the surviving states for the next k1 stage
        nonlocal active, xs
        u = rhs.phasors(xs)
        if rows:
            v = np.abs(u @ K.T)
            bad = np.any(v < v_min[None, :], axis=1)
            if bad.any():
                hit = active[bad]
                kinds[hit] = ClassKind.INFEASIBLE_LVRT
                vtime[hit] = t
                active, xs, u = active[~bad], xs[~bad], u[~bad]
        return u

    xs = x
    u = monitor(0.0)
    for k in range(1, steps + 1):
        if active.size == 0:
            break
        xs = _rk4_batch(rhs, xs, dt, u)
        finite = np.all(np.isfinite(xs), axis=1)
        if not finite.all():
            trunc[active[~finite]] = True
            active, xs = active[finite], xs[finite]
        u = monitor(k * dt)
    if active.size:
        err = np.max(np.abs(xs - study.sep_state[None, :]), axis=1)
        kinds[active[err < conv_tol]] = ClassKind.CONVERGED_FEASIBLE
    return kinds, vtime, trunc


def classify_point(study: PowerSystemStudy, x0, v_min=None, T: float = HORIZON, dt: float = DT,
                   conv_tol: float = CONV_TOL) -> Classification:
    kinds, vtime, trunc = classify_points(study, np.asarray(x0)[None, :], v_min, T, dt, conv_tol)
    t = None if np.isnan(vtime[0]) else float(vtime[0])
    return Classification(ClassKind(int(kinds[0])), t, bool(trunc[0]))


@dataclass(frozen=True)
class SliceSpec:
    """Two state coordinates varied on a regular grid, the rest pinned to ``base``."""

    x_index: int
    y_index: int
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    resolution: tuple[int, int] = (101, 101)
    base: tuple[float, ...] | None = None  # defaults to the SEP

    def __post_init__(self):
        if min(self.resolution) < 2:
            raise ValueError("grid resolution must be at least 2 per axis")
        if self.x_index == self.y_index:
            raise ValueError("slice needs two distinct coordinates")

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.linspace(*self.x_range, self.resolution[0]),
                np.linspace(*self.y_range, self.resolution[1]))

    def states(self, study: PowerSystemStudy) -> np.ndarray:
        base = study.sep_state if self.base is None else np.asarray(self.base, dtype=float)
        xs, ys = self.axes()
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.repeat(base[None, :], X.size, axis=0)
        pts[:, self.x_index] = X.ravel()
        pts[:, self.y_index] = Y.ravel()
        return pts


def angle_plane(study: PowerSystemStudy, half_width: float = np.pi, resolution: int = 101) -> SliceSpec:
    """First two relative angles around the SEP, speeds pinned at zero."""
    s = study.sep_state
    return SliceSpec(0, 1, (s[0] - half_width, s[0] + half_width),
                     (s[1] - half_width, s[1] + half_width), (resolution, resolution))


@dataclass
class GridResult:
    spec: SliceSpec
    states: np.ndarray  # (N, 2m) in x-major order
    kinds: np.ndarray
    violation_times: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.spec.resolution

    def kind_grid(self) -> np.ndarray:
        return self.kinds.reshape(self.shape)


def _classify_chunk(args):
    study, pts, v_min, T, dt, conv_tol = args
    kinds, vt, _ = classify_points(study, pts, v_min, T, dt, conv_tol)
    return kinds, vt


def grid_csr(study: PowerSystemStudy, spec: SliceSpec, v_min=None, T: float = HORIZON,
             dt: float = DT, conv_tol: float = CONV_TOL, jobs: int = 1) -> GridResult:
    """Classify every node of the slice; ``jobs > 1`` splits nodes across processes."""
    pts = spec.states(study)
    if jobs <= 1:
        kinds, vt = _classify_chunk((study, pts, v_min, T, dt, conv_tol))
    else:
        chunks = np.array_split(np.arange(pts.shape[0]), jobs)
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_classify_chunk,
                                [(study, pts[c], v_min, T, dt, conv_tol) for c in chunks]))
        kinds = np.concatenate([p[0] for p in parts])
        vt = np.concatenate([p[1] for p in parts])
    return GridResult(spec, pts, kinds, vt)


# ---------------------------------------------------------------------------
# CSV output (full double precision)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(path, traj: Trajectory, study: PowerSystemStudy) -> None:
    m = study.n_rel
    names = [study.model.machines[k].name for k in study.nonref]
    ref = study.model.machines[study.ref].name
    header = (["t"] + [f"delta_{n}_{ref}" for n in names] + [f"omega_{n}_{ref}" for n in names]
              + [f"v_bus{b.id}" for b in study.model.buses])
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, x, v in zip(traj.times, traj.states, traj.voltages):
            w.writerow([_fmt(t)] + [_fmt(a) for a in x] + [_fmt(a) for a in v])
    assert len(header) == 1 + 2 * m + len(study.model.buses)


def write_grid_csv(path, grid: GridResult, V_values: np.ndarray | None = None) -> None:
    """Columns: x, y, class, V (empty when no certificate is given)."""
    labels = {int(k): Classification(k).label for k in ClassKind}
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "class", "V"])
        for i, p in enumerate(grid.states):
            v = "" if V_values is None else _fmt(V_values[i])
            w.writerow([_fmt(p[grid.spec.x_index]), _fmt(p[grid.spec.y_index]),
                        labels[int(grid.kinds[i])], v])
