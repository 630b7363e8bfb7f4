"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 6 shares two session-scoped certificates (with and without the
LVRT constraint); building them dominates the runtime of this file.
"""

import contextlib
import time

import numpy as np
import pytest

from csrsos import roa, sim
from csrsos.poly import Polynomial, monomials_up_to, variables
from csrsos.powersys import build_study, fixture_path, load_model, transform_to_polynomial
from csrsos.sdp import SdpProblem, SdpStatus, solve, tril_index
from csrsos.sos import check_sos

C6_BUDGET = 15 * 60.0
_c6_clock = {"elapsed": 0.0}


@contextlib.contextmanager
def criterion(capsys, label, detail=lambda: ""):
    t0 = time.perf_counter()
    status, note = "FAIL", ""
    try:
        yield
        status = "PASS"
    except AssertionError as exc:
        note = " | " + (str(exc).splitlines() or [""])[0]
        raise
    finally:
        extra = detail()
        with capsys.disabled():
            print(f"\n[acceptance {label}] {status} ({time.perf_counter() - t0:.1f}s)"
                  f"{' ' + extra if extra else ''}{note}")


@contextlib.contextmanager
def c6_timer():
    t0 = time.perf_counter()
    try:
        yield
    finally:
        _c6_clock["elapsed"] += time.perf_counter() - t0


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_equilibrium(capsys):
    got = {}
    with criterion(capsys, "1 equilibrium", lambda: f"SEP={got.get('sep')}"):
        t0 = time.perf_counter()
        study = build_study(load_model(fixture_path("three_machine.txt")))
        elapsed = time.perf_counter() - t0
        got["sep"] = np.round(study.eq.delta_rel, 5).tolist()
        assert elapsed < 1.0
        assert np.max(np.abs(study.eq.delta_rel - [0.3165, 0.3451])) <= 1e-3, \
            f"SEP {study.eq.delta_rel} differs from (0.3165, 0.3451)"


# -- 2 -----------------------------------------------------------------------

def _direct_network(study, x):
    """Unreduced network solve: bus voltages and machine electrical powers."""
    nb = len(study.model.buses)
    Y = study.Y_aug
    m = study.n_rel
    ang = np.insert(x[:, :m], study.ref, 0.0, axis=1)
    E = study.eq.E_mag * np.exp(1j * ang)
    v = np.linalg.solve(Y[:nb, :nb], -(Y[:nb, nb:] @ E.T)).T
    I = (Y[nb:, :nb] @ v.T).T + (Y[nb:, nb:] @ E.T).T
    return v, (E * np.conj(I)).real


def test_criterion_2_transformation(capsys):
    err = {}
    with criterion(capsys, "2 transformation", lambda: f"max errors {err}"):
        t0 = time.perf_counter()
        study = build_study(load_model(fixture_path("three_machine.txt")))
        psys = transform_to_polynomial(study)
        rng = np.random.default_rng(2)
        m = study.n_rel
        x = np.hstack([study.sep_state[:m] + rng.uniform(-np.pi, np.pi, (1000, m)),
                       rng.uniform(-5, 5, (1000, m))])
        v, Pe = _direct_network(study, x)
        acc = (study.eq.Pm - Pe) / study.M
        rel = np.delete(acc - acc[:, [study.ref]], study.ref, axis=1)
        rel -= study.damping_ratio * x[:, m:]
        want = np.zeros((1000, psys.nvars))
        for i, (iw, js, jc) in enumerate(psys.angle_pairs):
            d = x[:, i] - study.eq.delta_rel[i]
            want[:, iw] = rel[:, i]
            want[:, js] = np.cos(d) * x[:, m + i]
            want[:, jc] = np.sin(d) * x[:, m + i]
        z = psys.state_to_z(x)
        err["f"] = float(np.max(np.abs(psys.vector_field(z) - want)))
        bus1 = study.model.bus_index[1]
        err["h"] = float(np.max(np.abs(psys.h[0].evaluate(z) - (np.abs(v[:, bus1]) ** 2 - 0.7225))))
        assert err["f"] <= 1e-8 and err["h"] <= 1e-8
        assert time.perf_counter() - t0 < 10.0


# -- 3 -----------------------------------------------------------------------

def _random_poly(rng, nvars, degree, n_terms=4):
    mons = monomials_up_to(nvars, degree)
    pick = rng.choice(len(mons), size=min(n_terms, len(mons)), replace=False)
    return Polynomial(nvars, {mons[i]: rng.normal() for i in pick})


def test_criterion_3_sos_engine(capsys):
    counts = {"accepted": 0, "rejected": 0}
    with criterion(capsys, "3 sos engine", lambda: str(counts)):
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        for _ in range(50):
            nv = int(rng.integers(1, 5))
            F = sum((_random_poly(rng, nv, 2) ** 2 for _ in range(3)), Polynomial.zero(nv))
            res = check_sos(F)
            assert res.is_sos
            assert res.basis.quadratic_form(res.gram).allclose(F, 1e-7)
            assert np.linalg.eigvalsh(res.gram)[0] >= -1e-8
            counts["accepted"] += 1
        for _ in range(50):
            nv = int(rng.integers(1, 5))
            F = sum((_random_poly(rng, nv, 2) ** 2 for _ in range(2)), Polynomial.zero(nv))
            x0 = rng.normal(size=nv)
            F = F - (F.evaluate(x0) + 0.5)
            assert F.evaluate(x0) < 0
            assert not check_sos(F).is_sos
            counts["rejected"] += 1
        x, y = variables(2)
        assert not check_sos(x ** 4 * y ** 2 + x ** 2 * y ** 4 - 3 * x ** 2 * y ** 2 + 1).is_sos
        assert time.perf_counter() - t0 < 60.0


# -- 4 -----------------------------------------------------------------------

def _residuals_ok(prob, sol):
    x = np.zeros(prob.nvar)
    x[: prob.n_free] = sol.free
    for off, n, X in zip(prob.block_offsets, prob.block_dims, sol.blocks):
        if np.linalg.eigvalsh(X)[0] < -1e-8:
            return False
        for j, (p, q) in enumerate(tril_index(n)):
            x[off + j] = X[p, q]
    return np.max(np.abs(prob.A @ x - prob.b), initial=0.0) <= 1e-7


def test_criterion_4_sdp(capsys):
    with criterion(capsys, "4 sdp solver"):
        # min X11 s.t. X11 = 1
        p1 = SdpProblem.from_matrices([1], [[np.eye(1)]], [1.0], objective=[np.eye(1)])
        s1 = solve(p1)
        assert s1.status is SdpStatus.OPTIMAL and abs(s1.objective - 1.0) <= 1e-6
        # min x s.t. [[x, 1], [1, x]] >= 0: optimum 1
        p2 = SdpProblem.from_matrices([2], [[np.diag([1.0, -1.0])], [np.array([[0, 0.5], [0.5, 0]])]],
                                      [0.0, 1.0], objective=[np.diag([1.0, 0.0])])
        s2 = solve(p2)
        assert s2.status is SdpStatus.OPTIMAL and abs(s2.objective - 1.0) <= 1e-6
        # min <C, X> s.t. tr X = 1: smallest eigenvalue of C
        C = np.array([[2.0, 1.0], [1.0, 3.0]])
        p3 = SdpProblem.from_matrices([2], [[np.eye(2)]], [1.0], objective=[C])
        s3 = solve(p3)
        assert abs(s3.objective - np.linalg.eigvalsh(C)[0]) <= 1e-6
        assert solve(SdpProblem.from_matrices([2], [[np.eye(2)]], [-1.0])).status is SdpStatus.INFEASIBLE
        for prob, sol in [(p1, s1), (p2, s2), (p3, s3)]:
            assert _residuals_ok(prob, sol)


# -- 5 -----------------------------------------------------------------------

def _interval(V):
    coeffs = np.zeros(V.degree() + 1)
    for (e,), c in V.items():
        coeffs[V.degree() - e] = c
    coeffs[-1] -= 1.0
    r = np.roots(coeffs)
    r = np.sort(r[np.abs(r.imag) < 1e-9].real)
    return float(r[r < 0].max()), float(r[r > 0].min())


def test_criterion_5_one_dimensional(capsys):
    got = {}
    with criterion(capsys, "5 1-D benchmark", lambda: str(got)):
        t0 = time.perf_counter()
        from csrsos.powersys import ConstrainedPolySystem
        (z,) = variables(1)
        f = [-z + z ** 3]
        lo, hi = _interval(roa.estimate_csr(ConstrainedPolySystem(f, labels=["z"])).V)
        got["free"] = (round(lo, 5), round(hi, 5))
        assert -1 < lo and hi < 1
        assert (hi - lo) / 2 >= 0.9
        lo, hi = _interval(roa.estimate_csr(ConstrainedPolySystem(f, [], [0.5 - z * z], ["z"])).V)
        got["constrained"] = (round(lo, 5), round(hi, 5))
        assert -np.sqrt(0.5) - 1e-6 <= lo and hi <= np.sqrt(0.5) + 1e-6
        assert time.perf_counter() - t0 < 30.0


# -- 6 -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def three_machine():
    with c6_timer():
        study = build_study(load_model(fixture_path("three_machine.txt")))
        psys = transform_to_polynomial(study, with_lvrt=True)
        cert = roa.estimate_csr(psys)
    return study, psys, cert


@pytest.fixture(scope="module")
def three_machine_free(three_machine):
    study = three_machine[0]
    with c6_timer():
        psys = transform_to_polynomial(study, with_lvrt=False)
        cert = roa.estimate_csr(psys)
    return psys, cert


def _initial_states(study, off):
    m = study.n_rel
    return np.hstack([study.sep_state[:m] + off[:, :m], off[:, m:]])


def test_criterion_6a_terminates(capsys, three_machine):
    _, _, cert = three_machine
    with criterion(capsys, "6a estimate terminates",
                   lambda: f"beta history {[round(r[-1], 4) for r in cert.beta_history]}"):
        assert cert.verified
        for run in cert.beta_history:
            assert all(b2 >= b1 for b1, b2 in zip(run, run[1:]))
        assert cert.beta_history[0][-1] > 0


def test_criterion_6b_certificate_check(capsys, three_machine):
    _, psys, cert = three_machine
    rep = {}
    with criterion(capsys, "6b certificate check", lambda: str(rep.get("r", ""))):
        with c6_timer():
            r = roa.certificate_check(psys, cert.V, 10_000, seed=0)
        rep["r"] = f"{r.n_inside}/{r.n_samples} inside, violations {r.violations}"
        assert r.n_samples == 10_000
        assert r.ok


def test_criterion_6c_trajectories(capsys, three_machine):
    study, psys, cert = three_machine
    got = {}
    with criterion(capsys, "6c trajectories", lambda: str(got)):
        with c6_timer():
            off = roa.sample_sublevel(psys, cert.V, 100, np.random.default_rng(6))
            x0 = _initial_states(study, off)
            kinds, vtime, _ = sim.classify_points(study, x0)
        # the classifier stops a trajectory at its first sample below this floor
        assert [pv.bus for pv in study.model.pv_units] == [1]
        assert np.allclose(sim.pv_thresholds(study), [0.85])
        got["bad"] = int(np.sum(kinds != sim.ClassKind.CONVERGED_FEASIBLE))
        got["lvrt_trips"] = int(np.sum(np.isfinite(vtime)))
        assert got["bad"] == 0 and got["lvrt_trips"] == 0


def test_criterion_6d_slice_area(capsys, three_machine, three_machine_free):
    _, psys, cert = three_machine
    psys_free, cert_free = three_machine_free
    got = {}
    with criterion(capsys, "6d slice area", lambda: str(got)):
        with c6_timer():
            _, a_con = roa.slice_level_set(psys, cert.V, (0, 1))
            _, a_free = roa.slice_level_set(psys_free, cert_free.V, (0, 1))
        got.update(constrained=round(a_con, 4), unconstrained=round(a_free, 4))
        assert a_con <= a_free


def test_criterion_6e_grid_containment(capsys, three_machine):
    from csrsos.cli import grid_containment_violations
    study, psys, cert = three_machine
    got = {}
    with criterion(capsys, "6e grid containment", lambda: str(got)):
        with c6_timer():
            g = sim.grid_csr(study, sim.angle_plane(study, np.pi, 101))
        Vz = cert.V.evaluate(psys.state_to_z(g.states))
        got["inside"] = int(np.sum(Vz <= 1))
        got["violations"] = grid_containment_violations(g, Vz)
        assert got["violations"] == 0


def test_criterion_6_budget(capsys, three_machine, three_machine_free):
    with criterion(capsys, "6 runtime budget", lambda: f"{_c6_clock['elapsed']:.0f}s of {C6_BUDGET:.0f}s"):
        assert _c6_clock["elapsed"] < C6_BUDGET


def test_boundary_points_converge(three_machine):
    study, psys, cert = three_machine
    off = roa.sample_sublevel(psys, cert.V, 200, np.random.default_rng(7), boundary=True)
    kinds, _, _ = sim.classify_points(study, _initial_states(study, off))
    assert np.all(kinds == sim.ClassKind.CONVERGED_FEASIBLE)


# -- 7 -----------------------------------------------------------------------

TWO_MACHINE = """\
system frequency=60 damping_ratio=2.0 reference=G1
bus 1 type=slack v=1.0
bus 2 type=pv v=1.0 pg=0.5
branch 1 2 r=0 x=0.3
machine G1 bus=1 h=3 xd=0.1
machine G2 bus=2 h=5 xd=0.1
pv P bus=1 p=0.1 lvrt=0:0.45,1.0:0.85
"""


def test_criterion_7_determinism(capsys, tmp_path):
    from csrsos import cli
    with criterion(capsys, "7 determinism"):
        model = tmp_path / "two.txt"
        model.write_text(TWO_MACHINE)
        blobs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            cli.main(["estimate", str(model), "--out", str(out), "--samples", "200", "--seed", "5"])
            blobs.append((out / "certificate.json").read_bytes())
        assert blobs[0] == blobs[1]
