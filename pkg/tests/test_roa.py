import json

import numpy as np
import pytest

from csrsos import roa
from csrsos.poly import Polynomial, squared_norm, variables
from csrsos.powersys import ConstrainedPolySystem

(z,) = variables(1)
CUBIC = [-z + z ** 3]  # true region of attraction: |z| < 1


def cubic(h=()):
    return ConstrainedPolySystem(CUBIC, [], list(h), ["z"])


def level_interval(V: Polynomial) -> tuple[float, float]:
    """Roots of V(z) = 1 around the origin for a 1-D polynomial."""
    coeffs = np.zeros(V.degree() + 1)
    for (e,), c in V.items():
        coeffs[V.degree() - e] = c
    coeffs[-1] -= 1.0
    r = np.roots(coeffs)
    r = np.sort(r[np.abs(r.imag) < 1e-9].real)
    return float(r[r < 0].max()), float(r[r > 0].min())


@pytest.fixture(scope="module")
def cubic_cert():
    return roa.estimate_csr(cubic())


def test_degree_profile_defaults():
    p = roa.DegreeProfile()
    assert (p.V, p.s2, p.s6, p.s8, p.s9, p.lambda1, p.lambda2, p.lambda3, p.s_h, p.lambda_h) == \
        (2, 0, 0, 2, 0, 0, 0, 2, 0, 0)


def test_degree_profile_rejects_odd_sos_degree():
    with pytest.raises(ValueError):
        roa.DegreeProfile(s8=1)


def test_degree_profile_rejects_odd_assembly():
    with pytest.raises(ValueError):
        roa.DegreeProfile(V=3, s8=2).check_system(cubic())


def test_line_search_brackets_threshold():
    calls = []

    def feasible(b):
        calls.append(b)
        return "ok" if b <= 2.345 else None

    beta, sol, n = roa.line_search(feasible, 0.1, 1e-3, 50, 1e4, "start")
    assert 2.345 - 1e-3 <= beta <= 2.345
    assert sol == "ok" and n == len(calls) <= 50


def test_line_search_stops_at_cap():
    beta, _, _ = roa.line_search(lambda b: "ok", 1.0, 1e-3, 50, 10.0)
    assert beta <= 10.0


def test_local_estimate_cubic():
    V0, beta0 = roa.local_lyapunov(cubic())
    assert beta0 > 0
    assert V0.monomials() == [(2,)]
    lo, hi = level_interval(V0)
    assert -1 < lo and hi < 1


def test_vacuous_constraint_changes_nothing():
    one = Polynomial.constant(1, 1.0)
    V_a, b_a = roa.local_lyapunov(cubic())
    V_b, b_b = roa.local_lyapunov(cubic([one]))
    assert V_a.allclose(V_b, 1e-5)
    assert b_a == pytest.approx(b_b, abs=1e-3)


def test_expanding_interior_cubic():
    sys1 = cubic()
    V0, _ = roa.local_lyapunov(sys1)
    V, beta, mult, hist = roa.expanding_interior(sys1, squared_norm(1), 0.0, V0)
    assert all(b2 >= b1 for b1, b2 in zip(hist, hist[1:]))
    lo, hi = level_interval(V)
    assert -1 < lo and hi < 1
    assert hi - lo >= 1.8
    assert all(roa.verify_certificate(sys1, V, squared_norm(1), beta, mult, 1e-6).values())


def test_estimate_cubic(cubic_cert):
    V = cubic_cert.V
    assert V.coef((0,)) == 0.0
    lo, hi = level_interval(V)
    assert -1 < lo and hi < 1
    assert (hi - lo) / 2.0 >= 0.9
    assert cubic_cert.verified
    for run in cubic_cert.beta_history:
        assert all(b2 >= b1 for b1, b2 in zip(run, run[1:]))


def test_constraint_limits_cubic():
    cert = roa.estimate_csr(cubic([0.5 - z * z]))
    lo, hi = level_interval(cert.V)
    assert -np.sqrt(0.5) - 1e-6 <= lo and hi <= np.sqrt(0.5) + 1e-6
    assert cert.verified


def test_single_outer_round_is_expanding_interior():
    sys1 = cubic()
    opts = roa.RoaOptions(max_outer=1, verify=False)
    cert = roa.estimate_csr(sys1, opts=opts)
    V0, _ = roa.local_lyapunov(sys1, opts=opts)
    V, beta, _, hist = roa.expanding_interior(sys1, squared_norm(1), 0.0, V0, opts=opts)
    assert cert.V == V
    assert cert.beta_history == [hist]


def test_certificate_json_round_trip(cubic_cert):
    text = cubic_cert.to_json()
    back = roa.LyapunovCertificate.from_dict(json.loads(text))
    assert back.V == cubic_cert.V
    assert back.to_json() == text
    d = json.loads(text)
    assert d["level"] == 1.0 and d["degree_profile"]["s8"] == 2


def test_estimate_deterministic(cubic_cert):
    again = roa.estimate_csr(cubic())
    assert again.to_json() == cubic_cert.to_json()


def test_certificate_check_cubic(cubic_cert):
    rep = roa.certificate_check(cubic(), cubic_cert.V, 2000, seed=3)
    assert rep.ok and rep.n_inside > 0


def test_certificate_check_flags_corruption(cubic_cert):
    bad = -cubic_cert.V
    rep = roa.certificate_check(cubic(), bad, 2000, seed=3)
    assert rep.positivity_violations > 0


def test_certificate_check_excludes_origin():
    # V = z^2 vanishes only at the origin, which is not a violation
    rep = roa.certificate_check(cubic(), 2 * z * z, 500, seed=0)
    assert rep.ok


def test_slice_area_for_disc():
    x, y = variables(2)
    sys2 = ConstrainedPolySystem([-x, -y], labels=["x", "y"])
    _, area = roa.slice_level_set(sys2, x * x + y * y, n_dirs=2000, t_max=3.0)
    assert area == pytest.approx(np.pi, rel=1e-4)
