from dataclasses import replace

import numpy as np
import pytest

from csrsos.powersys import (
    ModelError, branch_admittance, build_admittance, build_study, kron_reduce, lvrt_polynomials,
    parse_model, swing_rhs, swing_rhs_in_z, transform_to_polynomial, voltage_polynomials,
)
from csrsos.sim import integrate

TWO_MACHINE = """
system frequency=60 damping_ratio={ratio} reference=G2
bus 1 type=slack v=1.0
bus 2 type=pv v=1.0 pg={pg}
branch 1 2 r=0 x=0.3
machine G1 bus=1 h=3 xd=0.1
machine G2 bus=2 h=5 xd=0.1
"""

# (from, to, r, x, b) of the shipped 9-bus fixture, stamped by hand below
NINE_BUS = [(1, 4, 0, 0.0576, 0), (2, 7, 0, 0.0625, 0), (3, 9, 0, 0.0586, 0),
            (4, 5, 0.010, 0.085, 0.176), (4, 6, 0.017, 0.092, 0.158), (5, 7, 0.032, 0.161, 0.306),
            (6, 9, 0.039, 0.170, 0.358), (7, 8, 0.0085, 0.072, 0.149), (8, 9, 0.0119, 0.1008, 0.209)]


def two_machine(ratio=1.0, pg=0.5):
    return build_study(parse_model(TWO_MACHINE.format(ratio=ratio, pg=pg)))


# -- model file -------------------------------------------------------------

def test_parse_error_names_line():
    text = TWO_MACHINE.format(ratio=1.0, pg=0.5) + "genrator G3 bus=2\n"
    with pytest.raises(ModelError, match=r"line 8: unknown record type 'genrator'"):
        parse_model(text)


def test_parse_bad_number():
    text = TWO_MACHINE.format(ratio=1.0, pg="abc")
    with pytest.raises(ModelError, match="line 4"):
        parse_model(text)


def test_non_uniform_damping_rejected():
    text = TWO_MACHINE.format(ratio=1.0, pg=0.5).replace("h=5 xd=0.1", "h=5 xd=0.1 d=0.9")
    with pytest.raises(ModelError, match="non-uniform damping"):
        parse_model(text)


def test_disconnected_rejected():
    text = TWO_MACHINE.format(ratio=1.0, pg=0.5) + "bus 3 type=pq pl=0.1\n"
    with pytest.raises(ModelError, match="not connected"):
        parse_model(text)


def test_lvrt_curve_maximum(study):
    curve = study.model.pv_units[0].lvrt
    assert curve.max_value == 0.85
    with pytest.raises(ModelError):
        parse_model(TWO_MACHINE.format(ratio=1, pg=0.5) + "pv P bus=1 p=0.1 lvrt=0:1.2\n")


# -- network ----------------------------------------------------------------

def test_single_branch_stamp():
    model = parse_model(TWO_MACHINE.format(ratio=1.0, pg=0.5))
    y = 1 / 0.3j
    assert np.allclose(branch_admittance(model), [[y, -y], [-y, y]])
    Y = build_admittance(model, np.ones(2))
    assert Y[0, 2] == pytest.approx(-1 / 0.1j)
    assert Y[2, 2] == pytest.approx(1 / 0.1j)
    assert np.allclose(Y, Y.T)


def test_nine_bus_matches_hand_stamp(study):
    Y = np.zeros((9, 9), complex)
    for f, t, r, x, b in NINE_BUS:
        y = 1 / complex(r, x)
        i, j = f - 1, t - 1
        Y[i, i] += y + 0.5j * b
        Y[j, j] += y + 0.5j * b
        Y[i, j] -= y
        Y[j, i] -= y
    assert np.allclose(branch_admittance(study.model), Y, atol=1e-12)


def test_star_delta_elimination():
    yab, ybc = 2 - 5j, 1 - 3j
    Y = np.array([[yab, -yab, 0], [-yab, yab + ybc, -ybc], [0, -ybc, ybc]])
    red = kron_reduce(Y, [0, 2])
    y_ac = yab * ybc / (yab + ybc)
    assert np.allclose(red.Y_red, [[y_ac, -y_ac], [-y_ac, y_ac]])


def test_eliminating_nothing():
    Y = np.array([[2 - 1j, -1], [-1, 3 + 0j]])
    red = kron_reduce(Y, [0, 1])
    assert np.array_equal(red.Y_red, Y)


def test_singular_reduction_rejected():
    Y = np.zeros((3, 3), complex)
    Y[2, 2] = 1
    with pytest.raises(ModelError):
        kron_reduce(Y, [2])


def test_reduced_voltages_match_direct_solve(study, rng):
    Y = study.Y_aug
    nb = len(study.model.buses)
    for _ in range(5):
        ang = rng.uniform(-np.pi, np.pi, 3)
        E = study.eq.E_mag * np.exp(1j * ang)
        # network injections are zero: Y11 v + Y12 E = 0
        v = np.linalg.solve(Y[:nb, :nb], -Y[:nb, nb:] @ E)
        assert np.allclose(study.reduced.voltages(np.exp(1j * ang)), v, atol=1e-10)


# -- equilibrium and dynamics -------------------------------------------------

def test_fixture_equilibrium(study):
    # independent record of the operating point this fixture yields
    assert np.allclose(study.eq.delta_rel, [0.32686292, 0.21227900], atol=1e-7)
    assert study.eq.residual < 1e-8
    assert np.max(np.abs(swing_rhs(study, study.sep_state))) < 1e-8


def test_power_balance_at_operating_point(study):
    # mechanical power equals load + losses: slack share is reduced by the PV output
    assert study.eq.Pm[1:] == pytest.approx([1.63, 0.85], abs=1e-9)
    assert 0.2 < study.eq.Pm[0] < 0.5


def test_unloaded_symmetric_two_machine():
    st = two_machine(pg=0.0)
    assert st.eq.delta_rel == pytest.approx([0.0], abs=1e-12)


def test_pure_damping_term(study):
    red = replace(study.reduced, Y_red=np.zeros_like(study.reduced.Y_red))
    eq = replace(study.eq, Pm=np.zeros_like(study.eq.Pm))
    st = replace(study, reduced=red, eq=eq)
    x = np.array([0.2, -0.1, 0.7, -0.4])
    out = swing_rhs(st, x)
    assert np.allclose(out[2:], -st.damping_ratio * x[2:])


def test_lossless_energy_conserved():
    st = two_machine(ratio=0.0)
    E1, E2 = st.eq.E_mag
    M1, M2 = st.M
    Pm1, Pm2 = st.eq.Pm
    a = Pm1 / M1 - Pm2 / M2
    b = E1 * E2 / 0.5 * (1 / M1 + 1 / M2)  # 0.5 pu total series reactance
    tr = integrate(st, st.sep_state + [0.6, 1.0], T=1.0, dt=1e-3)
    d, w = tr.states[:, 0], tr.states[:, 1]
    W = 0.5 * w ** 2 - a * d - b * np.cos(d)
    assert np.ptp(W) < 1e-6


# -- polynomial form ------------------------------------------------------------

def test_polynomial_shape(psys):
    assert psys.nvars == 6
    assert len(psys.g) == 2 and len(psys.h) == 1
    assert psys.labels == ["wG2G1", "wG3G1", "sG2G1", "cG2G1", "sG3G1", "cG3G1"]
    zero = np.zeros(6)
    assert np.allclose(psys.vector_field(zero), 0, atol=1e-12)
    assert all(g.evaluate(zero) == 0 for g in psys.g)
    assert max(h.degree() for h in psys.h) == 2


def _random_states(study, rng, n):
    m = study.n_rel
    return np.hstack([study.sep_state[:m] + rng.uniform(-np.pi, np.pi, (n, m)),
                      rng.uniform(-5, 5, (n, m))])


def test_vector_field_matches_chain_rule(study, psys, rng):
    x = _random_states(study, rng, 1000)
    z = psys.state_to_z(x)
    assert np.max(np.abs(psys.vector_field(z) - swing_rhs_in_z(study, psys, x))) < 1e-8


def test_lvrt_polynomial_matches_network_solve(study, psys, rng):
    x = _random_states(study, rng, 1000)
    z = psys.state_to_z(x)
    row = study.pv_bus_rows()[0]
    v = study.bus_voltages(x[:, : study.n_rel])[:, row]
    assert np.max(np.abs(psys.h[0].evaluate(z) - (np.abs(v) ** 2 - 0.7225))) < 1e-8


def test_lvrt_margin_at_sep(study, psys):
    row = study.pv_bus_rows()[0]
    v0 = study.bus_voltages(study.eq.delta_rel)[row]
    h0 = psys.h[0].evaluate(np.zeros(6))
    assert h0 == pytest.approx(abs(v0) ** 2 - 0.7225, abs=1e-12)
    assert h0 > 0


def test_voltage_scales_with_emf(study):
    alpha = 1.3
    scaled = replace(study, reduced=replace(study.reduced, K=alpha * study.reduced.K))
    h = lvrt_polynomials(study)[0] + 0.7225
    hs = lvrt_polynomials(scaled)[0] + 0.7225
    assert hs.evaluate(np.zeros(6)) == pytest.approx(alpha ** 2 * h.evaluate(np.zeros(6)))


def test_manifold_tangency(study, psys, rng):
    z = psys.state_to_z(_random_states(study, rng, 500))
    fz = psys.vector_field(z)
    for g in psys.g:
        grad = np.stack([g.differentiate(i).evaluate(z) for i in range(6)], axis=1)
        assert np.max(np.abs(np.sum(grad * fz, axis=1))) < 1e-9


def test_round_trip_coordinates(study, psys, rng):
    x = _random_states(study, rng, 50)
    x[:, :2] = study.sep_state[:2] + np.angle(np.exp(1j * (x[:, :2] - study.sep_state[:2])))
    assert np.allclose(psys.z_to_state(psys.state_to_z(x)), x)


def test_voltage_polynomials_are_affine(study):
    for re, im in voltage_polynomials(study):
        assert re.degree() <= 1 and im.degree() <= 1


def test_unconstrained_variant(study):
    sys0 = transform_to_polynomial(study, with_lvrt=False)
    assert sys0.h == []
