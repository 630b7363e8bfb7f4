"""End-to-end run on the shipped 3-machine fixture.

Estimates the constrained stability region, checks it by sampling, and
simulates trajectories from inside the certified set. The estimate takes
about five minutes on one core.

    python demos/three_machine.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np

from csrsos import roa, sim
from csrsos.powersys import build_study, fixture_path, load_model, transform_to_polynomial

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

study = build_study(load_model(fixture_path("three_machine.txt")))
print("SEP relative angles:", np.round(study.eq.delta_rel, 5))

psys = transform_to_polynomial(study)
print("state variables:", psys.labels)
print("LVRT margin at the SEP:", round(float(psys.h[0].evaluate(np.zeros(psys.nvars))), 4))

cert = roa.estimate_csr(psys)
(out / "certificate.json").write_text(cert.to_json())
print("V =", cert.V.to_string(psys.labels, ".4g"))
print("final beta per outer round:", [round(r[-1], 4) for r in cert.beta_history])

rep = roa.certificate_check(psys, cert.V, 10_000)
print(f"sampled check: {rep.n_inside} of {rep.n_samples} inside, {rep.violations} violations")

pts, area = roa.slice_level_set(psys, cert.V, (0, 1))
print(f"angle-plane slice area: {area:.4f} rad^2")

rng = np.random.default_rng(0)
off = roa.sample_sublevel(psys, cert.V, 100, rng)
m = study.n_rel
x0 = np.hstack([study.sep_state[:m] + off[:, :m], off[:, m:]])
kinds, _, _ = sim.classify_points(study, x0)
print("trajectory classes from inside {V <= 1}:", np.bincount(kinds, minlength=3).tolist())

traj = sim.integrate(study, x0[0])
sim.write_trajectory_csv(out / "trajectory.csv", traj, study)
print("wrote", out / "certificate.json", "and", out / "trajectory.csv")
