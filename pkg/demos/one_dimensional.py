"""Stability region of dz/dt = -z + z^3, with and without a state constraint.

The true region of attraction is (-1, 1). Adding h(z) = 0.5 - z^2 >= 0 should
shrink the certified set to lie inside |z| <= sqrt(0.5).

    python demos/one_dimensional.py
"""

import numpy as np

from csrsos import roa
from csrsos.poly import variables
from csrsos.powersys import ConstrainedPolySystem


def level_interval(V):
    grid = np.linspace(-1.5, 1.5, 30001)
    inside = grid[V.evaluate(grid[:, None]) <= 1.0]
    return inside.min(), inside.max()


(z,) = variables(1)
f = [-z + z ** 3]

for name, h in [("unconstrained", []), ("h = 0.5 - z^2", [0.5 - z * z])]:
    cert = roa.estimate_csr(ConstrainedPolySystem(f, [], h, ["z"]))
    lo, hi = level_interval(cert.V)
    print(f"{name}:")
    print(f"  V = {cert.V.to_string(['z'], '.6g')}")
    print(f"  {{V <= 1}} ~ [{lo:.4f}, {hi:.4f}], beta per round {[round(r[-1], 4) for r in cert.beta_history]}")
    print(f"  SOS re-check {'passed' if cert.verified else 'failed'}")
