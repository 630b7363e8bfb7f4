"""Command-line front end: ``csrsos {build,estimate,validate,grid}``.

Exit codes: 0 success, 1 usage, 2 model error, 3 solver failure,
4 validation violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import roa, sim
from .powersys import ModelError, PowerFlowError, build_study, load_model, transform_to_polynomial
from .sdp import SdpSettings
from .sos import SolverFailure

log = logging.getLogger("csrsos")

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_SOLVER, EXIT_VIOLATION = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _g4(x: float) -> str:
    return f"{x:.4g}"


def _load_study(path: str):
    p = Path(path)
    if not p.is_file():
        raise ModelError(f"model file not found: {path}")
    return build_study(load_model(p))


def _degree_overrides(items: list[str]) -> roa.DegreeProfile:
    names = {f.name for f in fields(roa.DegreeProfile)}
    kw = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or key not in names:
            raise UsageError(f"bad --degree {item!r}; expected NAME=INT with NAME in {sorted(names)}")
        try:
            kw[key] = int(val)
        except ValueError:
            raise UsageError(f"bad --degree {item!r}: not an integer") from None
    try:
        return roa.DegreeProfile(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _positive(name: str, value: float) -> float:
    if not value > 0:
        raise UsageError(f"{name} must be positive, got {value}")
    return value


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------------------
# commands


def cmd_build(args) -> int:
    study = _load_study(args.model)
    model = study.model
    names = [m.name for m in model.machines]
    ref = names[study.ref]
    psys = transform_to_polynomial(study)
    print(f"model: {len(model.buses)} buses, {len(model.branches)} branches, "
          f"{len(model.machines)} machines, {len(model.pv_units)} PV units")
    print(f"reference machine: {ref}; damping ratio D/M = {_g4(study.damping_ratio)} 1/s")
    sep = ", ".join(f"{names[k]}-{ref} {_g4(d)}" for k, d in zip(study.nonref, study.eq.delta_rel))
    print(f"SEP relative angles [rad]: {sep}")
    print(f"internal EMF |E| [pu]: {', '.join(_g4(e) for e in study.eq.E_mag)}")
    print(f"mechanical power [pu]: {', '.join(_g4(p) for p in study.eq.Pm)}")
    Yr = study.reduced.Y_red
    print("reduced admittance (retained internal nodes):")
    for row in Yr:
        print("  " + "  ".join(f"{_g4(v.real):>8}{v.imag:+.4g}j" for v in row))
    for pv, hj in zip(model.pv_units, psys.h):
        print(f"LVRT margin h(0) at PV {pv.name} (bus {pv.bus}, v_min {_g4(pv.lvrt.max_value)}): "
              f"{_g4(hj.evaluate(np.zeros(psys.nvars)))}")
    if args.json:
        report = {
            "reference": ref,
            "sep_delta_rel": [float(d) for d in study.eq.delta_rel],
            "E_mag": [float(e) for e in study.eq.E_mag],
            "Pm": [float(p) for p in study.eq.Pm],
            "h0": [float(h.evaluate(np.zeros(psys.nvars))) for h in psys.h],
            "labels": psys.labels,
        }
        Path(args.json).write_text(json.dumps(report, indent=1, sort_keys=True))
    return EXIT_OK


def _options(args) -> roa.RoaOptions:
    return roa.RoaOptions(
        eps=_positive("--eps", args.eps),
        beta_tol=_positive("--beta-tol", args.beta_tol),
        max_outer=int(_positive("--max-outer", args.max_outer)),
        max_inner=int(_positive("--max-inner", args.max_inner)),
        sdp=SdpSettings(max_iters=50),
    )


def cmd_estimate(args) -> int:
    study = _load_study(args.model)
    prof = _degree_overrides(args.degree)
    opts = _options(args)
    psys = transform_to_polynomial(study, with_lvrt=not args.unconstrained)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cert = roa.estimate_csr(psys, prof, opts)
    (out / "certificate.json").write_text(cert.to_json())
    pts, area = roa.slice_level_set(psys, cert.V, (args.x_index, args.y_index), args.n_dirs)
    base = study.sep_state
    _write_rows(out / "levelset.csv", ["x", "y"],
                [(base[args.x_index] + p[0], base[args.y_index] + p[1]) for p in pts])
    betas = cert.beta_history[-1]
    print(f"V = {cert.V.to_string(psys.labels, '.4g')}")
    print(f"final beta {_g4(betas[-1])}; outer rounds {len(cert.beta_history)}; "
          f"slice area {_g4(area)} rad^2; SOS re-check {'passed' if cert.verified else 'FAILED'}")
    rep = roa.certificate_check(psys, cert.V, args.samples, seed=args.seed)
    print(f"certificate_check: {rep.n_samples} samples, {rep.n_inside} inside, "
          f"{rep.violations} violations")
    return EXIT_OK if rep.ok and cert.verified else EXIT_VIOLATION


def _read_certificate(path: str) -> roa.LyapunovCertificate:
    try:
        return roa.LyapunovCertificate.from_dict(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read certificate {path}: {exc}") from None


def _check_labels(psys, cert) -> None:
    if cert.V.nvars != psys.nvars or (cert.labels and cert.labels != list(psys.labels)):
        raise UsageError("certificate variables do not match the model")


def cmd_validate(args) -> int:
    study = _load_study(args.model)
    cert = _read_certificate(args.certificate)
    psys = transform_to_polynomial(study, with_lvrt=True)
    _check_labels(psys, cert)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    violations = 0

    rep = roa.certificate_check(psys, cert.V, args.samples, seed=args.seed)
    print(f"certificate_check: {rep.n_samples} samples, {rep.n_inside} inside; violations: "
          f"positivity {rep.positivity_violations}, decrease {rep.decrease_violations}, "
          f"feasibility {rep.feasibility_violations}")
    violations += rep.violations

    rng = np.random.default_rng(args.seed)
    off = roa.sample_sublevel(psys, cert.V, args.trajectories, rng)
    m = study.n_rel
    x0 = np.hstack([study.sep_state[:m] + off[:, :m], off[:, m:]])
    kinds, vtime, _ = sim.classify_points(study, x0, T=args.horizon, dt=args.dt)
    bad = int(np.sum(kinds != sim.ClassKind.CONVERGED_FEASIBLE))
    print(f"trajectories from inside {{V <= 1}}: {args.trajectories}, not ConvergedFeasible: {bad}")
    violations += bad
    labels = {int(k): sim.Classification(k).label for k in sim.ClassKind}
    _write_rows(out / "trajectories.csv",
                ["index"] + [f"x{i}" for i in range(2 * m)] + ["class", "violation_time"],
                [[i] + list(x0[i]) + [labels[int(kinds[i])], float(vtime[i])]
                 for i in range(len(kinds))])

    if args.grid:
        spec = sim.angle_plane(study, args.half_width, args.resolution)
        g = sim.grid_csr(study, spec, T=args.horizon, dt=args.dt, jobs=args.jobs)
        Vz = cert.V.evaluate(psys.state_to_z(g.states))
        sim.write_grid_csv(out / "grid.csv", g, Vz)
        miss = grid_containment_violations(g, Vz)
        print(f"grid {args.resolution}x{args.resolution}: nodes with V <= 1 not ConvergedFeasible "
              f"(beyond one cell of slack): {miss}")
        violations += miss
    print(f"total violations: {violations}")
    return EXIT_OK if violations == 0 else EXIT_VIOLATION


def grid_containment_violations(g: sim.GridResult, Vz: np.ndarray) -> int:
    """Nodes inside {V <= 1} whose whole 3x3 neighbourhood is not ConvergedFeasible."""
    nx, ny = g.shape
    inside = (Vz <= 1.0).reshape(nx, ny)
    good = (g.kinds == sim.ClassKind.CONVERGED_FEASIBLE).reshape(nx, ny)
    pad = np.pad(good, 1, constant_values=False)
    any_good = np.zeros_like(good)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            any_good |= pad[1 + dx:1 + dx + nx, 1 + dy:1 + dy + ny]
    # a node counts only if it is misclassified and no neighbour is classified good
    return int(np.sum(inside & ~good & ~any_good))


def cmd_grid(args) -> int:
    study = _load_study(args.model)
    s = study.sep_state
    xr = tuple(args.x_range) if args.x_range else (s[args.x_index] - np.pi, s[args.x_index] + np.pi)
    yr = tuple(args.y_range) if args.y_range else (s[args.y_index] - np.pi, s[args.y_index] + np.pi)
    base = tuple(args.base) if args.base else None
    if base is not None and len(base) != s.size:
        raise UsageError(f"--base needs {s.size} values")
    try:
        spec = sim.SliceSpec(args.x_index, args.y_index, xr, yr, (args.resolution, args.resolution), base)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    g = sim.grid_csr(study, spec, v_min=args.v_min, T=args.horizon, dt=args.dt,
                     conv_tol=args.conv_tol, jobs=args.jobs)
    Vz = None
    if args.certificate:
        cert = _read_certificate(args.certificate)
        psys = transform_to_polynomial(study)
        _check_labels(psys, cert)
        Vz = cert.V.evaluate(psys.state_to_z(g.states))
    sim.write_grid_csv(args.out, g, Vz)
    counts = np.bincount(g.kinds, minlength=3)
    print(f"grid {args.resolution}x{args.resolution}: ConvergedFeasible {counts[0]}, "
          f"InfeasibleLvrt {counts[1]}, NotConverged {counts[2]} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="csrsos", description="Constrained stability region estimation")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="load a model, report SEP and reduced network")
    b.add_argument("model")
    b.add_argument("--json", help="also write the report as JSON")
    b.set_defaults(func=cmd_build)

    e = sub.add_parser("estimate", help="compute a Lyapunov certificate")
    e.add_argument("model")
    e.add_argument("--out", default="out")
    e.add_argument("--unconstrained", action="store_true", help="drop the LVRT constraints")
    e.add_argument("--max-outer", type=int, default=10)
    e.add_argument("--max-inner", type=int, default=20)
    e.add_argument("--degree", action="append", metavar="NAME=INT", help="degree profile override")
    e.add_argument("--eps", type=float, default=1e-6)
    e.add_argument("--beta-tol", type=float, default=1e-3)
    e.add_argument("--x-index", type=int, default=0)
    e.add_argument("--y-index", type=int, default=1)
    e.add_argument("--n-dirs", type=int, default=720, help="rays for the level-set slice")
    e.add_argument("--samples", type=int, default=10_000)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("validate", help="check a certificate against samples and simulation")
    v.add_argument("model")
    v.add_argument("certificate")
    v.add_argument("--out", default="out")
    v.add_argument("--samples", type=int, default=10_000)
    v.add_argument("--trajectories", type=int, default=100)
    v.add_argument("--grid", action="store_true", help="also classify the angle-plane grid")
    v.add_argument("--resolution", type=int, default=101)
    v.add_argument("--half-width", type=float, default=np.pi)
    v.add_argument("--horizon", type=float, default=sim.HORIZON)
    v.add_argument("--dt", type=float, default=sim.DT)
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("grid", help="classify a 2-D slice of initial states")
    g.add_argument("model")
    g.add_argument("--out", default="grid.csv")
    g.add_argument("--certificate", help="add V at each node")
    g.add_argument("--x-index", type=int, default=0)
    g.add_argument("--y-index", type=int, default=1)
    g.add_argument("--x-range", type=float, nargs=2)
    g.add_argument("--y-range", type=float, nargs=2)
    g.add_argument("--base", type=float, nargs="+", help="pinned state (default: SEP)")
    g.add_argument("--resolution", type=int, default=101)
    g.add_argument("--v-min", type=float, help="voltage floor (default: each PV unit's bound)")
    g.add_argument("--horizon", type=float, default=sim.HORIZON)
    g.add_argument("--dt", type=float, default=sim.DT)
    g.add_argument("--conv-tol", type=float, default=sim.CONV_TOL)
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_grid)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"csrsos: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, PowerFlowError) as exc:
        print(f"csrsos: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (roa.EstimationError, SolverFailure) as exc:
        print(f"csrsos: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
