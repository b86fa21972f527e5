"""Command-line front end: ``dirac-aa <command> <scenario> [options]``.

Exit codes: 0 all checks pass, 1 a check failed, 2 the scenario or the command
line is invalid, 3 a numerical procedure failed.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import lattice as lat
from . import pointwise as pw
from .action import (ActionError, ActionSetup, DegenerateCaseError, action_by_mineur,
                     action_dependence_rank, action_table, beta_form, coaffine_transition,
                     evaluate_actions, full_aa_convergence, leaf_differentials, mineur_admissibility, random_unimodular,
                     verify_full_aa, verify_partial_aa, verify_torus_isotropy, _lagrangian_tori)
from .dirac import (DiracError, PointCheck, bi_corank_map, closedness_residual, courant_closedness,
                    isotropy_check, rank_check)
from .expr import ExpressionError, evaluate, parse
from .flow import FlowError
from .report import (EXIT_NUMERIC_ERROR, EXIT_PARSE_ERROR, CheckRecord, Report, Table, write_outputs)
from .sampling import halton_points
from .scenario import Scenario, ScenarioError, bundled_names, load_scenario
from .system import (HamiltonianBindingError, IntegrableSystemError, bind_hamiltonians,
                     bracket_residual, check_integrability, hamiltonian_checks)
from .torus import (TorusChart, TorusError, TorusTools, generator_preservation, generator_tensor_residual,
                    preservation_prerequisite, torus_average, torus_sample_points)

COMMANDS = ("check-dirac", "check-system", "find-torus", "average", "actions", "verify-aa", "all")

NUMERIC_ERRORS = (FlowError, TorusError, ActionError, lat.LatticeError, pw.FrameError,
                  np.linalg.LinAlgError, FloatingPointError)


class Run:
    """Shared state of one invocation: samples, the bound system, torus data."""

    def __init__(self, sc: Scenario, args: argparse.Namespace):
        self.sc = sc
        self.tol_scale = float(args.tol_scale)
        self.grid = args.grid
        self.seed = args.seed
        self.points = halton_points(sc.chart, args.samples, args.seed)
        self.timings: list[tuple[str, float]] = []
        self._sys = None
        self._tools = None
        self._tc = None
        self._setup = None

    def tol(self, name: str, default: float) -> float:
        return self.sc.tol(name, default) * self.tol_scale

    def record(self, c: PointCheck, tol_name: str | None = None, name: str | None = None) -> CheckRecord:
        thr = c.threshold if tol_name is None else self.tol(tol_name, c.threshold)
        return CheckRecord.upper(name or c.name, c.residual, thr, c.worst_point, c.detail)

    # -- lazily built objects ---------------------------------------------

    def need_system(self):
        if self.sc.system is None:
            raise ScenarioError(f"scenario {self.sc.name!r} has no [system] block")
        return self.sc.system

    def bound_system(self):
        if self._sys is None:
            s = self.need_system()
            if self.sc.hamiltonians is None:
                raise ScenarioError(f"scenario {self.sc.name!r} declares no Hamiltonians")
            self._sys = bind_hamiltonians(s, self.sc.dirac, self.sc.hamiltonians, self.points,
                                          self.tol("hamiltonian", 1e-9))
        return self._sys

    def torus_system(self):
        return self.bound_system() if self.sc.hamiltonians is not None else self.need_system()

    def tools(self) -> TorusTools:
        if self._tools is None:
            if self.sc.torus is None:
                raise ScenarioError(f"scenario {self.sc.name!r} has no [torus] block")
            self._tools = TorusTools(self.torus_system())
        return self._tools

    def torus_chart(self) -> TorusChart:
        if self._tc is None:
            t = self.sc.torus
            self._tc = self.tools().find_period_lattice(np.array(t.seed), t.t_max, t.transversal)
        return self._tc

    def action_setup(self) -> ActionSetup:
        if self._setup is None:
            t = self.sc.torus
            self._setup = ActionSetup.create(self.bound_system(), self.torus_chart(),
                                             self.sc.level_points(self.grid), t.casimir, t.hypothesis,
                                             self.tools())
        return self._setup

    def sample_tori(self) -> np.ndarray:
        """Points on the base torus and on two neighbouring tori."""
        tc = self.torus_chart()
        if tc.transversal:
            lo, hi = self.sc.chart.domain_box[self.sc.chart.index(tc.transversal[0])]
            d = 0.05 * (hi - lo)
            offsets = (0.0, d, -d)
        else:
            offsets = (0.0,)
        return torus_sample_points(self.tools(), tc, offsets, per_axis=4)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_check_dirac(run: Run, rep: Report) -> None:
    sc, D, pts = run.sc, run.sc.dirac, run.points
    rep.add(run.record(isotropy_check(D, pts), "isotropy"))
    rc = rank_check(D, pts)
    rep.add(CheckRecord.lower("rank", rc.residual, rc.threshold, rc.worst_point, rc.detail))
    rep.add(run.record(courant_closedness(D, pts, run.tol("closedness", 1e-9)), "closedness"))
    if sc.structure_kind == "presymplectic":
        res, worst = closedness_residual(sc.tensor, pts)
        rep.add(CheckRecord.upper("form_closed", res, run.tol("closedness", 1e-9), worst,
                                  "max |dω| at the samples"))
    try:
        bm = bi_corank_map(D, pts)
    except pw.FrameError as exc:
        rep.add(CheckRecord("bi_corank", "fail", detail=str(exc)))
        return
    desc = "; ".join(f"(r,s)=({r},{s}): {c} points" for (r, s), c in sorted(bm.items()))
    rep.values["bi_corank"] = [[r, s, c] for (r, s), c in sorted(bm.items())]
    exp = sc.expect.get("bicorank")
    if exp is not None:
        ok = set(bm) == {tuple(exp)}
        rep.add(CheckRecord("bi_corank", "pass" if ok else "fail", detail=f"{desc}; expected {tuple(exp)}"))
    else:
        rep.add(CheckRecord("bi_corank", "info", detail=desc))


def cmd_check_system(run: Run, rep: Report) -> None:
    sc = run.sc
    s = run.need_system()
    pts = run.points
    reg = check_integrability(s, pts, sc.region, run.tol("commutator", 1e-9), 1e-6)
    rep.add(CheckRecord.upper("commutators", reg.commutator_residual, reg.residual_tol, reg.worst_point,
                              "max |[Xi, Xj]|"))
    rep.add(CheckRecord.upper("first_integrals", reg.invariance_residual, reg.residual_tol,
                              detail="max |Xi(Fj)|"))
    rep.add(CheckRecord.lower("independence_fields", reg.wedge_X_norm, reg.wedge_tol,
                              detail="smallest singular value of (X1..Xp) in the region"))
    if s.q:
        rep.add(CheckRecord.lower("independence_integrals", reg.wedge_dF_norm, reg.wedge_tol,
                                  detail="smallest singular value of (dF1..dFq) in the region"))
    if reg.warnings:
        rep.add(CheckRecord("degenerate_samples", "warn", float(reg.warnings),
                            detail="samples outside the regular region where independence fails"))
    if sc.hamiltonians is not None:
        try:
            bound = run.bound_system()
        except HamiltonianBindingError as exc:
            rep.add(CheckRecord("hamiltonian_binding", "fail", detail=str(exc)))
            bound = None
        if bound is not None:
            for c in hamiltonian_checks(bound, pts, run.tol("hamiltonian", 1e-9)):
                rep.add(run.record(c))
            rep.add(CheckRecord.upper("involution", bracket_residual(bound, pts), run.tol("commutator", 1e-9),
                                      detail="max |{Hi, Hj}|"))
    iso = verify_torus_isotropy(s, sc.dirac, pts)
    rep.add(run.record(iso, "isotropy_tori"))


def cmd_find_torus(run: Run, rep: Report) -> None:
    sc, tools = run.sc, run.tools()
    tc = run.torus_chart()
    rep.add(CheckRecord.upper("period_return", tc.return_error, run.tol("return", 1e-8), tc.base,
                              "max |Φ_Lk(x0) − x0|"))
    rep.values["lattice"] = tc.lattice
    rep.values["frequency_matrix"] = tc.frequency_matrix
    rep.values["levels"] = tc.levels
    # a second base point on the same torus
    frac = np.array([0.37, 0.61, 0.23, 0.89][: tools.p])
    x1 = tools.joint_flow(frac @ tc.lattice, tc.base)
    tc1 = tools.find_period_lattice(x1, sc.torus.t_max, tc.transversal)
    _, dev = lat.unimodular_relation(tc.lattice, tc1.lattice, 1.0)
    ok = lat.equivalent(tc.lattice, tc1.lattice, run.tol("lattice", 1e-8))
    rep.add(CheckRecord("lattice_base_independence", "pass" if ok else "fail", dev, run.tol("lattice", 1e-8),
                        tuple(float(v) for v in x1), "lattice at a second point of the torus"))
    exp = sc.expect.get("lattice")
    if exp is not None:
        ref = np.atleast_2d(np.array(exp, dtype=float))
        U, dev = lat.unimodular_relation(ref, tc.lattice, run.tol("lattice", 1e-9))
        rep.add(CheckRecord("lattice_expected", "pass" if U is not None else "fail", dev,
                            run.tol("lattice", 1e-9), detail="unimodular equivalence with the reference"))
    n_side = 24
    s = np.arange(n_side) / n_side
    pts = tools.grid_flow(tc.base, list(tc.lattice), [s] * tools.p).reshape(-1, tools.n)
    ang = np.stack(np.meshgrid(*([s] * tools.p), indexing="ij"), -1).reshape(-1, tools.p)
    rep.tables.append(Table("torus_points", tuple(f"theta{k + 1}" for k in range(tools.p))
                            + sc.chart.coord_names, np.hstack([ang, pts])))


def cmd_average(run: Run, rep: Report) -> None:
    sc, tools = run.sc, run.tools()
    tc = run.torus_chart()
    pts = run.sample_tori()
    D = sc.dirac
    rep.add(run.record(preservation_prerequisite(tools.sys, D, pts, run.tol("preservation", 1e-8))))
    rep.add(run.record(generator_preservation(tools, tc, D, pts, run.tol("preservation", 1e-8))))
    for i, T in enumerate(sc.average_tensors):
        tag = f"tensor{i + 1}"
        r = torus_average(tools, tc, T)
        rep.add(CheckRecord.upper(f"average_fixes_{tag}", r.deviation, run.tol("average", 1e-10),
                                  detail="max |avg(T) − T| on the torus grid"))
        rep.add(CheckRecord.upper(f"average_idempotent_{tag}", r.idempotency, run.tol("average", 1e-10),
                                  detail="max |avg(avg(T)) − avg(T)|"))
        rep.add(CheckRecord("average_refinement_" + tag, "info", r.refinement_change,
                            detail="change against the doubled grid"))
        g = generator_tensor_residual(tools, tc, T, pts, run.tol("preservation", 1e-8))
        rep.add(run.record(g, "preservation", f"generators_preserve_{tag}"))


def cmd_actions(run: Run, rep: Report) -> None:
    sc = run.sc
    try:
        st = run.action_setup()
    except DegenerateCaseError as exc:
        rep.add(CheckRecord("regularity_hypothesis", "fail", detail=str(exc)))
        return
    hr = st.hypothesis_report
    rep.add(CheckRecord("regularity_hypothesis", "pass",
                        detail=f"declared ({st.hypothesis}); intersection dims {sorted(set(hr.kernel_intersection_dims))}, "
                               f"leaf codimensions {sorted(set(hr.leaf_codims))}"))
    rep.add(run.record(beta_form(st).leaf_closedness(st.sample_points()), "closed_beta"))
    table = action_table(st)
    p = st.p
    rep.add(CheckRecord.upper("path_independence", table.path_independence, run.tol("path", 1e-8),
                              detail="two orderings of the leaf path"))
    rep.add(CheckRecord.upper("action_gradient", table.gradient_residual, run.tol("gradient", 1e-6),
                              detail="max |dA_k − β_k| on leaf directions"))
    rep.add(CheckRecord.upper("isotropy_tori", table.isotropy_residual, run.tol("isotropy_tori", 1e-9)))
    # constancy on a torus away from the base
    far = st.family[-1]
    s = (np.arange(4) + 0.3) / 4
    on = run.tools().grid_flow(far.base, list(far.lattice), [s] * p).reshape(-1, st.n)
    vals = evaluate_actions(st, on, False).actions
    rep.add(CheckRecord.upper("action_constant_on_torus", float(np.max(np.ptp(vals, axis=0))),
                              run.tol("constancy", 1e-8), far.base))
    exp = sc.expect.get("action")
    if exp is not None:
        pts = st.level_points()
        ref = np.stack([[evaluate(parse(str(e), sc.chart), sc.chart, pt) for e in exp] for pt in pts])
        d = np.abs(table.actions - ref)
        i = int(np.argmax(d.max(axis=1)))
        rep.add(CheckRecord.upper("action_expected", float(d.max()), run.tol("action", 1e-7), pts[i],
                                  "path-integral actions against the reference formula"))
    if sc.mineur is not None:
        adm = mineur_admissibility(st, sc.mineur)
        rep.add(run.record(adm, "mineur"))
        if adm.passed:
            M = action_by_mineur(st, sc.mineur, st.level_points(), check=False)
            r0 = _base_row(st)
            dM, dA = M - M[r0], table.actions - table.actions[r0]
            errs = {sgn: float(np.max(np.abs(dM - sgn * dA))) for sgn in (1, -1)}
            sgn = min(errs, key=errs.get)
            want = sc.expect.get("mineur_sign")
            ok = errs[sgn] <= run.tol("action", 1e-7) and (want is None or want == sgn)
            rep.add(CheckRecord("mineur_agreement", "pass" if ok else "fail", errs[sgn], run.tol("action", 1e-7),
                                detail=f"loop integral differences equal {sgn:+d} times the path-integral actions"))
            rep.values["mineur"] = M
    names = tuple(st.tc.transversal)
    cols = names + tuple(f"A{k + 1}" for k in range(p)) + tuple(
        f"freq{i + 1}{j + 1}" for i in range(p) for j in range(p))
    rows = np.hstack([table.levels, table.actions, table.frequencies.reshape(len(table.levels), -1)])
    rep.tables.append(Table("actions", cols, rows))


def _base_row(st: ActionSetup) -> int:
    tidx = [st.sys.chart.index(c) for c in st.tc.transversal]
    d = np.linalg.norm(st.level_points()[:, tidx] - st.tc.base[tidx], axis=1)
    return int(np.argmin(d))


def cmd_verify_aa(run: Run, rep: Report) -> None:
    sc = run.sc
    try:
        st = run.action_setup()
    except DegenerateCaseError as exc:
        rep.add(CheckRecord("regularity_hypothesis", "fail", detail=str(exc)))
        return
    pts = st.sample_points(per_axis=3)
    rep.add(run.record(verify_torus_isotropy(st.sys, st.dirac, pts), "isotropy_tori"))
    lag, _ = _lagrangian_tori(st, pts)
    rep.values["lagrangian_tori"] = lag
    ld = leaf_differentials(st, pts)
    if lag:
        full = verify_full_aa(st, pts, differentials=ld)
        rep.add(CheckRecord.upper("full_action_angle", full.residual, run.tol("aa", 1e-5), full.worst_point,
                                  "max |ω_S − Σ dθk∧dAk| on leaf pairs (step 1e-4, Richardson)"))
        rep.values["action_order"] = list(full.action_order)
        steps = (0.04, 0.02, 0.01)
        res, orders = full_aa_convergence(st, steps, pts[: min(len(pts), 6)])
        rep.tables.append(Table("convergence", ("h", "residual"), np.column_stack([steps, res])))
        if np.all(res <= 1e-9):
            rep.add(CheckRecord("difference_convergence", "pass", float(res.max()), 1e-9,
                                detail="differencing error vanishes (affine actions and angles)"))
        else:
            ok = bool(np.all(np.abs(orders - 2.0) <= 0.2))
            rep.add(CheckRecord("difference_convergence", "pass" if ok else "fail",
                                float(np.max(np.abs(orders - 2.0))), 0.2,
                                detail="observed orders " + ", ".join(f"{o:.3f}" for o in orders)))
    part = verify_partial_aa(st, pts, differentials=ld)
    rep.add(CheckRecord.upper("partial_action_angle", part.angle_defect, run.tol("aa", 1e-5), part.worst_point,
                              "max |Δ(∂θk, ·)| with Δ = ω_S − Σ dθk∧dAk"))
    rep.values["intersection_rank"] = part.intersection_rank
    if part.f.size:
        rep.values["transverse_coefficients"] = part.f[0]
    exp = sc.expect.get("f12")
    if exp is not None:
        got = part.f[:, 0, 1] if part.f.shape[-1] >= 2 else np.array([np.nan])
        d = float(np.max(np.abs(got - float(exp))))
        rep.add(CheckRecord.upper("transverse_coefficient", d, run.tol("f", 1e-6),
                                  detail=f"f12 against {float(exp)}"))
    rng = np.random.default_rng(0 if run.seed is None else run.seed)
    levels = st.level_points()
    base = evaluate_actions(st, levels, False).actions
    worst, worstU = 0.0, None
    for _ in range(sc.coaffine_trials):
        U = random_unimodular(st.p, rng)
        r = coaffine_transition(st, U, levels, base)
        if r.deviation >= worst:
            worst, worstU = r.deviation, U
    rep.add(CheckRecord.upper("coaffine_transition", worst, run.tol("coaffine", 1e-7),
                              detail=f"{sc.coaffine_trials} random unimodular U; worst U = {worstU.tolist()}"))
    rank, sv = action_dependence_rank(st)
    rep.values["dependence_rank"] = rank
    rep.values["dependence_singular_values"] = sv
    exp = sc.expect.get("dependence_rank")
    if exp is not None:
        rep.add(CheckRecord("dependence_rank", "pass" if rank == int(exp) else "fail", float(rank), float(exp),
                            detail="numerical rank of the action Jacobian on the transversal"))


STEPS = {
    "check-dirac": cmd_check_dirac,
    "check-system": cmd_check_system,
    "find-torus": cmd_find_torus,
    "average": cmd_average,
    "actions": cmd_actions,
    "verify-aa": cmd_verify_aa,
}


def applicable(sc: Scenario) -> list[str]:
    cmds = ["check-dirac"]
    if sc.system is not None:
        cmds.append("check-system")
    if sc.torus is not None:
        cmds += ["find-torus", "average"]
        if sc.hamiltonians is not None:
            cmds += ["actions", "verify-aa"]
    return cmds


def run_command(command: str, sc: Scenario, args: argparse.Namespace) -> tuple[Report, list[tuple[str, float]]]:
    rep = Report(sc.name, command)
    run = Run(sc, args)
    steps = applicable(sc) if command == "all" else [command]
    for name in steps:
        t0 = time.perf_counter()
        try:
            STEPS[name](run, rep)
        except (ScenarioError, ExpressionError, IntegrableSystemError, DiracError) as exc:
            rep.error, rep.error_code = f"{name}: {exc}", EXIT_PARSE_ERROR
        except NUMERIC_ERRORS as exc:
            rep.error, rep.error_code = f"{name}: {type(exc).__name__}: {exc}", EXIT_NUMERIC_ERROR
        run.timings.append((name, time.perf_counter() - t0))
        if rep.error is not None:
            break
    return rep, run.timings


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dirac-aa",
                                 description="Dirac structures, Liouville tori and action-angle checks.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("scenario", help="scenario file or bundled scenario name")
        p.add_argument("--tol-scale", type=float, default=1.0, help="multiply every threshold")
        p.add_argument("--samples", type=int, default=128, help="Halton sample count")
        p.add_argument("--grid", type=int, default=None, help="level grid size per transversal axis")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="scramble the Halton sequence")
        p.add_argument("--json", action="store_true", help="write report.json instead of report.toml")
    sub.add_parser("list", help="list bundled scenarios")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "list":
        print("\n".join(bundled_names()))
        return 0
    if args.tol_scale <= 0 or args.samples < 1 or (args.grid is not None and args.grid < 2):
        print("dirac-aa: error: --tol-scale must be positive, --samples ≥ 1, --grid ≥ 2", file=sys.stderr)
        return EXIT_PARSE_ERROR
    try:
        sc = load_scenario(args.scenario)
    except (ScenarioError, DiracError, ExpressionError) as exc:
        print(f"dirac-aa: scenario error: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    with np.errstate(all="ignore"):
        rep, timings = run_command(args.command, sc, args)
    out = args.out if args.out is not None else Path("dirac-aa-out") / sc.name
    path = write_outputs(rep, out, args.json)
    (out / "timings.txt").write_text("".join(f"{n} {t:.3f}\n" for n, t in timings), encoding="utf-8")
    sys.stdout.write(rep.summary())
    print(f"report: {path}")
    if rep.error:
        print(f"dirac-aa: {rep.error}", file=sys.stderr)
    return rep.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
