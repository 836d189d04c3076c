"""Command line front end: solve, sweep, check, transcribe-only."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import mission as M
from .canonical import CANONICAL_PROBLEMS, straight_line_guess
from .meshref import RefinementOptions, refine_loop
from .nlpsolve import SolverOptions
from .transcription import transcribe

DEG = math.pi / 180.0

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_CONVERGENCE = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ascentry",
        description="Combined launch-to-entry trajectory optimization.")
    p.add_argument("--command", default="solve",
                   choices=["solve", "sweep", "check", "transcribe-only"],
                   help="what to do with the configured problem")
    p.add_argument("--config", help="JSON problem configuration "
                                    "(omitted: built-in nominal mission)")
    p.add_argument("--out", default="ascentry_out",
                   help="output directory (created if missing)")
    p.add_argument("--qdot-max", help="heating-rate bound MW/m^2; a comma "
                                      "list opens sweep branches; 'inf' lifts")
    p.add_argument("--q-max", help="heat-load bound MJ/m^2; comma list sweeps")
    p.add_argument("--k", type=float, help="entry-oscillation penalty steepness")
    p.add_argument("--max-refinements", type=int,
                   help="cap on mesh refinement rounds")
    return p


def _parse_limit_list(text: str) -> list[float]:
    vals = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        v = math.inf if part.lower() in ("inf", "none") else float(part)
        if v <= 0.0:
            raise M.ConfigError(f"limit values must be positive, got {part}")
        vals.append(v)
    if not vals:
        raise M.ConfigError("empty limit list")
    return vals


def _load_config(args) -> tuple[str, dict]:
    """(problem name, raw dict).  No file means the nominal mission."""
    if args.config is None:
        return "mission", {}
    path = Path(args.config)
    if not path.exists():
        raise M.ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise M.ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise M.ConfigError("config must be a JSON object")
    problem = data.get("problem", "mission")
    if problem != "mission" and problem not in CANONICAL_PROBLEMS:
        known = ", ".join(["mission"] + sorted(CANONICAL_PROBLEMS))
        raise M.ConfigError(f"unknown problem {problem!r}; known: {known}")
    return problem, data


def _mission_config(args, data: dict) -> M.MissionConfig:
    cfg = M.MissionConfig.from_dict(data)
    if args.qdot_max is not None:
        cfg.limits.qdot_max = _parse_limit_list(args.qdot_max)[0]
    if args.q_max is not None:
        cfg.limits.q_heat_max = _parse_limit_list(args.q_max)[0]
    if args.k is not None:
        cfg.cost.k = args.k
    if args.max_refinements is not None:
        cfg.max_refinements = args.max_refinements
    cfg.validate()
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# plot data families


def emit_plots(out: Path, table: np.ndarray) -> list[Path]:
    """Per-figure CSV families sampled from the trajectory table."""
    c = {name: i for i, name in enumerate(M.TRAJECTORY_COLUMNS)}

    def dump(name, cols, header):
        path = out / name
        with open(path, "w") as f:
            f.write(header + "\n")
            for row in table:
                f.write(",".join(f"{row[c[col]] * s:.10g}"
                                 for col, s in cols) + "\n")
        return path

    return [
        dump("plot_gamma_vs_t.csv", [("t", 1.0), ("gamma", 1.0 / DEG)],
             "t,gamma_deg"),
        dump("plot_h_v_vs_t.csv", [("t", 1.0), ("h", 1.0), ("v", 1.0)],
             "t,h_km,v_km_s"),
        dump("plot_qdot_n_vs_t.csv", [("t", 1.0), ("qdot", 1.0), ("n", 1.0)],
             "t,qdot_MW_m2,n_g"),
        dump("plot_alpha_sigma_vs_t.csv",
             [("t", 1.0), ("alpha", 1.0 / DEG), ("sigma", 1.0 / DEG)],
             "t,alpha_deg,sigma_deg"),
    ]


def emit_sweep_plots(out: Path, results) -> list[Path]:
    paths = []
    cost_path = out / "plot_cost_vs_limit.csv"
    with open(cost_path, "w") as f:
        f.write("qdot_max_MW_m2,q_heat_max_MJ_m2,objective,status\n")
        for r in results:
            f.write(f"{r.qdot_max:.10g},{r.q_heat_max:.10g},"
                    f"{r.objective:.10g},{r.status}\n")
    paths.append(cost_path)

    # tightest feasible heat load for each heating-rate branch
    frontier: dict[float, float] = {}
    for r in results:
        if r.converged:
            cur = frontier.get(r.qdot_max, math.inf)
            frontier[r.qdot_max] = min(cur, r.q_heat_max)
    map_path = out / "plot_failure_map.csv"
    with open(map_path, "w") as f:
        f.write("qdot_max_MW_m2,min_feasible_q_heat_MJ_m2\n")
        for qd in sorted(frontier, reverse=True):
            f.write(f"{qd:.10g},{frontier[qd]:.10g}\n")
    paths.append(map_path)
    return paths


# --------------------------------------------------------------------------
# commands


def _cmd_check(args, data: dict) -> int:
    cfg = _mission_config(args, data)
    tc = M.tower_clear_propagate(cfg)
    g0 = cfg.earth.g0
    print("mission bookkeeping")
    print(f"  ignition mass          {cfg.ignition_mass:,.1f} kg")
    for s in cfg.stages:
        print(f"  {s.name}: burn {s.burn_time:.1f} s, thrust {s.thrust:.1f} kN,"
              f" Isp {s.isp:.0f} s, flow {s.mass_rate(g0):.2f} kg/s,"
              f" fuel {s.fuel_mass:,.0f} kg, empty {s.empty_mass:,.0f} kg")
    print(f"  mass after stage 1 sep {cfg.m_s2:,.1f} kg")
    print(f"  mass after stage 2 sep {cfg.m_s3:,.1f} kg")
    print(f"  coast stack            {cfg.coast_mass:,.1f} kg")
    print(f"  entry vehicle          {cfg.entry_mass:,.3f} kg,"
          f" area {cfg.entry_area} m^2")
    print(f"  staging timeline       {cfg.bc.t0} -> {cfg.t_s1} -> {cfg.t_s2}"
          f" -> {cfg.t_fairing} -> {cfg.t_s3} s")
    print(f"  tower clear            t={tc.time:.3f} s, v={tc.speed:.4f} km/s,"
          f" m={tc.mass:,.1f} kg")
    lim = cfg.limits
    qd = "unbounded" if math.isinf(lim.qdot_max) else f"{lim.qdot_max:g} MW/m^2"
    ql = ("unbounded" if math.isinf(lim.q_heat_max)
          else f"{lim.q_heat_max:g} MJ/m^2")
    print(f"  limits                 q<={lim.q_max} kPa, n<={lim.n_max} g,"
          f" qdot {qd}, heat load {ql}")
    print("  configuration valid")
    return EXIT_OK


def _solver_options(cfg: M.MissionConfig) -> SolverOptions:
    return SolverOptions(tolerance=cfg.solver_tolerance,
                         max_iterations=cfg.solver_max_iterations)


def _refinement_options(cfg: M.MissionConfig) -> RefinementOptions:
    return RefinementOptions(mesh_tolerance=cfg.mesh_tolerance,
                             max_refinements=cfg.max_refinements)


def _canonical_setup(problem: str, data: dict):
    prob, meshes = CANONICAL_PROBLEMS[problem]()
    if "mesh" in data:
        from .transcription import uniform_mesh
        meshes = [uniform_mesh(int(n), int(d)) for n, d in data["mesh"]]
    sv = data.get("solver", {})
    solver = SolverOptions(tolerance=float(sv.get("tolerance", 1e-8)),
                           max_iterations=int(sv.get("max_iterations", 200)))
    rf = data.get("refinement", {})
    refinement = RefinementOptions(
        mesh_tolerance=float(rf.get("tolerance", 1e-6)),
        max_refinements=int(rf.get("max_refinements", 6)))
    return prob, meshes, solver, refinement


def _write_canonical_outputs(out: Path, report) -> None:
    sol = report.solution
    rows = []
    for ph in sol.phases:
        tt = np.unique(np.concatenate([ph.state_times(),
                                       np.linspace(ph.t0, ph.tf, 101)]))
        ys = ph.sample_states(tt)
        us = ph.sample_controls(tt)
        rows.append((ph, tt, ys, us))
    ph0 = rows[0][0]
    header = ["t"] + list(ph0.state_names) + list(ph0.control_names)
    with open(out / "trajectory.csv", "w") as f:
        f.write(",".join(header) + "\n")
        for _, tt, ys, us in rows:
            for i in range(len(tt)):
                vals = [tt[i], *ys[i], *us[i]]
                f.write(",".join(f"{v:.10g}" for v in vals) + "\n")


def _cmd_solve_canonical(args, problem: str, data: dict, out: Path) -> int:
    prob, meshes, solver, refinement = _canonical_setup(problem, data)
    if args.max_refinements is not None:
        refinement.max_refinements = args.max_refinements
    report = refine_loop(prob, meshes, straight_line_guess, refinement, solver,
                         history_path=out / "mesh_history.json")
    rep = report.solve_reports[-1]
    summary = {"problem": problem, "status": rep.status,
               "objective": rep.objective, "violation": rep.violation,
               "mesh_converged": report.converged,
               "refinement_iterations": report.iterations}
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=1)
        f.write("\n")
    _write_canonical_outputs(out, report)
    print(f"{problem}: {rep.status}, objective {rep.objective:.8g}")
    return EXIT_OK if rep.converged and report.converged else EXIT_NO_CONVERGENCE


def _cmd_transcribe_canonical(args, problem: str, data: dict, out: Path) -> int:
    prob, meshes, _, _ = _canonical_setup(problem, data)
    nlp = transcribe(prob, meshes)
    nlp.dump_layout(out / "layout.json")
    print(f"{problem}: {nlp.n_var} variables, {nlp.n_con} constraints")
    return EXIT_OK


def _cmd_solve_mission(args, data: dict, out: Path) -> int:
    cfg = _mission_config(args, data)
    run = M.solve_mission(cfg, solver_options=_solver_options(cfg),
                          refinement=_refinement_options(cfg),
                          history_path=out / "mesh_history.json")
    res = M.summarize_run(run)
    summary = {"status": run.status,
               "mesh_converged": run.report.converged,
               "refinement_iterations": run.report.iterations,
               "objective": res.objective,
               "heat_load_MJ_m2": res.heat_load,
               "max_qdot_MW_m2": res.max_qdot,
               "peak_altitude_km": res.peak_altitude,
               "pierce_speed_km_s": res.pierce_speed,
               "pierce_fpa_deg": res.pierce_fpa_deg,
               "entry_duration_s": res.entry_duration}
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=1)
        f.write("\n")
    if run.solution is not None:
        table = M.trajectory_table(cfg, run.solution)
        M.write_trajectory_csv(out / "trajectory.csv", table)
        emit_plots(out, table)
    print(f"mission: {run.status}, objective {res.objective:.6g}, "
          f"heat load {res.heat_load:.6g} MJ/m^2")
    return EXIT_OK if run.converged else EXIT_NO_CONVERGENCE


def _cmd_sweep(args, problem: str, data: dict, out: Path) -> int:
    if problem != "mission":
        raise M.ConfigError("sweep applies to the mission problem only")
    cfg = M.MissionConfig.from_dict(data)
    if args.k is not None:
        cfg.cost.k = args.k
    if args.max_refinements is not None:
        cfg.max_refinements = args.max_refinements
    cfg.validate()
    sweep_cfg = data.get("sweep", {})
    sweep: dict = {}
    if args.qdot_max is not None:
        sweep["qdot_max"] = _parse_limit_list(args.qdot_max)
    elif "qdot_max" in sweep_cfg:
        sweep["qdot_max"] = [math.inf if v is None else float(v)
                             for v in sweep_cfg["qdot_max"]]
    if args.q_max is not None:
        sweep["q_heat_max"] = _parse_limit_list(args.q_max)
    elif "q_heat_max" in sweep_cfg:
        sweep["q_heat_max"] = [math.inf if v is None else float(v)
                               for v in sweep_cfg["q_heat_max"]]
    if not sweep:
        raise M.ConfigError("sweep needs --qdot-max/--q-max lists or a "
                            "config sweep section")

    def progress(r):
        print(f"  qdot_max={r.qdot_max:g} q_heat_max={r.q_heat_max:g}: "
              f"{r.status}, objective {r.objective:.6g}")

    results = M.run_study(cfg, sweep, solver_options=_solver_options(cfg),
                          refinement=_refinement_options(cfg),
                          progress=progress)
    M.study_to_csv(results, out / "study.csv")
    emit_sweep_plots(out, results)
    ok = all(r.converged for r in results)
    print(f"sweep: {sum(r.converged for r in results)}/{len(results)} "
          f"cells converged")
    return EXIT_OK if ok else EXIT_NO_CONVERGENCE


def _cmd_transcribe_mission(args, data: dict, out: Path) -> int:
    cfg = _mission_config(args, data)
    prob = M.build_mission(cfg)
    nlp = transcribe(prob, M.default_meshes(cfg))
    nlp.dump_layout(out / "layout.json")
    print(f"mission: {nlp.n_var} variables, {nlp.n_con} constraints")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        problem, data = _load_config(args)
        if args.command == "check":
            if problem != "mission":
                raise M.ConfigError("check applies to the mission problem only")
            return _cmd_check(args, data)
        out = _outdir(args)
        if args.command == "solve":
            if problem == "mission":
                return _cmd_solve_mission(args, data, out)
            return _cmd_solve_canonical(args, problem, data, out)
        if args.command == "sweep":
            return _cmd_sweep(args, problem, data, out)
        if problem == "mission":
            return _cmd_transcribe_mission(args, data, out)
        return _cmd_transcribe_canonical(args, problem, data, out)
    except M.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
