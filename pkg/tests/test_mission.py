import json
import math
from dataclasses import replace

import numpy as np
import pytest

from ascentry import mission as M
from ascentry.dynamics import Geo, geo_from_vert, vert_from_geo
from ascentry.meshref import RefinementReport
from ascentry.transcription import transcribe


@pytest.fixture(scope="module")
def cfg():
    return M.default_config()


@pytest.fixture(scope="module")
def guess_setup(cfg):
    """One transcription plus calibrated guess, shared across tests."""
    nlp = transcribe(M.build_mission(cfg), M.default_meshes(cfg))
    z0 = M.initial_guess(cfg, nlp)
    return nlp, z0


def test_mass_ledger(cfg):
    assert cfg.ignition_mass == pytest.approx(87770.0)
    assert cfg.m_s2 == pytest.approx(38780.0)
    assert cfg.m_s3 == pytest.approx(11110.0)
    assert cfg.coast_mass == pytest.approx(3630.0)
    assert cfg.bc.m0 == 85743.0
    # the liftoff mass is the ignition stack less the pre-release burn
    burn = cfg.stages[0].mass_rate(cfg.earth.g0) * cfg.bc.t0
    assert cfg.ignition_mass - burn == pytest.approx(cfg.bc.m0, abs=1.0)


def test_stage_mass_rates(cfg):
    g0 = cfg.earth.g0
    s1, s2, s3 = cfg.stages
    assert s1.mass_rate(g0) == pytest.approx(s1.thrust / (s1.isp * g0),
                                             rel=1e-14)
    assert s2.mass_rate(g0) == pytest.approx(403.56338, abs=1e-4)
    # fuel loads match the fixed burn windows
    for s in (s1, s2, s3):
        assert s.mass_rate(g0) * s.burn_time == pytest.approx(s.fuel_mass,
                                                              rel=0.01)


def test_stage_rejects_nonpositive_fields():
    with pytest.raises(M.ConfigError):
        M.VehicleStage("bad", 10.0, 100.0, -1.0, 4.3, 300.0, 1000.0)


@pytest.mark.parametrize("mutate", [
    lambda c: replace(c, stages=c.stages[:2]),
    lambda c: replace(c, t_s1=130.0),
    lambda c: replace(c, limits=replace(c.limits, q_split=200.0)),
    lambda c: replace(c, limits=replace(c.limits, h_peak_lo=10.0)),
    lambda c: replace(c, entry_mass=5000.0),
    lambda c: replace(c, bc=replace(c.bc, m0=1.0e6)),
    lambda c: replace(c, mesh=c.mesh[:5]),
    lambda c: replace(c, guess_apogee=50.0),
    lambda c: replace(c, solver_tolerance=-1.0),
])
def test_validate_rejections(cfg, mutate):
    with pytest.raises(M.ConfigError):
        mutate(cfg).validate()


def _tower_oracle(cfg, dt=1e-3):
    """RK4 on hdd = T/m - g0 from rest; crossing by bisection."""
    s1 = cfg.stages[0]
    g0 = cfg.earth.g0
    mdot = s1.mass_rate(g0)
    m0 = cfg.ignition_mass

    def acc(t, v):
        return s1.thrust / (m0 - mdot * t) - g0

    def step(t, h, v, dt):
        k1h, k1v = v, acc(t, v)
        k2h, k2v = v + 0.5 * dt * k1v, acc(t + 0.5 * dt, v + 0.5 * dt * k1v)
        k3h, k3v = v + 0.5 * dt * k2v, acc(t + 0.5 * dt, v + 0.5 * dt * k2v)
        k4h, k4v = v + dt * k3v, acc(t + dt, v + dt * k3v)
        return (h + dt * (k1h + 2 * k2h + 2 * k3h + k4h) / 6.0,
                v + dt * (k1v + 2 * k2v + 2 * k3v + k4v) / 6.0)

    t, h, v = 0.0, 0.0, 0.0
    target = cfg.bc.tower_height
    while h < target:
        t_prev, h_prev, v_prev = t, h, v
        h, v = step(t, h, v, dt)
        t += dt
    lo, hi = t_prev, t
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        hm, _ = step(t_prev, h_prev, v_prev, mid - t_prev)
        if hm < target:
            lo = mid
        else:
            hi = mid
    t_x = 0.5 * (lo + hi)
    _, v_x = step(t_prev, h_prev, v_prev, t_x - t_prev)
    return t_x, v_x, m0 - mdot * t_x


def test_tower_clear_matches_integration(cfg):
    tc = M.tower_clear_propagate(cfg)
    t_ref, v_ref, m_ref = _tower_oracle(cfg)
    assert tc.time == pytest.approx(t_ref, rel=1e-7)
    assert tc.speed == pytest.approx(v_ref, rel=1e-6)
    assert tc.mass == pytest.approx(m_ref, rel=1e-9)
    assert tc.altitude == pytest.approx(cfg.bc.pad_elevation
                                        + cfg.bc.tower_height)
    assert 0.0 < tc.time < cfg.stages[0].burn_time


def test_tower_clear_needs_liftoff_thrust(cfg):
    s1 = cfg.stages[0]
    weak = replace(cfg, stages=(M.VehicleStage(
        s1.name, s1.burn_time, s1.empty_mass, s1.fuel_mass, s1.ref_area,
        s1.isp, 100.0),) + cfg.stages[1:])
    with pytest.raises(M.ConfigError):
        M.tower_clear_propagate(weak)


def test_json_roundtrip(cfg, tmp_path):
    path = tmp_path / "mission.json"
    cfg.to_json(path)
    back = M.MissionConfig.from_json(path)
    assert back.to_dict() == cfg.to_dict()
    # inf limits survive through the null encoding
    assert math.isinf(back.limits.qdot_max)
    assert json.loads(path.read_text())["limits"]["qdot_max"] is None


def test_from_dict_partial_override(cfg):
    over = M.MissionConfig.from_dict({"limits": {"qdot_max": 1.5},
                                      "guess": {"apogee": 120.0}})
    assert over.limits.qdot_max == 1.5
    assert over.guess_apogee == 120.0
    assert over.bc.m0 == cfg.bc.m0
    assert over.limits.q_max == cfg.limits.q_max


def test_from_dict_malformed():
    with pytest.raises(M.ConfigError):
        M.MissionConfig.from_dict({"limits": []})
    with pytest.raises(M.ConfigError):
        M.MissionConfig.from_dict({"stages": [{"name": "solo"}]})


def test_build_mission_structure(cfg):
    prob = M.build_mission(cfg)
    names = [p.name for p in prob.phases]
    assert names == ["boost1", "boost2", "boost3", "exo_burn", "coast_up",
                     "coast_down", "entry_glide", "entry_dive"]
    dims = [(p.nx, p.nu) for p in prob.phases]
    assert dims == [(10, 4), (9, 2), (9, 2), (9, 2), (8, 2), (8, 2),
                    (8, 2), (9, 4)]
    hops = [(lk.name, lk.a, lk.b) for lk in prob.linkages]
    assert hops == [("stage1_sep", 0, 1), ("stage2_sep", 1, 2),
                    ("fairing_drop", 2, 3), ("burnout", 3, 4),
                    ("payload_sep", 4, 5), ("pierce", 5, 6),
                    ("bank_to_vertical", 6, 7)]
    assert [b.name for b in prob.boundaries] == ["dive_unit_quat"]
    acc = prob.accumulators[0]
    assert acc.name == "heat_load" and acc.lo == 0.0
    assert acc.hi == cfg.limits.q_heat_max


def test_heating_limit_toggles_path_rows(cfg):
    base = transcribe(M.build_mission(cfg), M.default_meshes(cfg))
    assert not any("qdot_max" in n for n in base.con_names)
    tight = replace(cfg, limits=replace(cfg.limits, qdot_max=2.0))
    nlp = transcribe(M.build_mission(tight), M.default_meshes(tight))
    touched = {n.split(":")[0] for n in nlp.con_names if "qdot_max" in n}
    # the heating limit binds in both entry phases and nowhere else
    assert touched == {"p6", "p7"}


def test_linkage_residuals_vanish_when_consistent(cfg):
    prob = M.build_mission(cfg)
    lk = {l.name: l for l in prob.linkages}
    geo = np.array([30.0, -2.1, 0.6, 2.0, 0.3, 1.2, 0.05, -0.3, 40000.0])
    vert = vert_from_geo(geo)
    assert np.abs(lk["stage1_sep"].func(vert, 56.4, geo[:8], 56.4)).max() < 1e-12

    gm = np.append(geo[:8], 5500.0)
    dropped = gm.copy()
    dropped[8] -= cfg.fairing_mass
    assert np.abs(lk["fairing_drop"].func(gm, 179.1, dropped, 179.1)).max() == 0.0

    # separation at the peak keeps position, speed and heading; the pitch
    # channels are free to jump with the mass change
    other = geo[:8].copy()
    other[Geo.GAMMA] += 0.2
    other[Geo.ALPHA] -= 0.1
    r = lk["payload_sep"].func(geo[:8], 900.0, other, 900.0)
    assert len(r) == 6 and np.abs(r).max() == 0.0

    below = vert_from_geo(geo[:8])
    r = lk["bank_to_vertical"].func(geo[:8], 1200.0, below, 1200.0)
    assert np.abs(r).max() < 1e-12
    assert abs(lk["bank_to_vertical"].func(geo[:8], 1200.0, below,
                                           1201.0)[8] - 1.0) < 1e-12


def test_phase_contexts_match_vehicle(cfg):
    ctx = M.phase_contexts(cfg)
    assert len(ctx) == 8
    assert ctx[0].thrust == cfg.stages[0].thrust
    assert ctx[3].atmosphere is None and ctx[3].aero is None
    assert ctx[4].fixed_mass == pytest.approx(3630.0)
    assert ctx[5].fixed_mass == pytest.approx(907.186)
    assert ctx[6].ref_area == pytest.approx(0.48387)


def test_default_meshes(cfg):
    meshes = M.default_meshes(cfg)
    assert len(meshes) == 8
    assert [m.n_intervals for m in meshes] == [n for n, _ in cfg.mesh]


def test_initial_guess_packs_cleanly(cfg, guess_setup):
    nlp, z0 = guess_setup
    assert np.all(np.isfinite(z0))
    assert np.all(z0 >= nlp.z_lo - 1e-9)
    assert np.all(z0 <= nlp.z_hi + 1e-9)
    m0_idx = nlp.var_names.index("p0:boost1:x:m:n0")
    assert z0[m0_idx] == pytest.approx(cfg.bc.m0)
    c = nlp.constraints(z0)
    row = nlp.con_names.index("acc:heat_load:balance")
    acc = z0[nlp.acc_idx["heat_load"]]
    assert acc > 0.0
    assert abs(c[row]) <= 1e-2 * (1.0 + acc)
    # the propagated arc leaves only local defects for the optimizer
    viol = np.maximum(nlp.c_lo - c, 0.0) + np.maximum(c - nlp.c_hi, 0.0)
    assert viol.max() < 100.0


def test_trajectory_table_and_csv(cfg, guess_setup, tmp_path):
    nlp, z0 = guess_setup
    sol = nlp.solution_from(z0)
    table = M.trajectory_table(cfg, sol)
    assert table.shape[1] == len(M.TRAJECTORY_COLUMNS)
    t = table[:, 0]
    assert np.all(np.diff(t) >= -1e-9)
    assert t[0] == pytest.approx(cfg.bc.t0)
    assert np.all(table[:, 9] > 0.0)          # mass column
    assert np.all(table[:, 10] >= 0.0)        # dynamic pressure
    assert np.all(np.diff(table[:, 13]) >= -1e-9)   # heat load accumulates
    path = tmp_path / "traj.csv"
    M.write_trajectory_csv(path, table)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(M.TRAJECTORY_COLUMNS)
    assert len(lines) == len(table) + 1


def _report_with(sol, nlp):
    return RefinementReport(converged=sol is not None, iterations=1,
                            errors=[], solution=sol, nlp=nlp, meshes=[])


def test_summarize_run(cfg, guess_setup):
    nlp, z0 = guess_setup
    sol = nlp.solution_from(z0)
    run = M.MissionRun(config=cfg, report=_report_with(sol, nlp),
                       status="converged")
    res = M.summarize_run(run)
    assert res.converged
    assert res.peak_altitude == pytest.approx(cfg.guess_apogee, abs=15.0)
    assert 6.0 < res.pierce_speed < 8.0
    assert res.pierce_fpa_deg < 0.0
    assert res.entry_duration > 300.0
    assert res.heat_load > 0.0 and res.max_qdot > 0.0

    empty = M.MissionRun(config=cfg, report=_report_with(None, None),
                         status="infeasible")
    res2 = M.summarize_run(empty)
    assert not res2.converged and math.isnan(res2.objective)
    assert res2.qdot_max == cfg.limits.qdot_max


def test_run_study_branch_semantics(cfg, monkeypatch):
    calls = []

    def fake_solve(c, *, warm=None, solver_options=None, refinement=None,
                   history_path=None):
        calls.append((c.limits.qdot_max, c.limits.q_heat_max, warm))
        ok = c.limits.q_heat_max >= 10.0
        rep = RefinementReport(converged=ok, iterations=1, errors=[],
                               solution="marker" if ok else None, nlp=None,
                               meshes=[])
        return M.MissionRun(config=c, report=rep,
                            status="converged" if ok else "infeasible")

    def fake_summary(run):
        lm = run.config.limits
        return M.StudyResult(lm.qdot_max, lm.q_heat_max, 1.0, 115.0, 7.3,
                             -3.0, 1800.0, 4000.0, 8.0, run.status)

    monkeypatch.setattr(M, "solve_mission", fake_solve)
    monkeypatch.setattr(M, "summarize_run", fake_summary)
    seen = []
    results = M.run_study(cfg, {"qdot_max": [3.0, 2.0],
                                "q_heat_max": [20.0, 5.0, 1.0]},
                          progress=seen.append)
    # each heating branch stops at its first failure; 1.0 is never tried
    assert [(c[0], c[1]) for c in calls] == [(3.0, 20.0), (3.0, 5.0),
                                             (2.0, 20.0), (2.0, 5.0)]
    assert [c[2] for c in calls] == [None, "marker", None, "marker"]
    assert [r.status for r in results] == ["converged", "infeasible"] * 2
    assert len(seen) == 4

    with pytest.raises(M.ConfigError):
        M.run_study(cfg, {})


def test_study_to_csv(tmp_path):
    rows = [M.StudyResult(math.inf, math.inf, 114.2, 115.0, 7.3, -3.1,
                          1800.0, 3996.5, 8.3, "converged"),
            M.StudyResult(2.0, 500.0, float("nan"), float("nan"),
                          float("nan"), float("nan"), float("nan"),
                          float("nan"), float("nan"), "infeasible")]
    path = tmp_path / "study.csv"
    M.study_to_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(M.STUDY_COLUMNS)
    first = lines[1].split(",")
    assert first[0] == "inf" and first[-1] == "converged"
    assert lines[2].split(",")[-1] == "infeasible"
