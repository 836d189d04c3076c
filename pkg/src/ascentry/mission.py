"""Eight-phase launch-to-entry mission: configuration, assembly, studies.

The flight is modeled as four powered phases (first stage past the tower,
second stage, third stage inside then outside the sensible atmosphere), two
ballistic coast phases split at the peak altitude where the entry vehicle
separates, and two entry phases split where the dynamic pressure first
reaches the level at which bank modulation becomes effective.  Phases 1 and
8 run the Euler-parameter state so near-vertical flight stays regular; the
rest use the geodetic angles.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .dynamics import (GEO_DIM, Geo, PhaseContext, Vert, aero_env,
                       angles_to_quat, geo_from_vert, geo_rates,
                       vert_from_geo, vert_rates)
from .meshref import RefinementOptions, RefinementReport, refine_loop
from .models import (AeroTable, AtmosphereTable, EarthConstants,
                     extend_entry_aero, load_boost_aero,
                     load_default_atmosphere, load_entry_aero)
from .nlpsolve import SolverOptions
from .pathcost import (CostWeights, HeatingParams, dynamic_pressure,
                       heating_rate, path_quantities, running_cost_geo,
                       running_cost_vert)
from .transcription import (Accumulator, BoundaryConstraint, IntegralTerm,
                            Linkage, MeshPhase, MultiPhaseProblem,
                            PathConstraint, PhaseDef, Solution, transcribe,
                            uniform_mesh)

DEG = math.pi / 180.0
SLACK_BOUND = 1.0e-5

GEO_STATE_NAMES = ("h", "phi", "theta", "v", "gamma", "psi", "alpha", "sigma")
VERT_STATE_NAMES = ("h", "phi", "theta", "v", "e1", "e2", "e3", "eta", "alpha")
GEO_CONTROL_NAMES = ("u_alpha", "u_sigma")
VERT_CONTROL_NAMES = ("u_alpha", "w1", "u1", "u2")


class ConfigError(ValueError):
    """A mission configuration violates its own bookkeeping."""


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class VehicleStage:
    """One booster stage; masses kg, thrust kN, burn s, area m^2, Isp s."""

    name: str
    burn_time: float
    empty_mass: float
    fuel_mass: float
    ref_area: float
    isp: float
    thrust: float

    def __post_init__(self):
        for f in fields(self):
            if f.name != "name" and getattr(self, f.name) <= 0.0:
                raise ConfigError(f"stage {self.name}: {f.name} must be positive")

    @property
    def total_mass(self) -> float:
        return self.empty_mass + self.fuel_mass

    def mass_rate(self, g0: float) -> float:
        """Propellant consumption kg/s for standard gravity g0 in km/s^2."""
        return self.thrust / (self.isp * g0)


@dataclass
class PathLimits:
    # q in kPa, n in g, altitudes km, heating MW/m^2 and MJ/m^2
    q_max: float = 126.3
    q_split: float = 12.0
    n_max: float = 12.0
    h_atm: float = 80.0
    h_peak_lo: float = 100.0
    h_peak_hi: float = 200.0
    qdot_max: float = math.inf
    q_heat_max: float = math.inf


@dataclass
class CostParams:
    alpha_bar_boost: float = 0.0
    alpha_bar_entry: float = 11.86 * DEG
    alpha_max: float = 25.0 * DEG
    u_alpha_max: float = 10.0 * DEG
    u_sigma_max: float = 30.0 * DEG
    k: float = 3.0


@dataclass
class BoundaryData:
    """Endpoint data: km, km/s, rad, kg, s."""

    t0: float = 2.52
    h0: float = 0.167
    lon0: float = -120.63 * DEG
    lat0: float = 34.58 * DEG
    v0: float = 0.040
    m0: float = 85743.0
    hf: float = 0.0
    lonf: float = -192.30 * DEG
    latf: float = 8.70 * DEG
    vf: float = 1.219
    pad_elevation: float = 0.117
    tower_height: float = 0.05


def _default_stages() -> tuple[VehicleStage, VehicleStage, VehicleStage]:
    return (VehicleStage("stage1", 56.4, 3630.0, 45360.0, 4.307, 282.0, 2224.1),
            VehicleStage("stage2", 60.7, 3170.0, 24500.0, 4.307, 309.0, 1222.9),
            VehicleStage("stage3", 72.0, 630.0, 7080.0, 4.307, 300.0, 289.1))


def _default_mesh() -> tuple[tuple[int, int], ...]:
    return ((4, 4), (4, 4), (4, 4), (2, 4),
            (3, 4), (3, 4), (5, 4), (8, 4))


@dataclass
class MissionConfig:
    earth: EarthConstants = field(default_factory=EarthConstants)
    stages: tuple[VehicleStage, ...] = field(default_factory=_default_stages)
    fairing_mass: float = 400.0
    payload_mass: float = 3000.0
    entry_mass: float = 907.186
    entry_area: float = 0.48387
    t_s1: float = 56.4
    t_s2: float = 117.1
    t_fairing: float = 179.1
    t_s3: float = 189.1
    limits: PathLimits = field(default_factory=PathLimits)
    cost: CostParams = field(default_factory=CostParams)
    bc: BoundaryData = field(default_factory=BoundaryData)
    heating: HeatingParams = field(default_factory=HeatingParams)
    mesh: tuple[tuple[int, int], ...] = field(default_factory=_default_mesh)
    mesh_tolerance: float = 1.0e-4
    max_refinements: int = 10
    solver_tolerance: float = 1.0e-6
    solver_max_iterations: int = 500
    guess_apogee: float = 115.0
    atmosphere: str = "builtin"
    boost_aero: object = "builtin"
    entry_aero: object = "builtin"

    # -- derived bookkeeping

    @property
    def ignition_mass(self) -> float:
        return (sum(s.total_mass for s in self.stages)
                + self.fairing_mass + self.payload_mass)

    @property
    def m_s2(self) -> float:
        """Vehicle mass right after first-stage separation."""
        return (sum(s.total_mass for s in self.stages[1:])
                + self.fairing_mass + self.payload_mass)

    @property
    def m_s3(self) -> float:
        """Vehicle mass right after second-stage separation."""
        return self.stages[2].total_mass + self.fairing_mass + self.payload_mass

    @property
    def coast_mass(self) -> float:
        """Spent third stage plus payload during the ascent coast."""
        return self.stages[2].empty_mass + self.payload_mass

    def validate(self) -> None:
        bad: list[str] = []
        if len(self.stages) != 3:
            raise ConfigError("exactly three booster stages are required")
        if not 0.0 < self.bc.t0 < self.t_s1 < self.t_s2 < self.t_fairing < self.t_s3:
            bad.append("staging times must satisfy t0 < t_s1 < t_s2 < t_fairing < t_s3")
        marks = (self.t_s1, self.t_s2 - self.t_s1, self.t_s3 - self.t_s2)
        for s, span in zip(self.stages, marks):
            if abs(s.burn_time - span) > 1.0e-6:
                bad.append(f"{s.name} burn time {s.burn_time} does not match "
                           f"the staging timeline span {span:.6g}")
            ideal = s.thrust * s.burn_time / (s.isp * self.earth.g0)
            if abs(ideal - s.fuel_mass) > 0.01 * s.fuel_mass:
                bad.append(f"{s.name} fuel load {s.fuel_mass} is inconsistent "
                           f"with thrust*burn/(Isp*g0) = {ideal:.1f}")
        for label, v in (("fairing_mass", self.fairing_mass),
                         ("payload_mass", self.payload_mass),
                         ("entry_mass", self.entry_mass),
                         ("entry_area", self.entry_area)):
            if v <= 0.0:
                bad.append(f"{label} must be positive")
        if self.entry_mass >= self.payload_mass:
            bad.append("entry vehicle must be lighter than the payload stack")
        lm = self.limits
        if not 0.0 < lm.q_split < lm.q_max:
            bad.append("need 0 < q_split < q_max")
        if lm.n_max <= 0.0 or lm.h_atm <= 0.0:
            bad.append("n_max and h_atm must be positive")
        if not lm.h_atm <= lm.h_peak_lo < lm.h_peak_hi:
            bad.append("peak altitude window must sit above the atmosphere edge")
        if lm.qdot_max <= 0.0 or lm.q_heat_max <= 0.0:
            bad.append("heating limits must be positive (inf disables)")
        c = self.cost
        if min(c.alpha_max, c.u_alpha_max, c.u_sigma_max) <= 0.0 or c.k <= 0.0:
            bad.append("cost normalizations and k must be positive")
        if not 0.0 < self.bc.v0 < 1.0 or self.bc.m0 <= 0.0:
            bad.append("initial speed/mass out of range")
        if self.bc.m0 > self.ignition_mass:
            bad.append("initial mass exceeds the ignition mass budget")
        if len(self.mesh) != 8:
            bad.append("mesh must list (intervals, degree) for all 8 phases")
        else:
            for p, (n, d) in enumerate(self.mesh):
                if n < 1 or not 1 <= d <= 40:
                    bad.append(f"mesh entry {p} out of range")
        if self.mesh_tolerance <= 0.0 or self.solver_tolerance <= 0.0:
            bad.append("tolerances must be positive")
        if self.max_refinements < 1 or self.solver_max_iterations < 1:
            bad.append("iteration limits must be at least 1")
        if not self.guess_apogee >= lm.h_peak_lo:
            bad.append("guess apogee must sit inside the peak window")
        if bad:
            raise ConfigError("; ".join(bad))

    # -- serialization

    def to_dict(self) -> dict:
        def num(x):
            return None if math.isinf(x) else x
        return {
            "problem": "mission",
            "earth": {"mu": self.earth.mu, "re": self.earth.re,
                      "omega": self.earth.omega, "g0": self.earth.g0},
            "stages": [{"name": s.name, "burn_time": s.burn_time,
                        "empty_mass": s.empty_mass, "fuel_mass": s.fuel_mass,
                        "ref_area": s.ref_area, "isp": s.isp,
                        "thrust": s.thrust} for s in self.stages],
            "vehicle": {"fairing_mass": self.fairing_mass,
                        "payload_mass": self.payload_mass,
                        "entry_mass": self.entry_mass,
                        "entry_area": self.entry_area},
            "times": {"t_s1": self.t_s1, "t_s2": self.t_s2,
                      "t_fairing": self.t_fairing, "t_s3": self.t_s3},
            "limits": {"q_max": self.limits.q_max,
                       "q_split": self.limits.q_split,
                       "n_max": self.limits.n_max,
                       "h_atm": self.limits.h_atm,
                       "h_peak_lo": self.limits.h_peak_lo,
                       "h_peak_hi": self.limits.h_peak_hi,
                       "qdot_max": num(self.limits.qdot_max),
                       "q_heat_max": num(self.limits.q_heat_max)},
            "cost": {"alpha_bar_boost_deg": self.cost.alpha_bar_boost / DEG,
                     "alpha_bar_entry_deg": self.cost.alpha_bar_entry / DEG,
                     "alpha_max_deg": self.cost.alpha_max / DEG,
                     "u_alpha_max_deg": self.cost.u_alpha_max / DEG,
                     "u_sigma_max_deg": self.cost.u_sigma_max / DEG,
                     "k": self.cost.k},
            "boundary": {"t0": self.bc.t0, "h0": self.bc.h0,
                         "lon0_deg": self.bc.lon0 / DEG,
                         "lat0_deg": self.bc.lat0 / DEG,
                         "v0": self.bc.v0, "m0": self.bc.m0,
                         "hf": self.bc.hf, "lonf_deg": self.bc.lonf / DEG,
                         "latf_deg": self.bc.latf / DEG, "vf": self.bc.vf,
                         "pad_elevation": self.bc.pad_elevation,
                         "tower_height": self.bc.tower_height},
            "heating": {"kappa": self.heating.kappa, "rho0": self.heating.rho0,
                        "v_circ": self.heating.v_circ,
                        "exp_rho": self.heating.exp_rho,
                        "exp_v": self.heating.exp_v},
            "mesh": [list(e) for e in self.mesh],
            "refinement": {"tolerance": self.mesh_tolerance,
                           "max_refinements": self.max_refinements},
            "solver": {"tolerance": self.solver_tolerance,
                       "max_iterations": self.solver_max_iterations},
            "guess": {"apogee": self.guess_apogee},
            "tables": {"atmosphere": self.atmosphere,
                       "boost_aero": self.boost_aero,
                       "entry_aero": self.entry_aero},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MissionConfig":
        def lim(x):
            return math.inf if x is None else float(x)

        def section(name):
            v = data.get(name, {})
            if not isinstance(v, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            return v

        base = cls()
        try:
            e = section("earth")
            earth = EarthConstants(mu=float(e.get("mu", base.earth.mu)),
                                   re=float(e.get("re", base.earth.re)),
                                   omega=float(e.get("omega", base.earth.omega)),
                                   g0=float(e.get("g0", base.earth.g0)))
            stages = base.stages
            if "stages" in data:
                stages = tuple(VehicleStage(str(s["name"]), float(s["burn_time"]),
                                            float(s["empty_mass"]),
                                            float(s["fuel_mass"]),
                                            float(s["ref_area"]), float(s["isp"]),
                                            float(s["thrust"]))
                               for s in data["stages"])
            veh = section("vehicle")
            tms = section("times")
            lm = section("limits")
            limits = PathLimits(
                q_max=float(lm.get("q_max", base.limits.q_max)),
                q_split=float(lm.get("q_split", base.limits.q_split)),
                n_max=float(lm.get("n_max", base.limits.n_max)),
                h_atm=float(lm.get("h_atm", base.limits.h_atm)),
                h_peak_lo=float(lm.get("h_peak_lo", base.limits.h_peak_lo)),
                h_peak_hi=float(lm.get("h_peak_hi", base.limits.h_peak_hi)),
                qdot_max=lim(lm.get("qdot_max")),
                q_heat_max=lim(lm.get("q_heat_max")))
            co = section("cost")
            cost = CostParams(
                alpha_bar_boost=float(co.get("alpha_bar_boost_deg", 0.0)) * DEG,
                alpha_bar_entry=float(co.get("alpha_bar_entry_deg",
                                             base.cost.alpha_bar_entry / DEG)) * DEG,
                alpha_max=float(co.get("alpha_max_deg",
                                       base.cost.alpha_max / DEG)) * DEG,
                u_alpha_max=float(co.get("u_alpha_max_deg",
                                         base.cost.u_alpha_max / DEG)) * DEG,
                u_sigma_max=float(co.get("u_sigma_max_deg",
                                         base.cost.u_sigma_max / DEG)) * DEG,
                k=float(co.get("k", base.cost.k)))
            bd = section("boundary")
            bc = BoundaryData(
                t0=float(bd.get("t0", base.bc.t0)),
                h0=float(bd.get("h0", base.bc.h0)),
                lon0=float(bd.get("lon0_deg", base.bc.lon0 / DEG)) * DEG,
                lat0=float(bd.get("lat0_deg", base.bc.lat0 / DEG)) * DEG,
                v0=float(bd.get("v0", base.bc.v0)),
                m0=float(bd.get("m0", base.bc.m0)),
                hf=float(bd.get("hf", base.bc.hf)),
                lonf=float(bd.get("lonf_deg", base.bc.lonf / DEG)) * DEG,
                latf=float(bd.get("latf_deg", base.bc.latf / DEG)) * DEG,
                vf=float(bd.get("vf", base.bc.vf)),
                pad_elevation=float(bd.get("pad_elevation",
                                           base.bc.pad_elevation)),
                tower_height=float(bd.get("tower_height", base.bc.tower_height)))
            he = section("heating")
            heating = HeatingParams(
                kappa=float(he.get("kappa", base.heating.kappa)),
                rho0=float(he.get("rho0", base.heating.rho0)),
                v_circ=float(he.get("v_circ", base.heating.v_circ)),
                exp_rho=float(he.get("exp_rho", base.heating.exp_rho)),
                exp_v=float(he.get("exp_v", base.heating.exp_v)))
            mesh = base.mesh
            if "mesh" in data:
                mesh = tuple((int(n), int(d)) for n, d in data["mesh"])
            rf = section("refinement")
            sv = section("solver")
            gu = section("guess")
            tb = section("tables")
            cfg = cls(earth=earth, stages=stages,
                      fairing_mass=float(veh.get("fairing_mass",
                                                 base.fairing_mass)),
                      payload_mass=float(veh.get("payload_mass",
                                                 base.payload_mass)),
                      entry_mass=float(veh.get("entry_mass", base.entry_mass)),
                      entry_area=float(veh.get("entry_area", base.entry_area)),
                      t_s1=float(tms.get("t_s1", base.t_s1)),
                      t_s2=float(tms.get("t_s2", base.t_s2)),
                      t_fairing=float(tms.get("t_fairing", base.t_fairing)),
                      t_s3=float(tms.get("t_s3", base.t_s3)),
                      limits=limits, cost=cost, bc=bc, heating=heating,
                      mesh=mesh,
                      mesh_tolerance=float(rf.get("tolerance",
                                                  base.mesh_tolerance)),
                      max_refinements=int(rf.get("max_refinements",
                                                 base.max_refinements)),
                      solver_tolerance=float(sv.get("tolerance",
                                                    base.solver_tolerance)),
                      solver_max_iterations=int(sv.get("max_iterations",
                                                       base.solver_max_iterations)),
                      guess_apogee=float(gu.get("apogee", base.guess_apogee)),
                      atmosphere=tb.get("atmosphere", "builtin"),
                      boost_aero=tb.get("boost_aero", "builtin"),
                      entry_aero=tb.get("entry_aero", "builtin"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed mission config: {exc}") from exc
        cfg.validate()
        return cfg

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write("\n")

    @classmethod
    def from_json(cls, path) -> "MissionConfig":
        with open(path) as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ConfigError("mission config must be a JSON object")
        return cls.from_dict(data)


def default_config() -> MissionConfig:
    cfg = MissionConfig()
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# tower clearance


@dataclass(frozen=True)
class TowerClear:
    """Ignition-to-tower-top bookkeeping from the vertical-rise closed form."""

    time: float
    speed: float
    mass: float
    altitude: float


def tower_clear_propagate(config: MissionConfig) -> TowerClear:
    """Integrate the vertical rise hdd = T/m - g0 from rest at the pad and
    report the crossing of the tower top.  Thrust must beat pad weight."""
    s1 = config.stages[0]
    g0 = config.earth.g0
    m0 = config.ignition_mass
    mdot = s1.mass_rate(g0)
    ve = s1.isp * g0
    if s1.thrust <= m0 * g0:
        raise ConfigError("thrust does not exceed the pad weight; "
                          "the vehicle cannot lift off")

    def gain(t):
        m = m0 - mdot * t
        return ve * (t - m / mdot * math.log(m0 / m)) - 0.5 * g0 * t * t

    target = config.bc.tower_height
    hi = min(s1.burn_time, 0.98 * m0 / mdot)
    if gain(hi) < target:
        raise ConfigError("vehicle does not clear the tower within the burn")
    t = brentq(lambda x: gain(x) - target, 1.0e-9, hi, xtol=1.0e-12)
    m = m0 - mdot * t
    v = ve * math.log(m0 / m) - g0 * t
    return TowerClear(time=t, speed=v, mass=m,
                      altitude=config.bc.pad_elevation + target)


# --------------------------------------------------------------------------
# phase assembly


def resolve_tables(config: MissionConfig):
    """(atmosphere, boost aero, entry aero) honoring file overrides."""
    if config.atmosphere == "builtin":
        atm = load_default_atmosphere()
    else:
        atm = AtmosphereTable.from_csv(config.atmosphere)
    if config.boost_aero == "builtin":
        boost = load_boost_aero()
    else:
        boost = AeroTable.from_csv(*config.boost_aero)
    if config.entry_aero == "builtin":
        entry = load_entry_aero()
    else:
        entry = extend_entry_aero(AeroTable.from_csv(*config.entry_aero))
    return atm, boost, entry


def phase_contexts(config: MissionConfig) -> list[PhaseContext]:
    atm, boost, entry = resolve_tables(config)
    e = config.earth
    s1, s2, s3 = config.stages
    return [
        PhaseContext(e, s1.thrust, s1.isp, s1.ref_area, boost, atm),
        PhaseContext(e, s2.thrust, s2.isp, s2.ref_area, boost, atm),
        PhaseContext(e, s3.thrust, s3.isp, s3.ref_area, boost, atm),
        PhaseContext(e, s3.thrust, s3.isp, s3.ref_area),  # above the air
        PhaseContext(e, fixed_mass=config.coast_mass),
        PhaseContext(e, fixed_mass=config.entry_mass),
        PhaseContext(e, ref_area=config.entry_area, aero=entry, atmosphere=atm,
                     fixed_mass=config.entry_mass),
        PhaseContext(e, ref_area=config.entry_area, aero=entry, atmosphere=atm,
                     fixed_mass=config.entry_mass),
    ]


def _free(n):
    return np.full(n, -np.inf), np.full(n, np.inf)


def _pins(n, pairs):
    lo, hi = _free(n)
    for idx, a, b in pairs:
        lo[idx], hi[idx] = a, b
    return lo, hi


def build_mission(config: MissionConfig) -> MultiPhaseProblem:
    config.validate()
    ctx = phase_contexts(config)
    lm, cw, bc = config.limits, config.cost, config.bc
    hp = config.heating
    t1, t2, t3, t4 = config.t_s1, config.t_s2, config.t_fairing, config.t_s3

    w_boost = CostWeights(cw.alpha_bar_boost, cw.alpha_max,
                          cw.u_alpha_max, cw.u_sigma_max)
    w_coast = replace(w_boost, include_alpha=False)
    w_glide = replace(w_boost, alpha_bar=cw.alpha_bar_entry)
    w_dive = replace(w_glide, k=cw.k)

    u_geo = np.array([cw.u_alpha_max, cw.u_sigma_max])
    u_vert_lo = np.array([-cw.u_alpha_max, -cw.u_sigma_max,
                          -SLACK_BOUND, -SLACK_BOUND])
    u_vert_hi = -u_vert_lo

    def q_of(c):
        def f(X, U):
            return dynamic_pressure(c.atmosphere.density(X[:, 0]), X[:, 3])
        return f

    def n_of(c, acol):
        def f(X, U):
            return path_quantities(c, X[:, 0], X[:, 3], X[:, acol],
                                   c.fixed_mass, hp)[1]
        return f

    def qdot_of(c):
        def f(X, U):
            return heating_rate(c.atmosphere.density(X[:, 0]), X[:, 3], hp)
        return f

    def geo_cost(w):
        return lambda X, U: running_cost_geo(X, U, w)

    def vert_cost(w):
        return lambda X, U: running_cost_vert(X, U, w)

    phases = []

    # phase 1: first stage, Euler parameters, mass flowing
    x_lo, x_hi = (np.array([0.05, -3.6, 0.05, 0.005, -1.001, -1.001, -1.001,
                            -1.001, -cw.alpha_max, 0.4 * bc.m0]),
                  np.array([90.0, -1.8, 0.75, 3.5, 1.001, 1.001, 1.001,
                            1.001, cw.alpha_max, 1.1 * bc.m0]))
    x0_lo, x0_hi = _pins(10, [(0, bc.h0, bc.h0), (1, bc.lon0, bc.lon0),
                              (2, bc.lat0, bc.lat0), (3, bc.v0, bc.v0),
                              (4, 0.0, 0.0), (5, 0.0, 0.0), (6, 0.0, 0.0),
                              (7, 1.0, 1.0), (8, 0.0, 0.0),
                              (9, bc.m0, bc.m0)])
    phases.append(PhaseDef(
        "boost1", 10, 4, lambda X, U, c=ctx[0]: vert_rates(X, U, c),
        x_lo, x_hi, u_vert_lo, u_vert_hi, bc.t0, bc.t0, t1, t1,
        x0_lo=x0_lo, x0_hi=x0_hi,
        path=[PathConstraint("q_max", q_of(ctx[0]), -np.inf, lm.q_max)],
        cost=vert_cost(w_boost),
        state_names=VERT_STATE_NAMES + ("m",), control_names=VERT_CONTROL_NAMES))

    # phases 2-3: upper stages in the atmosphere, geodetic angles
    geo_lo = np.array([5.0, -3.6, 0.05, 0.3, -1.5690, -3.3, -cw.alpha_max,
                       -math.pi])
    geo_hi = np.array([160.0, -1.8, 0.75, 6.5, 1.5690, 0.5, cw.alpha_max,
                       math.pi])
    for name, p, span, mpin, m_lo, m_hi in (
            ("boost2", 1, (t1, t2), config.m_s2, 13000.0, 39000.0),
            ("boost3", 2, (t2, t3), config.m_s3, 4400.0, 11200.0)):
        x_lo = np.append(geo_lo, m_lo)
        x_hi = np.append(geo_hi, m_hi)
        if name == "boost3":
            x_lo[0], x_hi[0], x_hi[3] = 20.0, 220.0, 8.5
        x0_lo, x0_hi = _pins(9, [(8, mpin, mpin)])
        phases.append(PhaseDef(
            name, 9, 2, lambda X, U, c=ctx[p]: geo_rates(X, U, c),
            x_lo, x_hi, -u_geo, u_geo, span[0], span[0], span[1], span[1],
            x0_lo=x0_lo, x0_hi=x0_hi, cost=geo_cost(w_boost),
            state_names=GEO_STATE_NAMES + ("m",),
            control_names=GEO_CONTROL_NAMES))

    # phase 4: third stage above the sensible atmosphere
    x_lo = np.array([lm.h_atm, -3.6, 0.05, 5.0, -1.5690, -3.3, -cw.alpha_max,
                     -math.pi, 3400.0])
    x_hi = np.array([230.0, -1.8, 0.75, 9.0, 1.5690, 0.5, cw.alpha_max,
                     math.pi, 4800.0])
    phases.append(PhaseDef(
        "exo_burn", 9, 2, lambda X, U, c=ctx[3]: geo_rates(X, U, c),
        x_lo, x_hi, -u_geo, u_geo, t3, t3, t4, t4, cost=geo_cost(w_boost),
        state_names=GEO_STATE_NAMES + ("m",), control_names=GEO_CONTROL_NAMES))

    # phase 5: coast up to the peak, payload still attached
    coast_lo = np.array([lm.h_atm, -3.6, 0.05, 4.0, -1.5690, -3.3,
                         -0.5 * math.pi, -math.pi])
    coast_hi = np.array([lm.h_peak_hi + 30.0, -1.8, 0.75, 9.0, 1.5690, 0.5,
                         0.5 * math.pi, math.pi])
    xf_lo, xf_hi = _pins(8, [(0, lm.h_peak_lo, lm.h_peak_hi),
                             (4, 0.0, 0.0), (6, 0.0, 0.0), (7, 0.0, 0.0)])
    phases.append(PhaseDef(
        "coast_up", 8, 2, lambda X, U, c=ctx[4]: geo_rates(X, U, c),
        coast_lo, coast_hi, -u_geo, u_geo, t4, t4, t4 + 10.0, 2600.0,
        xf_lo=xf_lo, xf_hi=xf_hi, cost=geo_cost(w_coast), min_duration=5.0,
        state_names=GEO_STATE_NAMES, control_names=GEO_CONTROL_NAMES))

    # phase 6: entry vehicle coasts down to the atmosphere edge
    x0_lo, x0_hi = _pins(8, [(0, lm.h_peak_lo, lm.h_peak_hi),
                             (4, 0.0, 0.0), (6, 0.0, 0.0), (7, 0.0, 0.0)])
    xf_lo, xf_hi = _pins(8, [(0, lm.h_atm, lm.h_atm)])
    phases.append(PhaseDef(
        "coast_down", 8, 2, lambda X, U, c=ctx[5]: geo_rates(X, U, c),
        coast_lo, coast_hi, -u_geo, u_geo, t4 + 10.0, 2600.0, t4 + 20.0, 4200.0,
        x0_lo=x0_lo, x0_hi=x0_hi, xf_lo=xf_lo, xf_hi=xf_hi,
        cost=geo_cost(w_coast), min_duration=5.0,
        state_names=GEO_STATE_NAMES, control_names=GEO_CONTROL_NAMES))

    # phase 7: thin-air glide down to the bank-effectiveness boundary
    x_lo = np.array([40.0, -3.6, 0.05, 4.5, -1.5690, -3.3, 0.0, -math.pi])
    x_hi = np.array([lm.h_atm + 1.0, -1.8, 0.75, 8.5, 0.35, 0.5,
                     cw.alpha_max, math.pi])
    x0_lo, x0_hi = _pins(8, [(0, lm.h_atm, lm.h_atm)])
    path7 = [PathConstraint("n_max", n_of(ctx[6], Geo.ALPHA), -np.inf, lm.n_max),
             PathConstraint("q_split", q_of(ctx[6]), -np.inf, lm.q_split)]
    if math.isfinite(lm.qdot_max):
        path7.append(PathConstraint("qdot_max", qdot_of(ctx[6]),
                                    -np.inf, lm.qdot_max))
    phases.append(PhaseDef(
        "entry_glide", 8, 2, lambda X, U, c=ctx[6]: geo_rates(X, U, c),
        x_lo, x_hi, -u_geo, u_geo, t4 + 20.0, 4200.0, t4 + 30.0, 6500.0,
        x0_lo=x0_lo, x0_hi=x0_hi,
        path=path7, integrands=[IntegralTerm("heat_load", qdot_of(ctx[6]))],
        cost=geo_cost(w_glide), min_duration=5.0,
        state_names=GEO_STATE_NAMES, control_names=GEO_CONTROL_NAMES))

    # phase 8: dense-air descent, Euler parameters, terminal target
    x_lo = np.array([-0.01, -3.6, 0.05, 0.3, -1.001, -1.001, -1.001, -1.001,
                     0.0])
    x_hi = np.array([70.0, -1.8, 0.75, 8.5, 1.001, 1.001, 1.001, 1.001,
                     cw.alpha_max])
    xf_lo, xf_hi = _pins(9, [(0, bc.hf, bc.hf), (1, bc.lonf, bc.lonf),
                             (2, bc.latf, bc.latf), (3, bc.vf, bc.vf),
                             (4, 0.0, 0.0), (7, 0.0, 0.0), (8, 0.0, 0.0)])
    path8 = [PathConstraint("n_max", n_of(ctx[7], Vert.ALPHA), -np.inf,
                            lm.n_max),
             PathConstraint("q_floor", q_of(ctx[7]), lm.q_split, np.inf)]
    if math.isfinite(lm.qdot_max):
        path8.append(PathConstraint("qdot_max", qdot_of(ctx[7]),
                                    -np.inf, lm.qdot_max))
    phases.append(PhaseDef(
        "entry_dive", 9, 4, lambda X, U, c=ctx[7]: vert_rates(X, U, c),
        x_lo, x_hi, u_vert_lo, u_vert_hi, t4 + 30.0, 6500.0, t4 + 60.0, 9000.0,
        xf_lo=xf_lo, xf_hi=xf_hi,
        path=path8, integrands=[IntegralTerm("heat_load", qdot_of(ctx[7]))],
        cost=vert_cost(w_dive), min_duration=30.0,
        state_names=VERT_STATE_NAMES, control_names=VERT_CONTROL_NAMES))

    # linkages; channels pinned on both sides of a boundary are dropped so
    # the constraint block keeps full row rank
    fm = config.fairing_mass

    def stage1_handoff(xa, ta, xb, tb):
        return geo_from_vert(xa)[:GEO_DIM] - xb[:GEO_DIM]

    def geo_handoff(xa, ta, xb, tb):
        return xa[:GEO_DIM] - xb[:GEO_DIM]

    def fairing_jettison(xa, ta, xb, tb):
        out = np.empty(9)
        out[:8] = xa[:GEO_DIM] - xb[:GEO_DIM]
        out[8] = xb[8] - (xa[8] - fm)
        return out

    sep_keep = np.array([Geo.H, Geo.PHI, Geo.THETA, Geo.V, Geo.PSI])

    def payload_separation(xa, ta, xb, tb):
        out = np.empty(6)
        out[:5] = xa[sep_keep] - xb[sep_keep]
        out[5] = tb - ta
        return out

    pierce_keep = np.array([Geo.PHI, Geo.THETA, Geo.V, Geo.GAMMA, Geo.PSI,
                            Geo.ALPHA, Geo.SIGMA])

    def atmosphere_pierce(xa, ta, xb, tb):
        out = np.empty(8)
        out[:7] = xa[pierce_keep] - xb[pierce_keep]
        out[7] = tb - ta
        return out

    def vertical_handoff(xa, ta, xb, tb):
        out = np.empty(9)
        out[:8] = xa[:GEO_DIM] - geo_from_vert(xb)[:GEO_DIM]
        out[8] = tb - ta
        return out

    def link(name, a, b, f, n):
        return Linkage(name, a, b, f, np.zeros(n), np.zeros(n))

    linkages = [link("stage1_sep", 0, 1, stage1_handoff, 8),
                link("stage2_sep", 1, 2, geo_handoff, 8),
                link("fairing_drop", 2, 3, fairing_jettison, 9),
                link("burnout", 3, 4, geo_handoff, 8),
                link("payload_sep", 4, 5, payload_separation, 6),
                link("pierce", 5, 6, atmosphere_pierce, 8),
                link("bank_to_vertical", 6, 7, vertical_handoff, 9)]

    def unit_quat(x0, xf, t0, tf):
        return (x0[Vert.E1] ** 2 + x0[Vert.E2] ** 2 + x0[Vert.E3] ** 2
                + x0[Vert.ETA] ** 2 - 1.0)

    boundaries = [BoundaryConstraint("dive_unit_quat", 7, unit_quat, 0.0, 0.0)]
    accumulators = [Accumulator("heat_load", 0.0, lm.q_heat_max)]
    return MultiPhaseProblem(phases, linkages, boundaries, accumulators)


def default_meshes(config: MissionConfig) -> list[MeshPhase]:
    return [uniform_mesh(n, d) for n, d in config.mesh]


# --------------------------------------------------------------------------
# initial guess


def _reset(y, mass):
    y = y.copy()
    y[Geo.M] = mass
    return y


def _propagate_ascent(config: MissionConfig, ctx, kick: float,
                      psi0: float) -> dict:
    """Zero-incidence ascent from the tower with a small pitch kick.

    Returns the per-segment dense interpolants plus the apogee and pierce
    events of the ballistic arc; segments are keyed by phase index.
    """
    bc = config.bc
    y0 = np.array([bc.h0, bc.lon0, bc.lat0, bc.v0, 0.5 * math.pi - kick,
                   psi0, 0.0, 0.0, bc.m0])
    u0 = np.zeros(2)
    segs: dict[int, object] = {}

    def rhs(c):
        return lambda t, y: np.asarray(geo_rates(y, u0, c), float)

    spans = [(bc.t0, config.t_s1), (config.t_s1, config.t_s2),
             (config.t_s2, config.t_fairing), (config.t_fairing, config.t_s3)]
    y = y0
    for p, (a, b) in enumerate(spans):
        if p == 1:
            y = _reset(y, config.m_s2)
        elif p == 2:
            y = _reset(y, config.m_s3)
        elif p == 3:
            y = _reset(y, y[Geo.M] - config.fairing_mass)
        out = solve_ivp(rhs(ctx[p]), (a, b), y, method="RK45", rtol=1.0e-8,
                        atol=1.0e-8, dense_output=True)
        if not out.success:
            raise RuntimeError(f"ascent guess integration failed: {out.message}")
        segs[p] = out
        y = out.y[:, -1]

    coast = y[:GEO_DIM].copy()

    def apogee_ev(t, y):
        return y[Geo.GAMMA]
    apogee_ev.terminal = True
    apogee_ev.direction = -1.0

    def ground_ev(t, y):
        return y[Geo.H]
    ground_ev.terminal = True
    ground_ev.direction = -1.0

    out5 = solve_ivp(rhs(ctx[4]), (config.t_s3, config.t_s3 + 4000.0), coast,
                     method="RK45", rtol=1.0e-8, atol=1.0e-8,
                     dense_output=True, events=[apogee_ev, ground_ev])
    if not out5.success:
        raise RuntimeError(f"coast guess integration failed: {out5.message}")
    if out5.t_events[0].size == 0:
        # over-kicked: the path noses over during the burn already
        return {"segs": segs, "apogee": float(np.max(out5.y[Geo.H])),
                "complete": False}
    t_apo = float(out5.t_events[0][0])
    y_apo = out5.y_events[0][0]
    if y_apo[Geo.H] <= config.limits.h_atm + 1.0:
        # arc tops out inside the atmosphere; report it for the calibrator
        return {"segs": segs, "apogee": float(y_apo[Geo.H]),
                "complete": False}
    segs[4] = out5

    def pierce_ev(t, y):
        return y[Geo.H] - config.limits.h_atm
    pierce_ev.terminal = True
    pierce_ev.direction = -1.0

    out6 = solve_ivp(rhs(ctx[5]), (t_apo, t_apo + 5000.0), y_apo,
                     method="RK45", rtol=1.0e-8, atol=1.0e-8,
                     dense_output=True, events=pierce_ev)
    if not out6.success or out6.t_events[0].size == 0:
        raise RuntimeError("ballistic arc never returns to the atmosphere edge")
    segs[5] = out6
    return {"segs": segs, "apogee": float(y_apo[Geo.H]), "complete": True,
            "t_apo": t_apo, "y_apo": y_apo,
            "t_pierce": float(out6.t_events[0][0]),
            "y_pierce": out6.y_events[0][0]}


def _bearing(lon0, lat0, lon1, lat1) -> float:
    """Great-circle initial bearing, flight-path heading convention
    (0 = north, positive east)."""
    dlon = lon1 - lon0
    y = math.sin(dlon) * math.cos(lat1)
    x = (math.cos(lat0) * math.sin(lat1)
         - math.sin(lat0) * math.cos(lat1) * math.cos(dlon))
    return math.atan2(y, x)


def _wrap_pi(x: float) -> float:
    return (x + math.pi) % (2.0 * math.pi) - math.pi


def _launch_azimuth(bc: BoundaryData) -> float:
    return _bearing(bc.lon0, bc.lat0, bc.lonf, bc.latf)


def calibrate_kick(config: MissionConfig, ctx=None, psi0=None) -> float:
    """Pitch-over kick angle whose gravity turn peaks near guess_apogee."""
    ctx = ctx or phase_contexts(config)
    psi0 = _launch_azimuth(config.bc) if psi0 is None else psi0
    target = config.guess_apogee

    def apogee(kick):
        return _propagate_ascent(config, ctx, kick, psi0)["apogee"] - target

    lo, hi = 0.2 * DEG, 12.0 * DEG
    flo = apogee(lo)
    if flo < 0.0:
        raise RuntimeError("even a minimal pitch kick under-lofts the arc")
    fhi = apogee(hi)
    while fhi > 0.0 and hi < 40.0 * DEG:
        hi *= 1.5
        fhi = apogee(hi)
    if fhi > 0.0:
        raise RuntimeError("pitch kick calibration failed to bracket the apogee")
    return brentq(apogee, lo, hi, xtol=1.0e-5)


def _entry_profile(config: MissionConfig, ctx: PhaseContext, y_pierce,
                   t_pierce):
    """Entry arc propagated with the glide-phase dynamics under a feedback
    steering law: incidence from inverting the lift needed to track a
    reference slope tied to the nominal glide pressure, bank held off until
    the pull-out completes and then weaving the heading to spend the range
    surplus, everything released once the speed is spent.  The arc is split
    at the first upward crossing of the bank-effectiveness pressure level,
    so the capture dip and the dense glide both land in the final phase."""
    bc, lm, cw = config.bc, config.limits, config.cost
    e = ctx.earth
    m = ctx.fixed_mass
    dt = 1.0
    y = np.array(y_pierce[:GEO_DIM], dtype=float)
    y[Geo.ALPHA] = min(max(y[Geo.ALPHA], 0.0), cw.alpha_max)
    mode = {"sign": 1.0, "captured": False}
    ab = cw.alpha_bar_entry
    q_nom = 30.0

    def law(y):
        v, gamma = float(y[Geo.V]), float(y[Geo.GAMMA])
        if v <= 1.35:
            # spent: drop the lift and fall out ballistically
            return 0.0, 0.0
        h = float(y[Geo.H])
        q = float(dynamic_pressure(ctx.atmosphere.density(h), v))
        mach = v / float(ctx.atmosphere.sound_speed(h))
        r = e.re + h
        grav = e.mu / (r * r)
        if gamma > -1.2 * DEG:
            mode["captured"] = True
        togo = r * math.acos(np.clip(
            math.sin(y[Geo.THETA]) * math.sin(bc.latf)
            + math.cos(y[Geo.THETA]) * math.cos(bc.latf)
            * math.cos(bc.lonf - y[Geo.PHI]), -1.0, 1.0))
        # vertical: invert the lift that steers the slope toward a reference
        # tied to the nominal glide pressure; the climb side of the reference
        # is kept soft so the pull-out cannot float back out of dense air
        gamma_ref = float(np.clip(0.026 * math.log(max(q, 1e-3) / q_nom),
                                  -0.045, 0.008))
        need = m * ((grav - v * v / r) * math.cos(gamma)
                    + v * (gamma_ref - gamma) / 40.0)
        cl_slope = max(float(ctx.aero.cl(ab / DEG, mach)), 0.05) / ab
        cos_bank = max(math.cos(float(y[Geo.SIGMA])), 0.3)
        cl_req = need / (max(q, 0.2) * ctx.ref_area * cos_bank)
        alpha_cmd = float(np.clip(cl_req / cl_slope, 0.0, cw.alpha_max))
        # lateral: the trim glide at q_nom overshoots the field, so weave:
        # crab away from the bearing by the angle whose cosine spends the
        # range surplus, and reverse when the bearing error swings past
        cd_trim = float(ctx.aero.cd(ab / DEG, mach))
        est = m * (v * v - 1.8) / (2.0 * ctx.ref_area * cd_trim * q_nom)
        delta = math.acos(float(np.clip(togo / max(est, 1.0), 0.2, 1.0)))
        err = _wrap_pi(_bearing(float(y[Geo.PHI]), float(y[Geo.THETA]),
                                bc.lonf, bc.latf) - float(y[Geo.PSI]))
        if abs(err) > delta + 20.0 * DEG:
            mode["sign"] = math.copysign(1.0, err)
        head_err = _wrap_pi(err + mode["sign"] * delta)
        if q > 1.5 and mode["captured"]:
            mag = float(np.clip(2.5 * head_err, -75.0 * DEG, 75.0 * DEG))
        else:
            mag = 0.0
        return alpha_cmd, mag

    rows, us, ts = [y.copy()], [], [0.0]
    while ts[-1] < 4500.0:
        alpha_cmd, sigma_cmd = law(y)
        u = np.array([
            np.clip((alpha_cmd - y[Geo.ALPHA]) / 1.5,
                    -cw.u_alpha_max, cw.u_alpha_max),
            np.clip(_wrap_pi(sigma_cmd - y[Geo.SIGMA]) / 2.0,
                    -cw.u_sigma_max, cw.u_sigma_max)])

        def f(yy):
            return np.asarray(geo_rates(yy, u, ctx), dtype=float)

        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        us.append(u)
        ts.append(ts[-1] + dt)
        rows.append(y.copy())
        if y[Geo.H] <= 0.02 or y[Geo.V] <= 0.65:
            break

    t_rel = np.array(ts)
    Y = np.vstack(rows)
    U = np.vstack(us + [us[-1]])
    q = dynamic_pressure(ctx.atmosphere.density(Y[:, Geo.H]), Y[:, Geo.V])
    up = np.nonzero((q[:-1] < lm.q_split) & (q[1:] >= lm.q_split))[0]
    if up.size == 0:
        raise RuntimeError("descent profile never reaches the bank threshold")
    i = int(up[0])
    frac = (lm.q_split - q[i]) / (q[i + 1] - q[i])
    t_split = max(float(t_rel[i] + frac * dt), 10.0)
    t_total = max(float(t_rel[-1]), t_split + 40.0)

    def states_at(t):
        tq = np.atleast_1d(np.asarray(t, dtype=float)) - t_pierce
        return np.column_stack([np.interp(tq, t_rel, Y[:, j])
                                for j in range(GEO_DIM)])

    def controls_at(t):
        tq = np.atleast_1d(np.asarray(t, dtype=float)) - t_pierce
        return np.column_stack([np.interp(tq, t_rel, U[:, j])
                                for j in range(2)])

    return states_at, controls_at, t_pierce + t_split, t_pierce + t_total


def initial_guess(config: MissionConfig, nlp) -> np.ndarray:
    """Packed first iterate: powered gravity turn, ballistic coast, and a
    feedback-steered glide, clipped into the variable boxes."""
    ctx = phase_contexts(config)
    kick = calibrate_kick(config, ctx)
    arc = _propagate_ascent(config, ctx, kick, _launch_azimuth(config.bc))
    if not arc["complete"]:
        raise RuntimeError("calibrated ascent guess lost its ballistic arc")
    segs = arc["segs"]
    atm = ctx[0].atmosphere

    glide_at, glide_u_at, t_split, t_end = _entry_profile(
        config, ctx[6], arc["y_pierce"], arc["t_pierce"])

    times = [(config.bc.t0, config.t_s1), (config.t_s1, config.t_s2),
             (config.t_s2, config.t_fairing), (config.t_fairing, config.t_s3),
             (config.t_s3, arc["t_apo"]), (arc["t_apo"], arc["t_pierce"]),
             (arc["t_pierce"], t_split), (t_split, t_end)]

    states, controls = [], []
    for p, (t0, tf) in enumerate(times):
        coll_tau, state_tau = nlp.node_taus(p)
        ts = t0 + state_tau * (tf - t0)
        if p <= 5:
            ys = segs[p].sol(ts).T
            if p >= 4:
                ys = ys[:, :GEO_DIM]
        else:
            ys = glide_at(ts)
        if p == 0:
            ys = vert_from_geo(ys)
        elif p == 7:
            geo = ys
            e1, e2, e3, eta = angles_to_quat(geo[:, Geo.GAMMA],
                                             geo[:, Geo.PSI],
                                             geo[:, Geo.SIGMA])
            ys = np.column_stack([geo[:, :4], e1, e2, e3, eta,
                                  geo[:, Geo.ALPHA]])
        states.append(ys)
        nu = nlp.problem.phases[p].nu
        if p == 6:
            controls.append(glide_u_at(t0 + coll_tau * (tf - t0)))
        else:
            controls.append(np.zeros((len(coll_tau), nu)))

    z = nlp.pack(states, controls, times)
    # balance each accumulator against its own quadrature; the balance row
    # is affine in the accumulator variable, so two probes pin it down
    for name, idx in nlp.acc_idx.items():
        row = nlp.con_names.index(f"acc:{name}:balance")
        z[idx] = 0.0
        g0 = nlp.constraints(z)[row]
        z[idx] = 1.0
        slope = nlp.constraints(z)[row] - g0
        z[idx] = -g0 / slope
    return nlp.clip_to_bounds(z)


# --------------------------------------------------------------------------
# solving and studies


@dataclass
class MissionRun:
    config: MissionConfig
    report: RefinementReport
    status: str

    @property
    def solution(self) -> Solution | None:
        return self.report.solution

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def solve_mission(config: MissionConfig, *, warm: Solution | None = None,
                  solver_options: SolverOptions | None = None,
                  refinement: RefinementOptions | None = None,
                  history_path=None) -> MissionRun:
    config.validate()
    problem = build_mission(config)
    meshes = default_meshes(config)
    solver_options = solver_options or SolverOptions(
        tolerance=config.solver_tolerance,
        max_iterations=config.solver_max_iterations)
    refinement = refinement or RefinementOptions(
        mesh_tolerance=config.mesh_tolerance,
        max_refinements=config.max_refinements)
    if warm is not None:
        guess = lambda nlp: nlp.clip_to_bounds(nlp.z_from_solution(warm))
    else:
        guess = lambda nlp: initial_guess(config, nlp)
    report = refine_loop(problem, meshes, guess, refinement, solver_options,
                         history_path=history_path)
    last = report.solve_reports[-1] if report.solve_reports else None
    status = last.status if last is not None else "numerical_failure"
    return MissionRun(config=config, report=report, status=status)


@dataclass
class StudyResult:
    qdot_max: float
    q_heat_max: float
    objective: float
    peak_altitude: float
    pierce_speed: float
    pierce_fpa_deg: float
    entry_duration: float
    heat_load: float
    max_qdot: float
    status: str

    @property
    def converged(self) -> bool:
        return self.status == "converged"


STUDY_COLUMNS = ("qdot_max_MW_m2", "q_heat_max_MJ_m2", "objective",
                 "peak_altitude_km", "pierce_speed_km_s", "pierce_fpa_deg",
                 "entry_duration_s", "heat_load_MJ_m2", "max_qdot_MW_m2",
                 "status")


def summarize_run(run: MissionRun) -> StudyResult:
    lm = run.config.limits
    sol = run.solution
    if sol is None:
        nan = float("nan")
        return StudyResult(lm.qdot_max, lm.q_heat_max, nan, nan, nan, nan,
                           nan, nan, nan, run.status)
    atm = resolve_tables(run.config)[0]
    peak = float(sol.phases[5].states[0, Geo.H])
    pierce = sol.phases[6].states[0]
    duration = float(sol.phases[7].tf - sol.phases[6].t0)
    max_qd = 0.0
    for p in (6, 7):
        ph = sol.phases[p]
        tt = np.unique(np.concatenate([np.linspace(ph.t0, ph.tf, 400),
                                       ph.state_times()]))
        ys = ph.sample_states(tt)
        qd = heating_rate(atm.density(ys[:, 0]), ys[:, 3], run.config.heating)
        max_qd = max(max_qd, float(np.max(qd)))
    return StudyResult(lm.qdot_max, lm.q_heat_max, float(sol.objective),
                       peak, float(pierce[Geo.V]),
                       float(pierce[Geo.GAMMA]) / DEG, duration,
                       float(sol.accumulators.get("heat_load", math.nan)),
                       max_qd, run.status)


def study_to_csv(results, path) -> None:
    with open(path, "w") as f:
        f.write(",".join(STUDY_COLUMNS) + "\n")
        for r in results:
            row = (r.qdot_max, r.q_heat_max, r.objective, r.peak_altitude,
                   r.pierce_speed, r.pierce_fpa_deg, r.entry_duration,
                   r.heat_load, r.max_qdot)
            f.write(",".join(f"{v:.10g}" for v in row) + f",{r.status}\n")


def run_study(config: MissionConfig, sweep: dict, *,
              solver_options: SolverOptions | None = None,
              refinement: RefinementOptions | None = None,
              progress=None) -> list[StudyResult]:
    """Constraint sweep; each branch walks its list tightening the limit and
    stops at the first failed solve, warm-starting along the way.

    sweep holds "qdot_max" and/or "q_heat_max" value lists.  With both, every
    qdot value opens a branch over the heat-load list (row-major order)."""
    qd_list = list(sweep.get("qdot_max", [])) or [config.limits.qdot_max]
    ql_list = list(sweep.get("q_heat_max", [])) or [config.limits.q_heat_max]
    if not sweep.get("qdot_max") and not sweep.get("q_heat_max"):
        raise ConfigError("sweep needs a qdot_max or q_heat_max list")

    results: list[StudyResult] = []
    for qd in qd_list:
        warm = None
        for ql in ql_list:
            cfg = replace(config,
                          limits=replace(config.limits, qdot_max=float(qd),
                                         q_heat_max=float(ql)))
            run = solve_mission(cfg, warm=warm,
                                solver_options=solver_options,
                                refinement=refinement)
            res = summarize_run(run)
            results.append(res)
            if progress is not None:
                progress(res)
            if not run.converged:
                break
            warm = run.solution
    return results


# --------------------------------------------------------------------------
# trajectory export


TRAJECTORY_COLUMNS = ("t", "h", "phi", "theta", "v", "gamma", "psi", "alpha",
                      "sigma", "m", "q", "n", "qdot", "Q")


def trajectory_table(config: MissionConfig, sol: Solution,
                     hz: float = 1.0) -> np.ndarray:
    """Sampled history, one row per stamp: the per-phase collocation nodes
    merged with a uniform grid, angles in radians, heat load accumulated
    over the entry phases."""
    ctx = phase_contexts(config)
    hp = config.heating
    rows = []
    heat = 0.0
    for p, ph in enumerate(sol.phases):
        tt = np.unique(np.concatenate(
            [ph.state_times(),
             np.arange(math.ceil(ph.t0 * hz), math.floor(ph.tf * hz) + 1) / hz
             if hz > 0 else np.empty(0)]))
        ys = ph.sample_states(tt)
        if p in (0, 7):
            geo = geo_from_vert(ys)
        else:
            geo = ys
        if geo.shape[1] > GEO_DIM:
            mass = geo[:, GEO_DIM]
            geo = geo[:, :GEO_DIM]
        else:
            mass = np.full(len(tt), ctx[p].fixed_mass or 0.0)
        c = ctx[p]
        if c.atmosphere is not None:
            q, n, qd = path_quantities(c, geo[:, Geo.H], geo[:, Geo.V],
                                       geo[:, Geo.ALPHA], mass, hp)
        else:
            q = n = qd = np.zeros(len(tt))
        if p in (6, 7) and len(tt) > 1:
            qq = np.concatenate([[0.0],
                                 np.cumsum(0.5 * (qd[1:] + qd[:-1])
                                           * np.diff(tt))]) + heat
            heat = float(qq[-1])
        else:
            qq = np.full(len(tt), heat)
        rows.append(np.column_stack([tt, geo, mass, q, n, qd, qq]))
    return np.vstack(rows)


def write_trajectory_csv(path, table: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for row in table:
            f.write(",".join(f"{v:.10g}" for v in row) + "\n")
