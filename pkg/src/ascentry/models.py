"""Environment and vehicle data models.

Units here and everywhere downstream: altitude km, speed km/s, density
kg/m^3, sound speed km/s, angles of attack in the aero tables in degrees.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.interpolate import PchipInterpolator, RegularGridInterpolator


@dataclass(frozen=True)
class EarthConstants:
    """Gravitational parameter km^3/s^2, radius km, spin rad/s, g0 km/s^2."""

    mu: float = 3.986004405e5
    re: float = 6378.166
    omega: float = 7.292115856e-5
    g0: float = 9.8066498e-3


class AtmosphereTable:
    """Tabulated density and speed of sound versus altitude.

    Density is interpolated as a shape-preserving cubic in log(rho), so the
    lookup is positive everywhere, reproduces the table at its knots, and is
    monotone wherever the table is.  Above the last knot (and below the
    first) log-density continues linearly with the boundary slope; sound
    speed is held at its boundary values.
    """

    def __init__(self, h_km: np.ndarray, rho: np.ndarray, a_kms: np.ndarray):
        h = np.asarray(h_km, dtype=float)
        rho = np.asarray(rho, dtype=float)
        a = np.asarray(a_kms, dtype=float)
        if h.ndim != 1 or len(h) < 2:
            raise ValueError("need at least two altitude knots")
        if np.any(np.diff(h) <= 0):
            raise ValueError("altitude knots must be strictly increasing")
        if np.any(rho <= 0) or np.any(a <= 0):
            raise ValueError("densities and sound speeds must be positive")
        self.h_km = h
        self.rho_table = rho
        self.a_table = a
        self._logrho = PchipInterpolator(h, np.log(rho), extrapolate=False)
        self._dlog = self._logrho.derivative()
        self._a = PchipInterpolator(h, a, extrapolate=False)

    @classmethod
    def from_csv(cls, path) -> "AtmosphereTable":
        data = np.genfromtxt(path, delimiter=",", names=True)
        return cls(data["h_km"], data["rho_kgm3"], data["a_kms"])

    def density(self, h_km) -> np.ndarray:
        h = np.asarray(h_km, dtype=float)
        if not np.all(np.isfinite(h)):
            raise ValueError("altitude must be finite")
        scalar = h.ndim == 0
        h = np.atleast_1d(h)
        lo, hi = self.h_km[0], self.h_km[-1]
        out = self._logrho(np.clip(h, lo, hi))
        below = h < lo
        above = h > hi
        if np.any(below):
            out[below] += self._dlog(lo) * (h[below] - lo)
        if np.any(above):
            out[above] += self._dlog(hi) * (h[above] - hi)
        out = np.exp(out)
        return out[0] if scalar else out

    def sound_speed(self, h_km) -> np.ndarray:
        h = np.asarray(h_km, dtype=float)
        if not np.all(np.isfinite(h)):
            raise ValueError("altitude must be finite")
        scalar = h.ndim == 0
        h = np.atleast_1d(h)
        out = self._a(np.clip(h, self.h_km[0], self.h_km[-1]))
        return out[0] if scalar else out


class AeroTable:
    """CL/CD tables on an (alpha_deg, mach) grid, shape-preserving tensor
    interpolation, queries clamped to the grid hull."""

    def __init__(self, alpha_deg, mach, cl, cd):
        self.alpha_deg = np.asarray(alpha_deg, dtype=float)
        self.mach = np.asarray(mach, dtype=float)
        self.cl_table = np.asarray(cl, dtype=float)
        self.cd_table = np.asarray(cd, dtype=float)
        if self.cl_table.shape != (len(self.alpha_deg), len(self.mach)):
            raise ValueError("CL table shape does not match grids")
        if self.cd_table.shape != self.cl_table.shape:
            raise ValueError("CD table shape does not match CL table")
        if np.any(np.diff(self.alpha_deg) <= 0) or np.any(np.diff(self.mach) <= 0):
            raise ValueError("grids must be strictly increasing")
        method = "pchip" if min(len(self.alpha_deg), len(self.mach)) >= 4 else "linear"
        grid = (self.alpha_deg, self.mach)
        self._cl = RegularGridInterpolator(grid, self.cl_table, method=method)
        self._cd = RegularGridInterpolator(grid, self.cd_table, method=method)

    @classmethod
    def from_csv(cls, cl_path, cd_path) -> "AeroTable":
        def read(path):
            with open(path) as f:
                header = f.readline().strip().split(",")
            mach = np.array([float(m) for m in header[1:]])
            body = np.genfromtxt(path, delimiter=",", skip_header=1)
            body = np.atleast_2d(body)
            return body[:, 0], mach, body[:, 1:]

        acl, mcl, cl = read(cl_path)
        acd, mcd, cd = read(cd_path)
        if not (np.array_equal(acl, acd) and np.array_equal(mcl, mcd)):
            raise ValueError("CL and CD files must share the same grid")
        return cls(acl, mcl, cl, cd)

    def _query(self, interp, alpha_deg, mach):
        a = np.asarray(alpha_deg, dtype=float)
        m = np.asarray(mach, dtype=float)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(m))):
            raise ValueError("aero queries must be finite")
        scalar = a.ndim == 0 and m.ndim == 0
        a, m = np.broadcast_arrays(np.atleast_1d(a), np.atleast_1d(m))
        pts = np.column_stack([
            np.clip(a, self.alpha_deg[0], self.alpha_deg[-1]),
            np.clip(m, self.mach[0], self.mach[-1]),
        ])
        out = interp(pts)
        return out[0] if scalar else out

    def cl(self, alpha_deg, mach):
        return self._query(self._cl, alpha_deg, mach)

    def cd(self, alpha_deg, mach):
        return self._query(self._cd, alpha_deg, mach)


@dataclass(frozen=True)
class DragPolarFit:
    """Least-squares CD = cd0 + k CL^2 over one Mach column."""

    cd0: float
    k: float

    def cd(self, cl):
        return self.cd0 + self.k * np.asarray(cl, dtype=float) ** 2


def fit_drag_polar(cl, cd) -> DragPolarFit:
    """Linear least squares in the basis {1, CL^2}."""
    cl = np.asarray(cl, dtype=float)
    cd = np.asarray(cd, dtype=float)
    cl2 = cl ** 2
    if np.ptp(cl2) == 0.0:
        raise ValueError("all CL^2 values identical, polar fit is rank deficient")
    basis = np.column_stack([np.ones_like(cl2), cl2])
    coef, *_ = np.linalg.lstsq(basis, cd, rcond=None)
    return DragPolarFit(cd0=float(coef[0]), k=float(coef[1]))


ENTRY_ALPHA_RAW = (10.0, 15.0, 20.0)
ENTRY_ALPHA_EXTENDED = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)


def extend_entry_aero(raw: AeroTable) -> AeroTable:
    """Extend a raw {10, 15, 20} deg entry table to {0, 5, 10, 15, 20, 25}.

    CL(0) = 0, CL(5) is the midpoint of 0 and CL(10), CL(25) extrapolates
    linearly from (15, 20).  CD at the new alphas comes from a per-Mach-column
    drag-polar fit; the raw rows keep their tabulated CD.
    """
    if not np.array_equal(raw.alpha_deg, ENTRY_ALPHA_RAW):
        raise ValueError("raw entry table must have alpha rows {10, 15, 20} deg")
    cl10, cl15, cl20 = raw.cl_table
    cd10, cd15, cd20 = raw.cd_table
    cl25 = 2.0 * cl20 - cl15
    cl = np.vstack([np.zeros_like(cl10), 0.5 * cl10, cl10, cl15, cl20, cl25])
    cd = np.empty_like(cl)
    for j in range(cl.shape[1]):
        fit = fit_drag_polar(raw.cl_table[:, j], raw.cd_table[:, j])
        cd[:, j] = [fit.cd0, fit.cd(cl[1, j]), cd10[j], cd15[j], cd20[j],
                    fit.cd(cl25[j])]
    return AeroTable(np.array(ENTRY_ALPHA_EXTENDED), raw.mach, cl, cd)


def _data_path(name: str):
    return resources.files("ascentry.data").joinpath(name)


def load_default_atmosphere() -> AtmosphereTable:
    return AtmosphereTable.from_csv(_data_path("atmosphere_us62.csv"))


def load_boost_aero() -> AeroTable:
    return AeroTable.from_csv(_data_path("aero_boost_cl.csv"),
                              _data_path("aero_boost_cd.csv"))


def load_entry_aero_raw() -> AeroTable:
    return AeroTable.from_csv(_data_path("aero_entry_cl.csv"),
                              _data_path("aero_entry_cd.csv"))


def load_entry_aero() -> AeroTable:
    return extend_entry_aero(load_entry_aero_raw())
