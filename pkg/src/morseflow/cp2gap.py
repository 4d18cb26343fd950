"""The four-dimensional local chart around the index-2 point r of CP^2: closed-form flow,
the section-to-section connection map, and the scan showing that the compactified
image of M(p, q) has no C^1 collar along the broken lines."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import BrokenLineError, ChartExitError, IntegrationError, PreconditionError
from .manifold import CP2_METRIC, ManifoldPoint, cp2_chart
from .morse import cp2_function

EXPONENTS = np.array([1.0, 2.0, -4.0, -4.0])
CHART_RADIUS_SQ = 4.0
BOUNDARY_TOL = 1e-9  # points this close to the chart boundary are accepted
INDICES = {"p": 4, "q": 0, "r": 2}


@dataclass(frozen=True)
class Cp2LocalModel:
    metric: tuple = CP2_METRIC
    exponents: tuple = tuple(EXPONENTS)
    epsilon: float = 1.0
    indices: tuple = (4, 0, 2)


def d_value(v1, v2):
    """Rescaling factor of the connection: the positive root of d^2 - v1^2 d - v2^2 = 0."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    # hypot keeps tiny and huge arguments from under- or overflowing
    return 0.5 * v1**2 + 0.5 * np.hypot(v1**2, 2.0 * v2)


def cp2_flow(v, t: float) -> np.ndarray:
    """Closed-form negative gradient flow; raises ChartExitError if the path leaves
    the chart sum v_i^2 < 4 within [0, t]."""
    v = np.asarray(v, dtype=float)
    if v @ v > CHART_RADIUS_SQ + BOUNDARY_TOL:
        raise ChartExitError("start point is outside the chart", exit_time=0.0)
    out = np.exp(EXPONENTS * t) * v
    # |v(t)|^2 is a sum of exponentials, hence convex in t: only the end can leave
    if out @ out > CHART_RADIUS_SQ + BOUNDARY_TOL:
        g = lambda tau: float(np.sum((np.exp(EXPONENTS * tau) * v) ** 2)) - CHART_RADIUS_SQ
        t_exit = brentq(g, 0.0, t, xtol=1e-14) if t > 0 else brentq(g, t, 0.0, xtol=1e-14)
        raise ChartExitError(f"flow leaves the chart at t = {t_exit:.12g}", exit_time=t_exit)
    return out


def cp2_connect(v) -> np.ndarray:
    """Map a point of the upper section (v3^2 + v4^2 = 1) to the point of the lower
    section (v1^2 + v2^2 = 1) on the same unbroken flow line."""
    v = np.asarray(v, dtype=float)
    if v[0] == 0.0 and v[1] == 0.0:
        raise BrokenLineError("(v1, v2) = (0, 0) lies on the ascending manifold of r")
    d = float(d_value(v[0], v[1]))
    return np.array([v[0] / np.sqrt(d), v[1] / d, d * d * v[2], d * d * v[3]])


def connection_time(v) -> float:
    """Flow time between the two sections: e^t = d^(-1/2)."""
    return -0.5 * float(np.log(d_value(v[0], v[1])))


def integrate_to_section(v, rtol: float = 1e-12, atol: float = 1e-13, max_time: float = 60.0) -> np.ndarray:
    """Integrate x' = -G^{-1} df with the chart metric until v1^2 + v2^2 = 1 (either
    time direction), independent of the closed form."""
    atlas, func = cp2_chart(), cp2_function()
    Ginv = atlas.inverse_metric(ManifoldPoint("U", np.zeros(4)))
    v = np.asarray(v, dtype=float)

    def rhs(t, y, sgn):
        return -sgn * (Ginv @ func.df(ManifoldPoint("U", y)))

    def section(t, y, sgn):
        return y[0] ** 2 + y[1] ** 2 - 1.0

    section.terminal = True
    sgn = 1.0 if v[0] ** 2 + v[1] ** 2 < 1.0 else -1.0
    if v[0] ** 2 + v[1] ** 2 == 1.0:
        return v.copy()
    sol = solve_ivp(rhs, (0.0, max_time), v, method="DOP853", events=section, args=(sgn,),
                    rtol=rtol, atol=atol)
    if sol.status != 1 or not len(sol.y_events[0]):
        raise IntegrationError("trajectory does not reach the lower section", last_state=sol.y[:, -1])
    return sol.y_events[0][0]


def integrate_flow(v, t: float, rtol: float = 1e-12, atol: float = 1e-14) -> np.ndarray:
    """Metric-ODE integration of the flow for time t."""
    atlas, func = cp2_chart(), cp2_function()
    Ginv = atlas.inverse_metric(ManifoldPoint("U", np.zeros(4)))
    sol = solve_ivp(lambda s, y: -(Ginv @ func.df(ManifoldPoint("U", y))), (0.0, t), np.asarray(v, float),
                    method="DOP853", rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegrationError(sol.message, last_state=sol.y[:, -1])
    return sol.y[:, -1]


def random_upper_points(rng, count: int, radius: float = 0.9) -> np.ndarray:
    """Points with (v3, v4) on the unit circle and 0 < v1^2 + v2^2 < radius^2."""
    th = rng.uniform(0, 2 * np.pi, count)
    ph = rng.uniform(0, 2 * np.pi, count)
    rho = radius * np.sqrt(rng.uniform(1e-4, 1.0, count))
    return np.column_stack([rho * np.cos(ph), rho * np.sin(ph), np.cos(th), np.sin(th)])


# -------------------------------------------------------------------- blow-up scan


@dataclass(frozen=True)
class BlowupScanRow:
    s: float
    a: float
    b: float
    v: tuple  # v1..v8
    d: float
    v5: float
    limit: float

    def as_list(self):
        return [self.s, self.a, self.b, *self.v, self.d, self.v5, self.limit]


CSV_COLUMNS = ["s", "a", "b"] + [f"v{i}" for i in range(1, 9)] + ["d", "v5", "L"]


def blowup_limit(a: float, b: float) -> float:
    return a / np.sqrt(0.5 * a * a + 0.5 * np.sqrt(a**4 + 4 * b * b))


def s_grid(s_min: float = 1e-6, s_max: float = 1e-1) -> np.ndarray:
    """Decades from s_max down to s_min."""
    if not 0 < s_min <= s_max:
        raise PreconditionError("need 0 < s_min <= s_max")
    n = int(round(np.log10(s_max / s_min))) + 1
    return s_max * 10.0 ** -np.arange(n)


def c1_blowup_scan(a: float, b: float, grid: Optional[Sequence[float]] = None,
                   theta_plus: float = 0.0, verify: bool = False) -> List[BlowupScanRow]:
    """Follow v1 = a s, v2 = b s^2 into the corner; v5 tends to a nonzero limit while a
    C^1 collar would force the boundary value 0."""
    if a == 0:
        raise PreconditionError("a must be nonzero: the curve needs a nonzero first-order v1 term")
    grid = s_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise PreconditionError("s grid must lie in (0, s_max]")
    L = float(blowup_limit(a, b))
    rows = []
    for s in grid:
        upper = np.array([a * s, b * s * s, np.cos(theta_plus), np.sin(theta_plus)])
        lower = cp2_connect(upper)
        if verify:
            direct = integrate_to_section(upper)
            if np.max(np.abs(direct - lower)) > 1e-6:
                raise IntegrationError(f"flow integration disagrees with the connection at s = {s}")
        d = float(d_value(upper[0], upper[1]))
        rows.append(BlowupScanRow(float(s), float(a), float(b), tuple(np.concatenate([upper, lower])),
                                  d, float(lower[0]), L))
    return rows


@dataclass
class BlowupCertificate:
    limit: float
    boundary_value: float
    spread: float
    non_c1: bool


def certificate(rows: Sequence[BlowupScanRow], tol: float = 1e-9) -> BlowupCertificate:
    """v5 constant along the scan and equal to a nonzero limit, while the broken limit
    (through r, with the lower point at (0, 1, 0, 0)) has v5 = 0."""
    v5 = np.array([r.v5 for r in rows])
    L = rows[0].limit
    spread = float(np.max(np.abs(v5 - L)))
    return BlowupCertificate(L, 0.0, spread, bool(spread <= tol and abs(L) > tol))


def write_scan(rows: Sequence[BlowupScanRow], fh) -> None:
    w = csv.writer(fh)
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([repr(float(x)) for x in r.as_list()])


def write_scan_csv(rows: Sequence[BlowupScanRow], path) -> None:
    with open(path, "w", newline="") as fh:
        write_scan(rows, fh)
