"""Negative gradient flow with chart switching, level-to-level flow maps and their
derivatives, omega-limits, and the dwell decomposition of nearly broken trajectories."""

from __future__ import annotations

import bisect
import csv
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import RK45
from scipy.optimize import brentq, minimize_scalar

from .errors import (
    ConfigurationError,
    ConsistencyError,
    IntegrationError,
    PreconditionError,
    UndefinedFlowMapError,
)
from .manifold import AtlasDescriptor, ManifoldPoint
from .morse import CriticalPoint, MorseFunctionDescriptor

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-12
LEVEL_TOL = 1e-9

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class FlowSettings:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_time: float = 200.0
    convergence_radius: float = 1e-5
    gradient_tol: float = 1e-8
    max_step: float = np.inf

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol", "max_time", "convergence_radius", "gradient_tol", "max_step"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"flow setting {name} must be positive")

    def tightened(self, factor: float = 10.0) -> "FlowSettings":
        return FlowSettings(
            self.abs_tol / factor,
            self.rel_tol / factor,
            self.max_time,
            self.convergence_radius,
            self.gradient_tol,
            self.max_step,
        )


@dataclass
class Segment:
    t0: float
    t1: float
    chart: str
    interpolant: object  # scipy dense output, state as a function of time

    def state(self, t: float) -> np.ndarray:
        return self.interpolant(t)


@dataclass
class Trajectory:
    """Samples of a flow line.  Time is elapsed flow time; for backward flows (direction
    -1) the point at time t is the image under the flow for time -t.

    ``status`` is one of converged, reached-level, reached-time, max-time, exited-domain.
    """

    direction: int
    times: List[float]
    points: List[ManifoldPoint]
    values: List[float]
    segments: List[Segment]
    status: str = "running"
    critical: Optional[CriticalPoint] = None
    level: Optional[float] = None
    monotone: bool = True
    variational: Optional[np.ndarray] = None
    n: int = 0
    _starts: Optional[list] = field(default=None, repr=False)

    @property
    def start(self) -> ManifoldPoint:
        return self.points[0]

    @property
    def end(self) -> ManifoldPoint:
        return self.points[-1]

    @property
    def duration(self) -> float:
        return self.times[-1] - self.times[0]

    def _segment(self, t: float) -> Segment:
        if not self.segments:
            raise ValueError("trajectory has no integrated segments")
        if self._starts is None or len(self._starts) != len(self.segments):
            self._starts = [seg.t0 for seg in self.segments]
        i = bisect.bisect_right(self._starts, t) - 1
        return self.segments[min(max(i, 0), len(self.segments) - 1)]

    def sample(self, per_segment: int = 4):
        """(t, point) pairs on a grid inside every segment plus the final time."""
        out = []
        for seg in self.segments:
            for t in np.linspace(seg.t0, seg.t1, per_segment, endpoint=False):
                out.append((float(t), ManifoldPoint(seg.chart, seg.state(t)[: self.n])))
        if self.segments:
            seg = self.segments[-1]
            out.append((seg.t1, ManifoldPoint(seg.chart, seg.state(seg.t1)[: self.n])))
        else:
            out.append((self.times[0], self.points[0]))
        return out

    def point_at(self, t: float, atlas: Optional[AtlasDescriptor] = None) -> ManifoldPoint:
        if not self.segments:
            return self.points[0]
        seg = self._segment(t)
        x = seg.state(t)[: self.n]
        if atlas is not None:
            x = atlas.chart(seg.chart).canonical(x)
        return ManifoldPoint(seg.chart, x)

    def dissipation(self, atlas: AtlasDescriptor, func: MorseFunctionDescriptor) -> float:
        """Integral of |grad f|^2 over the trajectory (Gauss-Legendre on the dense output)."""
        total = 0.0
        for seg in self.segments:
            h = 0.5 * (seg.t1 - seg.t0)
            if h <= 0:
                continue
            mid = 0.5 * (seg.t1 + seg.t0)
            acc = 0.0
            for node, w in zip(_GL_NODES, _GL_WEIGHTS):
                pt = ManifoldPoint(seg.chart, seg.state(mid + h * node)[: self.n])
                acc += w * func.gradient_norm(atlas, pt) ** 2
            total += h * acc
        return total

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "chart"] + [f"x{i + 1}" for i in range(self.n)])
            for t, p in zip(self.times, self.points):
                w.writerow([repr(float(t)), p.chart] + [repr(float(c)) for c in p.coords])


class GradientFlow:
    """Integrates x' = -grad f (direction +1) or x' = +grad f (direction -1)."""

    def __init__(
        self,
        atlas: AtlasDescriptor,
        func: MorseFunctionDescriptor,
        criticals: Sequence[CriticalPoint] = (),
        settings: Optional[FlowSettings] = None,
    ):
        self.atlas = atlas
        self.func = func
        self.criticals = list(criticals)
        self.settings = settings or FlowSettings()
        self.n = atlas.dim

    # ---------------------------------------------------------------- vector field

    def vector_field(self, point: ManifoldPoint) -> np.ndarray:
        return -self.func.gradient(self.atlas, point)

    def linearization(self, chart: str, x: np.ndarray) -> np.ndarray:
        """Jacobian of the field -G^{-1} df in chart coordinates."""
        ch = self.atlas.chart(chart)
        G = ch.metric(x)
        dG = ch.metric_derivative(x)
        df = self.func.differential[chart](x)
        H = self.func.hessian[chart](x)
        g_df = np.linalg.solve(G, df)
        corr = np.stack([dG[k] @ g_df for k in range(self.n)], axis=1)
        return np.linalg.solve(G, corr - H)

    def _rhs(self, chart: str, direction: int, with_var: bool):
        ch = self.atlas.chart(chart)
        dfun = self.func.differential[chart]
        hfun = self.func.hessian[chart]
        n = self.n

        def rhs(t, y):
            x = y[:n]
            Ginv = ch.inverse_metric(x)
            g_df = Ginv @ dfun(x)
            out = np.empty_like(y)
            out[:n] = -direction * g_df
            if with_var:
                dG = ch.metric_derivative(x)
                corr = np.einsum("kij,j->ik", dG, g_df)
                DX = Ginv @ (corr - hfun(x))
                out[n:] = direction * (DX @ y[n:].reshape(n, n)).ravel()
            return out

        return rhs

    # ---------------------------------------------------------------- helpers

    def nearest_critical(self, point: ManifoldPoint, radius: float) -> Optional[CriticalPoint]:
        best, best_d = None, radius
        for c in self.criticals:
            d = self.atlas.distance(point, c.position)
            if d < best_d:
                best, best_d = c, d
        return best

    def _check_converged(self, point: ManifoldPoint):
        if self.func.gradient_norm(self.atlas, point) >= self.settings.gradient_tol:
            return False, None
        return True, self.nearest_critical(point, self.settings.convergence_radius)

    # ---------------------------------------------------------------- integration

    def integrate(
        self,
        start: ManifoldPoint,
        level: Optional[float] = None,
        time: Optional[float] = None,
        direction: int = 1,
        variational: bool = False,
        phi0: Optional[np.ndarray] = None,
        stop_at_convergence: bool = True,
    ) -> Trajectory:
        """Flow from ``start`` until the level ``level`` is reached, the time ``time``
        has elapsed, the trajectory converges to a critical point, or max_time."""
        if direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        atlas, func, n = self.atlas, self.func, self.n
        s = self.settings
        start = atlas.point(start.chart, start.coords)
        f0 = func.f(start)
        if level is not None and direction * (f0 - level) <= 0:
            raise PreconditionError(
                f"level {level} is not {'below' if direction > 0 else 'above'} f(start) = {f0}"
            )
        t_end = s.max_time if time is None else float(time)
        if t_end < 0:
            raise PreconditionError("time must be non-negative")

        phi = np.eye(n) if phi0 is None else np.array(phi0, dtype=float)
        traj = Trajectory(direction, [0.0], [start], [f0], [], n=n)
        if variational:
            traj.variational = phi.copy()

        if stop_at_convergence:
            conv, crit = self._check_converged(start)
            if conv:
                traj.status, traj.critical = "converged", crit
                return traj
        if t_end == 0:
            traj.status = "reached-time"
            return traj

        chart = start.chart
        state = np.concatenate([start.coords, phi.ravel()]) if variational else start.coords.copy()
        t = 0.0
        f_prev = f0
        while True:
            ch = atlas.chart(chart)
            solver = RK45(
                self._rhs(chart, direction, variational),
                t,
                state,
                t_end,
                rtol=s.rel_tol,
                atol=s.abs_tol,
                max_step=s.max_step,
            )
            switched = False
            while solver.status == "running":
                msg = solver.step()
                if solver.status == "failed":
                    raise IntegrationError(
                        f"integrator failed at t={solver.t}: {msg}",
                        last_state=ManifoldPoint(chart, ch.canonical(state[:n])),
                    )
                t_old, t = solver.t_old, solver.t
                y = solver.y
                x = y[:n]
                seg = Segment(t_old, t, chart, solver.dense_output())
                pt = ManifoldPoint(chart, ch.canonical(x))

                fv = func.value[chart](x)
                if level is not None and direction * (fv - level) <= 0:
                    t_hit = self._locate_level(seg, level)
                    seg.t1 = t_hit
                    traj.segments.append(seg)
                    y_hit = seg.state(t_hit)
                    pt_hit = ManifoldPoint(chart, ch.canonical(y_hit[:n]))
                    self._append(traj, t_hit, pt_hit, y_hit, f_prev)
                    traj.status, traj.level = "reached-level", level
                    return traj

                traj.segments.append(seg)
                self._append(traj, t, pt, y, f_prev)
                f_prev = traj.values[-1]

                if stop_at_convergence:
                    conv, crit = self._check_converged(pt)
                    if conv:
                        traj.status, traj.critical = "converged", crit
                        return traj

                if not ch.in_core(x):
                    outside = not ch.contains(x)
                    moved = self._switch_chart(pt, chart, allow_outside=outside)
                    if moved is None and outside:
                        traj.status = "exited-domain"
                        return traj
                    if moved is not None:
                        new_pt, J = moved
                        chart = new_pt.chart
                        if variational:
                            phi = J @ y[n:].reshape(n, n)
                            state = np.concatenate([new_pt.coords, phi.ravel()])
                        else:
                            state = new_pt.coords.copy()
                        traj.points[-1] = new_pt
                        switched = True
                        break
            if switched:
                continue
            if solver.status == "finished":
                traj.status = "reached-time" if time is not None else "max-time"
                return traj

    def _append(self, traj: Trajectory, t, pt, y, f_prev):
        fv = self.func.f(pt)
        if self.direction_violation(traj.direction, f_prev, fv):
            traj.monotone = False
        traj.times.append(float(t))
        traj.points.append(pt)
        traj.values.append(fv)
        if traj.variational is not None:
            traj.variational = y[self.n :].reshape(self.n, self.n).copy()

    @staticmethod
    def direction_violation(direction, f_prev, f_new):
        slack = MONOTONE_SLACK * max(1.0, abs(f_prev))
        return direction * (f_new - f_prev) > slack

    def _switch_chart(self, pt: ManifoldPoint, chart: str, allow_outside: bool = False):
        best = None
        best_depth = self.atlas.chart(chart).depth(pt.coords)
        if allow_outside:
            best_depth = -np.inf
        for cid in self.atlas.charts:
            if cid == chart:
                continue
            try:
                other = self.atlas.transition(pt, cid)
            except Exception:
                continue
            d = self.atlas.chart(cid).depth(other.coords)
            if d > best_depth:
                best, best_depth = other, d
        if best is None:
            return None
        return best, self.atlas.transition_jacobian(pt, best.chart)

    def _locate_level(self, seg: Segment, level: float) -> float:
        fv = self.func.value[seg.chart]
        n = self.n

        def g(t):
            return fv(seg.state(t)[:n]) - level

        ga, gb = g(seg.t0), g(seg.t1)
        if ga == 0.0:
            return seg.t0
        if gb == 0.0 or np.sign(ga) == np.sign(gb):
            return seg.t1
        t = brentq(g, seg.t0, seg.t1, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        if abs(g(t)) > LEVEL_TOL:
            raise IntegrationError(f"level {level} located only to {abs(g(t)):.2e}")
        return t


# -------------------------------------------------------------------- flow maps


@dataclass
class FlowMapResult:
    """Image on the target level and the derivative of the level-to-level map.

    ``derivative`` acts on tangent vectors of the source level (chart coordinates of
    the source point) and returns tangent vectors of the target level.
    """

    source: ManifoldPoint
    image: ManifoldPoint
    derivative: np.ndarray
    elapsed: float
    trajectory: Trajectory


def level_tangent_basis(atlas, func, point: ManifoldPoint) -> np.ndarray:
    """Metric-orthonormal basis of ker df at ``point`` (n x (n-1))."""
    G = atlas.metric_tensor(point)
    df = func.df(point)
    n = df.size
    C = np.linalg.cholesky(G)  # G = C C^T
    w = np.linalg.solve(C, df)  # df in orthonormal coordinates y = C^T x
    q, _ = np.linalg.qr(np.column_stack([w, np.eye(n)]))
    B = q[:, 1:n]
    return np.linalg.solve(C.T, B)


def flow_map(
    flow: GradientFlow,
    point: ManifoldPoint,
    target_level: float,
    phi0: Optional[np.ndarray] = None,
) -> FlowMapResult:
    """Push ``point`` along the flow (down or up) to the level ``target_level``."""
    f0 = flow.func.f(point)
    direction = 1 if target_level < f0 else -1
    traj = flow.integrate(point, level=target_level, direction=direction, variational=True, phi0=phi0)
    if traj.status != "reached-level":
        if traj.status == "converged":
            name = traj.critical.label if traj.critical is not None else "an unknown critical point"
            raise UndefinedFlowMapError(
                f"trajectory from {point} converges to {name} before level {target_level}",
                critical=traj.critical,
            )
        raise UndefinedFlowMapError(f"trajectory from {point} ended with status {traj.status}")
    img = traj.end
    F = direction * flow.vector_field(img)
    df = flow.func.df(img)
    P = np.eye(flow.n) - np.outer(F, df) / float(df @ F)
    return FlowMapResult(point, img, P @ traj.variational, traj.duration, traj)


def project_to_level(atlas, func, point: ManifoldPoint, level: float, iters: int = 30) -> ManifoldPoint:
    """Move ``point`` along the gradient line to the level (Newton steps)."""
    x = point.coords.copy()
    ch = atlas.chart(point.chart)
    for _ in range(iters):
        pt = ManifoldPoint(point.chart, ch.canonical(x))
        r = func.f(pt) - level
        if abs(r) < 1e-14:
            break
        g = func.gradient(atlas, pt)
        x = x - r * g / float(func.df(pt) @ g)
    return ManifoldPoint(point.chart, ch.canonical(x))


# -------------------------------------------------------------------- omega limits


@dataclass
class OmegaLimit:
    status: str  # converged | exited-domain | inconclusive
    critical: Optional[CriticalPoint]
    trajectory: Trajectory


def omega_limit(flow: GradientFlow, point: ManifoldPoint, direction: int = 1) -> OmegaLimit:
    traj = flow.integrate(point, direction=direction)
    if traj.status == "converged" and traj.critical is not None:
        return OmegaLimit("converged", traj.critical, traj)
    if traj.status == "exited-domain":
        return OmegaLimit("exited-domain", None, traj)
    return OmegaLimit("inconclusive", None, traj)


# -------------------------------------------------------------------- broken decomposition


@dataclass(frozen=True)
class Dwell:
    critical: CriticalPoint
    enter: float
    exit: float
    closest: float

    @property
    def duration(self) -> float:
        return self.exit - self.enter


@dataclass
class BrokenDecomposition:
    """Alternating transits and dwells; ``skeleton`` lists the visited critical points."""

    dwells: List[Dwell]
    transits: List[tuple] = field(default_factory=list)

    @property
    def skeleton(self) -> List[CriticalPoint]:
        return [d.critical for d in self.dwells]

    @property
    def labels(self) -> List[str]:
        return [d.critical.label for d in self.dwells]


def min_critical_separation(atlas, criticals) -> float:
    best = np.inf
    for i, a in enumerate(criticals):
        for b in criticals[i + 1 :]:
            best = min(best, atlas.distance(a.position, b.position))
    return best


def decompose_to_broken(
    flow: GradientFlow,
    traj: Trajectory,
    radius: float,
    samples_per_segment: int = 4,
) -> BrokenDecomposition:
    atlas = flow.atlas
    crits = flow.criticals
    if 2 * radius >= min_critical_separation(atlas, crits):
        raise ConfigurationError(f"dwell radius {radius} makes balls of distinct critical points overlap")
    if not traj.segments:
        dw = []
        c = flow.nearest_critical(traj.start, radius)
        if c is not None:
            dw.append(Dwell(c, traj.times[0], traj.times[0], atlas.distance(traj.start, c.position)))
        return BrokenDecomposition(dw)

    def dist(t, c):
        return atlas.distance(traj.point_at(t, atlas), c.position)

    samples = traj.sample(samples_per_segment)
    ts = np.array([t for t, _ in samples])

    dwells = []
    for c in crits:
        d = np.array([atlas.distance(x, c.position) for _, x in samples]) - radius
        inside = d < 0
        if not inside.any():
            # a fast pass may slip between samples: check local minima
            continue
        i = 0
        while i < len(ts):
            if not inside[i]:
                i += 1
                continue
            j = i
            while j + 1 < len(ts) and inside[j + 1]:
                j += 1
            enter = ts[i] if i == 0 else brentq(lambda t: dist(t, c) - radius, ts[i - 1], ts[i], xtol=1e-12)
            leave = ts[j] if j == len(ts) - 1 else brentq(lambda t: dist(t, c) - radius, ts[j], ts[j + 1], xtol=1e-12)
            k = i + int(np.argmin(d[i : j + 1]))
            lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]
            closest = d[k] + radius
            if hi > lo:
                res = minimize_scalar(lambda t: dist(t, c), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
                closest = min(closest, float(res.fun))
            dwells.append(Dwell(c, float(enter), float(leave), float(closest)))
            i = j + 1
    dwells.sort(key=lambda d: d.enter)
    labels = [d.critical.label for d in dwells]
    if len(set(labels)) != len(labels):
        raise ConsistencyError(f"trajectory revisits a critical point: {labels}")
    vals = [d.critical.value for d in dwells]
    if any(b >= a for a, b in zip(vals, vals[1:])) and traj.direction == 1:
        raise ConsistencyError(f"critical values do not decrease along the skeleton {labels}")
    transits = []
    prev = traj.times[0]
    for d in dwells:
        if d.enter > prev:
            transits.append((prev, d.enter))
        prev = d.exit
    if traj.times[-1] > prev:
        transits.append((prev, traj.times[-1]))
    return BrokenDecomposition(dwells, transits)
