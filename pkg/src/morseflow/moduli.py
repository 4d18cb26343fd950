"""Descending spheres, connecting orbits between critical points, one-dimensional moduli
curves, and orientation signs of flow lines."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import (
    ConfigurationError,
    ConsistencyError,
    DegenerateIntersectionError,
    LevelError,
    PreconditionError,
    UnresolvedOrbitError,
)
from .flow import GradientFlow, Trajectory, decompose_to_broken, min_critical_separation
from .manifold import ManifoldPoint
from .morse import CriticalPoint

log = logging.getLogger(__name__)

DEGENERATE_DET = 1e-8


@dataclass(frozen=True)
class ModuliSettings:
    mesh: int = 32
    bisect_tol: float = 1e-10
    launch_radius: float = 1e-4
    sign_offset: float = 0.1  # sign level sits this fraction of f(p) - f(q) above f(q)
    side_fraction: float = 0.45  # side-detection ball radius, fraction of the critical separation
    curve_step: float = 1e-2
    end_offset: float = 1e-6
    spurious_distance: float = 1e-3

    def __post_init__(self):
        if self.mesh < 4:
            raise ConfigurationError("moduli mesh must have at least 4 directions")
        for name in ("bisect_tol", "launch_radius", "sign_offset", "side_fraction", "curve_step", "end_offset"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"moduli setting {name} must be positive")
        if self.sign_offset >= 1:
            raise ConfigurationError("sign_offset must lie in (0, 1)")


# -------------------------------------------------------------------- spheres


def sphere_mesh(dim: int, count: int) -> np.ndarray:
    """Unit vectors of R^dim: both points of S^0, an offset uniform grid on S^1,
    a Fibonacci lattice on S^2, and a deterministic Gaussian sample above."""
    if dim < 1:
        return np.zeros((0, 0))
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(th), np.sin(th)])
    if dim == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = np.pi * (1 + 5**0.5) * i
        rr = np.sqrt(1 - z * z)
        return np.column_stack([rr * np.cos(phi), rr * np.sin(phi), z])
    g = np.random.default_rng(12345).normal(size=(count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass
class DescendingSphereSample:
    critical: CriticalPoint
    level: float
    directions: np.ndarray  # coefficients in the negative (or positive) eigenframe
    points: List[Optional[ManifoldPoint]]
    times: List[Optional[float]]
    ascending: bool = False

    @property
    def gaps(self) -> List[int]:
        return [i for i, p in enumerate(self.points) if p is None]


def critical_values_between(criticals, lo: float, hi: float, exclude=()) -> List[float]:
    # open interval: a critical point at the same value as the source is not in the way
    ids = {id(c) for c in exclude}
    return [c.value for c in criticals if id(c) not in ids and lo < c.value < hi]


def launch_point(flow: GradientFlow, crit: CriticalPoint, direction: np.ndarray, radius: float) -> ManifoldPoint:
    ch = flow.atlas.chart(crit.position.chart)
    x = ch.canonical(crit.position.coords + radius * np.asarray(direction, dtype=float))
    return ManifoldPoint(ch.id, x)


def descending_sphere(
    flow: GradientFlow,
    crit: CriticalPoint,
    level: float,
    mesh: int = 32,
    launch_radius: float = 1e-4,
    ascending: bool = False,
    allow_punctured: bool = False,
) -> DescendingSphereSample:
    """Image of the small sphere in V- (V+ when ``ascending``) on the level set."""
    lo, hi = (crit.value, level) if ascending else (level, crit.value)
    if ascending and level <= crit.value or not ascending and level >= crit.value:
        raise LevelError(f"level {level} is on the wrong side of f({crit.label}) = {crit.value}")
    if any(abs(c.value - level) < 1e-9 for c in flow.criticals):
        raise LevelError(f"level {level} is a critical value")
    if not allow_punctured and critical_values_between(flow.criticals, lo, hi, exclude=[crit]):
        raise LevelError(f"critical values lie between f({crit.label}) and level {level}")
    frame = crit.v_plus if ascending else crit.orientation_frame
    dirs = sphere_mesh(frame.shape[1], mesh)
    pts, times = [], []
    for u in dirs:
        x0 = launch_point(flow, crit, frame @ u, launch_radius)
        tr = flow.integrate(x0, level=level, direction=-1 if ascending else 1)
        if tr.status == "reached-level":
            pts.append(tr.end)
            times.append(tr.duration)
        else:
            pts.append(None)
            times.append(None)
    return DescendingSphereSample(crit, level, dirs, pts, times, ascending)


# -------------------------------------------------------------------- classes


@dataclass
class FlowLineClass:
    """One element of M(p, q).

    ``direction`` is the launch direction at p in chart coordinates (a unit vector for
    the metric at p), so it does not depend on the orientation chosen for D(p).
    ``tolerance`` is the width of the parameter bracket that certifies the orbit.
    """

    source: CriticalPoint
    target: CriticalPoint
    direction: np.ndarray
    parameter: float
    representative: ManifoldPoint
    level: float
    tolerance: float
    closest: float
    sign: Optional[int] = None

    def key(self):
        return tuple(np.round(self.representative.coords, 8))


def default_level(criticals, p: CriticalPoint, q: CriticalPoint) -> float:
    """Midpoint between f(p) and the highest critical value below it (never below f(q))."""
    below = [c.value for c in criticals if c.value < p.value - 1e-9]
    nxt = max(below) if below else q.value
    nxt = max(nxt, q.value)
    return 0.5 * (p.value + nxt)


@dataclass
class _MeshRun:
    params: np.ndarray
    dirs: np.ndarray
    trajectories: List[Trajectory]


class ModuliEngine:
    """Caches launch trajectories per critical point and evaluates orbit data."""

    def __init__(self, flow: GradientFlow, settings: Optional[ModuliSettings] = None):
        self.flow = flow
        self.settings = settings or ModuliSettings()
        self._mesh_cache: Dict[Tuple[str, int], _MeshRun] = {}
        self._orbit_cache: Dict[Tuple[str, str], List[FlowLineClass]] = {}
        self._curve_cache: Dict[Tuple[str, str, float], "ModuliCurve"] = {}
        sep = min_critical_separation(flow.atlas, flow.criticals)
        self.side_radius = self.settings.side_fraction * (sep if np.isfinite(sep) else 1.0)

    # ---------------------------------------------------------------- geometry helpers

    def _frame(self, p: CriticalPoint) -> np.ndarray:
        # parametrize with the unflipped eigenframe so parameters do not depend on orientation
        return p.v_minus

    def direction_at(self, p: CriticalPoint, theta: float) -> np.ndarray:
        V = self._frame(p)
        if p.index == 1:
            return V[:, 0] * (1.0 if theta >= 0 else -1.0)
        if p.index == 2:
            return np.cos(theta) * V[:, 0] + np.sin(theta) * V[:, 1]
        raise NotImplementedError("orbit search is implemented for source index 1 and 2 only")

    def launch(self, p: CriticalPoint, direction: np.ndarray) -> Trajectory:
        x0 = launch_point(self.flow, p, direction, self.settings.launch_radius)
        return self.flow.integrate(x0)

    def mesh_run(self, p: CriticalPoint) -> _MeshRun:
        key = (p.label, self.settings.mesh)
        if key not in self._mesh_cache:
            if p.index == 1:
                params = np.array([1.0, -1.0])
            else:
                m = self.settings.mesh
                params = 2 * np.pi * (np.arange(m) + 0.5) / m
            dirs = np.array([self.direction_at(p, t) for t in params])
            trajs = [self.launch(p, d) for d in dirs]
            self._mesh_cache[key] = _MeshRun(params, dirs, trajs)
        return self._mesh_cache[key]

    def side(self, traj: Trajectory, q: CriticalPoint) -> Optional[float]:
        """Signed V-(q) coordinate where ``traj`` leaves the side ball around q.

        0 when the trajectory converges to q, None when it never enters the ball.
        """
        atlas = self.flow.atlas
        if traj.status == "converged" and traj.critical is q:
            return 0.0
        R = self.side_radius

        def dist(t):
            return atlas.distance(traj.point_at(t, atlas), q.position)

        samples = traj.sample(4)
        ts = [t for t, _ in samples]
        d = np.array([atlas.distance(x, q.position) for _, x in samples])
        inside = np.nonzero(d < R)[0]
        if inside.size == 0:
            return None
        i = inside[0]
        after = np.nonzero(d[i:] >= R)[0]
        if after.size == 0:
            t_exit = ts[-1]
        else:
            j = i + after[0]
            t_exit = brentq(lambda t: dist(t) - R, ts[j - 1], ts[j], xtol=1e-12)
        x = traj.point_at(t_exit, atlas)
        disp = atlas.displacement(q.position, x)
        G = atlas.metric_tensor(q.position)
        return float(q.v_minus[:, 0] @ G @ disp)

    def closest_approach(self, traj: Trajectory, q: CriticalPoint) -> float:
        atlas = self.flow.atlas
        return min(atlas.distance(x, q.position) for _, x in traj.sample(6))

    # ---------------------------------------------------------------- orbits

    def orbits(self, p: CriticalPoint, q: CriticalPoint) -> List[FlowLineClass]:
        key = (p.label, q.label)
        if key in self._orbit_cache:
            return self._orbit_cache[key]
        if p.index - q.index != 1:
            raise PreconditionError(f"index difference of ({p.label}, {q.label}) is not 1")
        if p.value <= q.value:
            return []
        run = self.mesh_run(p)
        found: List[Tuple[float, np.ndarray, float, float]] = []  # (param, dir, tol, closest)
        if p.index == 1:
            for t, d, tr in zip(run.params, run.dirs, run.trajectories):
                if tr.status == "converged" and tr.critical is q:
                    found.append((t, d, 0.0, 0.0))
        elif p.index == 2:
            found = self._index2_orbits(p).get(q.label, [])
        else:
            raise NotImplementedError("orbit search is implemented for source index 1 and 2 only")

        level = default_level(self.flow.criticals, p, q)
        classes = []
        for t, d, tol, closest in found:
            tr = self.flow.integrate(launch_point(self.flow, p, d, self.settings.launch_radius), level=level)
            if tr.status != "reached-level":
                raise ConsistencyError(f"orbit from {p.label} does not reach level {level}")
            classes.append(FlowLineClass(p, q, d, float(np.mod(t, 2 * np.pi)) if p.index == 2 else float(t),
                                         tr.end, level, tol, closest))
        classes.sort(key=lambda c: c.parameter)
        self._orbit_cache[key] = classes
        return classes

    @staticmethod
    def _omega_key(tr: Trajectory):
        return (tr.status, tr.critical.label if tr.critical is not None else None)

    def _index2_orbits(self, p: CriticalPoint):
        """All orbits from an index-2 point to index-1 points, keyed by target label.

        Brackets come from neighbouring mesh directions that either flow to different
        limits or pass a saddle on opposite sides; each is bisected to bisect_tol.
        """
        key = ("index2", p.label, self.settings.mesh)
        if key in self._orbit_cache:
            return self._orbit_cache[key]
        run = self.mesh_run(p)
        saddles = [c for c in self.flow.criticals if c.index == p.index - 1 and c.value < p.value]
        labels = {c.label for c in saddles}
        found = {c.label: [] for c in saddles}
        m = len(run.params)

        def params(i):
            j = (i + 1) % m
            return run.params[i], run.params[j] if j > i else run.params[j] + 2 * np.pi

        omega = [self._omega_key(tr) for tr in run.trajectories]
        for i, w in enumerate(omega):
            if w[1] in labels:
                found[w[1]].append((run.params[i], run.dirs[i], 0.0, 0.0))
        for i in range(m):
            j = (i + 1) % m
            if omega[i] == omega[j] or omega[i][1] in labels or omega[j][1] in labels:
                continue
            lo, hi = params(i)
            res = self._bisect(p, lo, hi, omega[i], lambda tr: self._omega_key(tr), labels)
            if res is not None:
                self._record(found, p, saddles, res)
        for q in saddles:
            sides = [self.side(tr, q) for tr in run.trajectories]
            for i in range(m):
                j = (i + 1) % m
                a, b = sides[i], sides[j]
                if omega[i] != omega[j] or a is None or b is None or a == 0.0 or b == 0.0:
                    continue
                if np.sign(a) == np.sign(b):
                    continue
                lo, hi = params(i)

                def classify(tr, q=q):
                    sd = self.side(tr, q)
                    if sd is None:
                        raise UnresolvedOrbitError(
                            f"bisection for an orbit {p.label} -> {q.label} lost the side ball", bracket=(lo, hi)
                        )
                    return np.sign(sd)

                res = self._bisect(p, lo, hi, np.sign(a), classify, labels)
                if res is not None:
                    self._record(found, p, saddles, res)
        for lab in found:
            uniq = []
            for item in sorted(found[lab], key=lambda it: it[0]):
                if not uniq or abs(item[0] - uniq[-1][0]) > 1e-7:
                    uniq.append(item)
            if len(uniq) > 1 and abs(uniq[0][0] + 2 * np.pi - uniq[-1][0]) <= 1e-7:
                uniq.pop()
            found[lab] = [(t, d, tol, cl) for t, d, tol, cl, *_ in uniq]
        self._orbit_cache[key] = found
        return found

    def _record(self, found, p, saddles, res):
        t, d, tol, tr = res
        if tr is None:
            return
        if tr.status == "converged" and tr.critical is not None and tr.critical.label in found:
            found[tr.critical.label].append((t, d, 0.0, 0.0))
            return
        dists = [(self.closest_approach(tr, c), c) for c in saddles]
        closest, c = min(dists, key=lambda z: z[0])
        if closest > self.settings.spurious_distance:
            log.info("discarding bracket from %s at %.6f: closest approach %.2e", p.label, t, closest)
            return
        found[c.label].append((t, d, tol, closest))

    def _bisect(self, p, lo, hi, key_lo, classify, hit_labels):
        """Bisect the launch parameter between two differently classified directions."""
        tol = self.settings.bisect_tol
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            tr = self.launch(p, self.direction_at(p, mid))
            if tr.status == "converged" and tr.critical is not None and tr.critical.label in hit_labels:
                return mid, self.direction_at(p, mid), 0.0, tr
            if classify(tr) == key_lo:
                lo = mid
            else:
                hi = mid
        mid = 0.5 * (lo + hi)
        d = self.direction_at(p, mid)
        return mid, d, hi - lo, self.launch(p, d)

    # ---------------------------------------------------------------- orientation

    def sign(
        self,
        cls: FlowLineClass,
        offset: Optional[float] = None,
        source: Optional[CriticalPoint] = None,
        target: Optional[CriticalPoint] = None,
    ) -> int:
        p = source or cls.source
        q = target or cls.target
        flow, atlas = self.flow, self.flow.atlas
        frac = self.settings.sign_offset if offset is None else offset
        a = q.value + frac * (p.value - q.value)
        x0 = launch_point(flow, p, cls.direction, self.settings.launch_radius)
        tr = flow.integrate(x0, level=a, variational=True)
        if tr.status != "reached-level":
            raise ConsistencyError(f"class {p.label} -> {q.label} does not reach the sign level {a}")
        x = tr.end
        F = tr.variational @ p.orientation_frame
        if x.chart != q.position.chart:
            J = atlas.transition_jacobian(x, q.position.chart)
            x = atlas.transition(x, q.position.chart)
            F = J @ F
        return orientation_from_frames(
            F, -flow.func.gradient(atlas, x), flow.func.df(x), atlas.metric_tensor(x), q
        )


def orientation_from_frames(F, neg_grad, df, G, q: CriticalPoint) -> int:
    """Sign of the intersection of the descending sphere (tangent frame pushed forward
    as F) with the ascending sphere of q, compared through the normal frame V-(q)."""
    k = F.shape[1]
    c, *_ = np.linalg.lstsq(F, neg_grad, rcond=None)
    w = F.T @ df
    if k == 1:
        s0 = 1 if c[0] > 0 else -1
        E = np.zeros((F.shape[0], 0))
    else:
        _, _, vt = np.linalg.svd(w.reshape(1, -1))
        B = vt[1:].T  # basis of ker w, k x (k-1)
        if np.linalg.det(np.column_stack([c, B])) < 0:
            B[:, 0] = -B[:, 0]
        s0 = 1
        E = _gram_schmidt(F @ B, G)
    if q.index == 0:
        return s0 * q.orientation
    basis = np.column_stack([q.orientation_frame, q.v_plus])
    coeff = np.linalg.solve(basis, E)
    det = float(np.linalg.det(coeff[: q.index, :]))
    if abs(det) < DEGENERATE_DET:
        raise DegenerateIntersectionError(
            f"descending sphere meets the ascending sphere of {q.label} with |det| = {abs(det):.2e}"
        )
    return s0 * (1 if det > 0 else -1)


def _gram_schmidt(E, G):
    """Orientation-preserving orthonormalization for the metric G."""
    out = np.array(E, dtype=float)
    for j in range(out.shape[1]):
        for i in range(j):
            out[:, j] -= (out[:, i] @ G @ out[:, j]) * out[:, i]
        out[:, j] /= np.sqrt(out[:, j] @ G @ out[:, j])
    return out


# -------------------------------------------------------------------- public operations


def connecting_orbits(engine: ModuliEngine, p: CriticalPoint, q: CriticalPoint) -> List[FlowLineClass]:
    return engine.orbits(p, q)


def orientation_sign(engine: ModuliEngine, cls: FlowLineClass, offset: Optional[float] = None,
                     source=None, target=None) -> int:
    s = engine.sign(cls, offset, source, target)
    if source is None and target is None and offset is None:
        cls.sign = s
    return s


def signed_count(engine: ModuliEngine, p: CriticalPoint, q: CriticalPoint) -> int:
    return int(sum(orientation_sign(engine, c) for c in connecting_orbits(engine, p, q)))


# -------------------------------------------------------------------- moduli curves


@dataclass
class EndpointRecord:
    parameter: float
    intermediate: CriticalPoint
    upper: CriticalPoint
    lower: CriticalPoint
    first: FlowLineClass  # class in M(p, r)
    second: FlowLineClass  # class in M(r, q)
    boundary_sign: int
    predicted_sign: int
    shadowed: bool

    @property
    def weight(self) -> int:
        sign = (-1) ** (self.upper.index - self.intermediate.index)
        return sign * self.first.sign * self.second.sign


@dataclass
class CurveComponent:
    start: float
    end: float  # parameters on the descending circle, end > start
    points: List[ManifoldPoint]
    gaps: List[float]
    endpoints: List[EndpointRecord]
    orientation: int

    @property
    def weighted_sum(self) -> int:
        return int(sum(e.weight for e in self.endpoints))


@dataclass
class ModuliCurve:
    source: CriticalPoint
    target: CriticalPoint
    level: float
    components: List[CurveComponent] = field(default_factory=list)

    @property
    def endpoints(self) -> List[EndpointRecord]:
        return [e for c in self.components for e in c.endpoints]

    @property
    def weighted_sum(self) -> int:
        return int(sum(c.weighted_sum for c in self.components))

    @property
    def consistent(self) -> bool:
        return all(
            len(c.endpoints) in (0, 2)
            and c.weighted_sum == 0
            and all(e.boundary_sign == e.predicted_sign and e.shadowed for e in c.endpoints)
            for c in self.components
        )


def moduli_curve(engine: ModuliEngine, p: CriticalPoint, q: CriticalPoint,
                 level: Optional[float] = None) -> ModuliCurve:
    if p.index - q.index != 2:
        raise PreconditionError(f"index difference of ({p.label}, {q.label}) is not 2")
    if p.index != 2:
        raise NotImplementedError("moduli curves are traced for source index 2 only")
    flow, s = engine.flow, engine.settings
    a = default_level(flow.criticals, p, q) if level is None else level
    key = (p.label, q.label, float(a))
    if key in engine._curve_cache:
        return engine._curve_cache[key]
    mids = [r for r in flow.criticals if r.index == p.index - 1 and q.value < r.value < p.value]

    breaks = []  # (parameter, class in M(p, r))
    for r in mids:
        for cls in engine.orbits(p, r):
            if orientation_sign(engine, cls) is None:
                raise ConsistencyError("unset sign")
            breaks.append((cls.parameter, cls))
    breaks.sort(key=lambda b: b[0])
    curve = ModuliCurve(p, q, a)

    if not breaks:
        tr = engine.launch(p, engine.direction_at(p, 0.0))
        if tr.status == "converged" and tr.critical is q:
            pts, gaps = _polyline(engine, p, 0.0, 2 * np.pi, a)
            curve.components.append(CurveComponent(0.0, 2 * np.pi, pts, gaps, [], _arc_orientation(engine, p, q, np.pi, a)))
        engine._curve_cache[key] = curve
        return curve

    for i, (t0, c0) in enumerate(breaks):
        t1, c1 = breaks[(i + 1) % len(breaks)]
        if i + 1 == len(breaks):
            t1 += 2 * np.pi
        mid = 0.5 * (t0 + t1)
        tr = engine.launch(p, engine.direction_at(p, mid))
        if not (tr.status == "converged" and tr.critical is q):
            continue
        sigma = _arc_orientation(engine, p, q, mid, a)
        pts, gaps = _polyline(engine, p, t0, t1, a)
        ends = [
            _endpoint(engine, p, q, t0, c0, +1, -sigma),
            _endpoint(engine, p, q, t1, c1, -1, +sigma),
        ]
        curve.components.append(CurveComponent(t0, t1, pts, gaps, ends, sigma))
    engine._curve_cache[key] = curve
    return curve


def _polyline(engine, p, t0, t1, level):
    step = engine.settings.curve_step
    m = max(2, int(np.ceil((t1 - t0) / step)))
    pts, gaps = [], []
    for t in t0 + (t1 - t0) * (np.arange(m) + 0.5) / m:
        x0 = launch_point(engine.flow, p, engine.direction_at(p, t), engine.settings.launch_radius)
        tr = engine.flow.integrate(x0, level=level)
        if tr.status == "reached-level":
            pts.append(tr.end)
        else:
            gaps.append(float(t))
    return pts, gaps


def _arc_orientation(engine, p, q, theta, level) -> int:
    """Sign comparing the increasing-parameter direction of the arc with the orientation
    of M(p, q) (descending-sphere orientation times the point orientation of q)."""
    flow = engine.flow
    d = engine.direction_at(p, theta)
    x0 = launch_point(flow, p, d, engine.settings.launch_radius)
    tr = flow.integrate(x0, level=level, variational=True)
    F = tr.variational @ p.orientation_frame
    x = tr.end
    c, *_ = np.linalg.lstsq(F, -flow.func.gradient(flow.atlas, x), rcond=None)
    V = p.v_minus
    tangent = -np.sin(theta) * V[:, 0] + np.cos(theta) * V[:, 1]
    # tangent of the parameter circle in orientation-frame coordinates
    G = flow.atlas.metric_tensor(p.position)
    b = p.orientation_frame.T @ G @ tangent
    det = np.linalg.det(np.column_stack([c, b]))
    return (1 if det > 0 else -1) * q.orientation


def _endpoint(engine, p, q, t_end, cls_pr, inward, boundary_sign) -> EndpointRecord:
    """Broken pair at a component end: class in M(p, r) and the class in M(r, q) that the
    nearby unbroken lines shadow."""
    flow = engine.flow
    r = cls_pr.target
    t_in = t_end + inward * engine.settings.end_offset
    tr = engine.launch(p, engine.direction_at(p, t_in))
    side = engine.side(tr, r)
    dec = decompose_to_broken(flow, tr, engine.side_radius)
    shadowed = r in dec.skeleton and tr.status == "converged" and tr.critical is q
    if side is None or side == 0.0:
        raise ConsistencyError(f"line near the end at {t_end:.6f} does not pass {r.label}")
    G = flow.atlas.metric_tensor(r.position)
    match = None
    for cls in engine.orbits(r, q):
        if np.sign(r.v_minus[:, 0] @ G @ cls.direction) == np.sign(side):
            match = cls
    if match is None:
        raise ConsistencyError(f"no class of M({r.label}, {q.label}) on the exit side of the end")
    if match.sign is None:
        orientation_sign(engine, match)
    predicted = (-1) ** (p.index - r.index) * cls_pr.sign * match.sign
    return EndpointRecord(t_end % (2 * np.pi), r, p, q, cls_pr, match, boundary_sign, predicted, shadowed)
