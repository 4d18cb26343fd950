"""Explicit atlases with Riemannian metric fields and the built-in example manifolds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .errors import DescriptorError, DomainError

TWO_PI = 2.0 * np.pi
BOUNDARY_TOL = 1e-9
CORE_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    chart: str
    coords: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coords, dtype=float).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    @property
    def dim(self) -> int:
        return self.coords.size

    def __repr__(self):
        c = ", ".join(f"{x:.10g}" for x in self.coords)
        return f"ManifoldPoint({self.chart!r}, [{c}])"


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: ManifoldPoint
    components: np.ndarray

    def __post_init__(self):
        arr = np.array(self.components, dtype=float).reshape(-1)
        if arr.size != self.base.dim:
            raise DescriptorError(
                f"tangent vector has {arr.size} components, chart dimension is {self.base.dim}"
            )
        object.__setattr__(self, "components", arr)


MetricFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Chart:
    """Open coordinate box (optionally intersected with a ball) carrying a metric field.

    ``metric_derivative(x)[k]`` is the partial derivative of the metric
    coefficient array with respect to the k-th coordinate.
    """

    id: str
    lower: np.ndarray
    upper: np.ndarray
    periodic: Tuple[bool, ...]
    metric: MetricFn
    metric_derivative: Callable[[np.ndarray], np.ndarray]
    ball_radius: Optional[float] = None
    metric_inverse: Optional[MetricFn] = None

    def inverse_metric(self, x) -> np.ndarray:
        if self.metric_inverse is not None:
            return self.metric_inverse(x)
        return np.linalg.inv(self.metric(x))

    @property
    def dim(self) -> int:
        return len(self.periodic)

    def canonical(self, x) -> np.ndarray:
        x = np.array(x, dtype=float).reshape(-1)
        for i, per in enumerate(self.periodic):
            if per:
                x[i] = np.mod(x[i], TWO_PI)
                if x[i] >= TWO_PI:
                    x[i] = 0.0
        return x

    def contains(self, x, tol: float = BOUNDARY_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,) or not np.all(np.isfinite(x)):
            return False
        for i, per in enumerate(self.periodic):
            if not per and not (self.lower[i] - tol < x[i] < self.upper[i] + tol):
                return False
        if self.ball_radius is not None and np.linalg.norm(x) >= self.ball_radius + tol:
            return False
        return True

    def depth(self, x) -> float:
        """Relative clearance from the chart boundary: 1 at the center, 0 on the boundary."""
        x = np.asarray(x, dtype=float)
        d = 1.0
        for i, per in enumerate(self.periodic):
            if per:
                continue
            half = 0.5 * (self.upper[i] - self.lower[i])
            mid = 0.5 * (self.upper[i] + self.lower[i])
            d = min(d, 1.0 - abs(x[i] - mid) / half)
        if self.ball_radius is not None:
            d = min(d, 1.0 - np.linalg.norm(x) / self.ball_radius)
        return d

    def in_core(self, x) -> bool:
        return self.depth(x) > CORE_FRACTION

    def sample(self, rng: np.random.Generator, margin: float = CORE_FRACTION) -> np.ndarray:
        """Uniform random point with clearance at least ``margin`` from the boundary."""
        while True:
            u = rng.uniform(size=self.dim)
            x = np.empty(self.dim)
            for i, per in enumerate(self.periodic):
                if per:
                    x[i] = TWO_PI * u[i]
                else:
                    half = 0.5 * (self.upper[i] - self.lower[i]) * (1.0 - margin)
                    mid = 0.5 * (self.upper[i] + self.lower[i])
                    x[i] = mid + (2.0 * u[i] - 1.0) * half
            if self.depth(x) >= margin:
                return x


@dataclass(frozen=True, eq=False)
class Transition:
    source: str
    target: str
    map: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    overlap: Callable[[np.ndarray], bool]


@dataclass(frozen=True, eq=False)
class AtlasDescriptor:
    name: str
    charts: Dict[str, Chart]
    transitions: Dict[Tuple[str, str], Transition] = field(default_factory=dict)
    params: Dict[str, object] = field(default_factory=dict)
    embedding: Optional[Callable[[str, np.ndarray], np.ndarray]] = None

    @property
    def dim(self) -> int:
        return next(iter(self.charts.values())).dim

    def chart(self, chart_id: str) -> Chart:
        try:
            return self.charts[chart_id]
        except KeyError:
            raise DescriptorError(f"unknown chart {chart_id!r} in atlas {self.name!r}") from None

    def point(self, chart_id: str, coords) -> ManifoldPoint:
        ch = self.chart(chart_id)
        x = ch.canonical(coords)
        if not ch.contains(x):
            raise DomainError(f"coordinates {x} lie outside chart {chart_id!r}")
        return ManifoldPoint(chart_id, x)

    def metric_tensor(self, point: ManifoldPoint) -> np.ndarray:
        return self.chart(point.chart).metric(point.coords)

    def inverse_metric(self, point: ManifoldPoint) -> np.ndarray:
        return self.chart(point.chart).inverse_metric(point.coords)

    def transition(self, point: ManifoldPoint, target: str) -> ManifoldPoint:
        src = self.chart(point.chart)
        tgt = self.chart(target)
        if point.chart == target:
            return ManifoldPoint(target, src.canonical(point.coords))
        tr = self.transitions.get((point.chart, target))
        if tr is None or not tr.overlap(point.coords):
            raise DomainError(f"point {point} is not in the overlap with chart {target!r}")
        y = tgt.canonical(tr.map(point.coords))
        if not tgt.contains(y):
            raise DomainError(f"image of {point} falls outside chart {target!r}")
        return ManifoldPoint(target, y)

    def transition_jacobian(self, point: ManifoldPoint, target: str) -> np.ndarray:
        if point.chart == target:
            return np.eye(point.dim)
        tr = self.transitions.get((point.chart, target))
        if tr is None or not tr.overlap(point.coords):
            raise DomainError(f"point {point} is not in the overlap with chart {target!r}")
        return tr.jacobian(point.coords)

    def representations(self, point: ManifoldPoint):
        """All charts expressing ``point``, starting with its own chart."""
        out = [point]
        for cid in self.charts:
            if cid == point.chart:
                continue
            try:
                out.append(self.transition(point, cid))
            except DomainError:
                pass
        return out

    def best_chart(self, point: ManifoldPoint) -> ManifoldPoint:
        """Re-express ``point`` in the chart where it sits deepest (ties keep the chart order)."""
        best, best_depth = point, self.chart(point.chart).depth(point.coords)
        for rep in self.representations(point)[1:]:
            d = self.chart(rep.chart).depth(rep.coords)
            if d > best_depth + 1e-12:
                best, best_depth = rep, d
        return best

    def displacement(self, a: ManifoldPoint, b: ManifoldPoint) -> np.ndarray:
        """Coordinate vector from ``a`` to ``b`` in the chart of ``a`` (shortest periodic lift)."""
        if b.chart != a.chart:
            b = self.transition(b, a.chart)
        d = b.coords - a.coords
        for i, per in enumerate(self.chart(a.chart).periodic):
            if per:
                d[i] = (d[i] + np.pi) % TWO_PI - np.pi
        return d

    def distance(self, a: ManifoldPoint, b: ManifoldPoint) -> float:
        """Metric length of the coordinate displacement; accurate for nearby points."""
        try:
            d = self.displacement(a, b)
            base = a
        except DomainError:
            try:
                d = self.displacement(b, a)
                base = b
            except DomainError:
                return float("inf")
        g = self.metric_tensor(base)
        return float(np.sqrt(max(d @ g @ d, 0.0)))

    def ambient(self, point: ManifoldPoint) -> np.ndarray:
        """Chart-independent coordinates, used for comparing points across charts."""
        if self.embedding is None:
            return self.chart(point.chart).canonical(point.coords)
        return self.embedding(point.chart, point.coords)


# ---------------------------------------------------------------- built-ins


def _constant_metric(diag):
    d = np.asarray(diag, dtype=float)
    g = np.diag(d)
    ginv = np.diag(1.0 / d)
    n = g.shape[0]
    zero = np.zeros((n, n, n))
    return (lambda x: g.copy()), (lambda x: zero.copy()), (lambda x: ginv.copy())


def flat_torus(params=None) -> AtlasDescriptor:
    metric, dmetric, inverse = _constant_metric([1.0, 1.0])
    ch = Chart(
        "T",
        np.zeros(2),
        np.full(2, TWO_PI),
        (True, True),
        metric,
        dmetric,
        metric_inverse=inverse,
    )
    return AtlasDescriptor("flat-torus", {"T": ch}, {}, dict(params or {}))


def _stereo_metric(u):
    s = float(u @ u)
    return 4.0 / (1.0 + s) ** 2 * np.eye(2)


def _stereo_metric_inverse(u):
    s = float(u @ u)
    return (1.0 + s) ** 2 / 4.0 * np.eye(2)


def _stereo_metric_derivative(u):
    s = float(u @ u)
    c = -16.0 / (1.0 + s) ** 3
    return np.stack([c * u[k] * np.eye(2) for k in range(2)])


def _inversion(u):
    return u / float(u @ u)


def _inversion_jacobian(u):
    s = float(u @ u)
    return (np.eye(2) * s - 2.0 * np.outer(u, u)) / s**2


def stereo_embedding(chart_id: str, u: np.ndarray) -> np.ndarray:
    """Point of the unit sphere in R^3 for stereographic coordinates ``u``.

    Chart ``north`` projects from the north pole, chart ``south`` from the south pole.
    """
    u = np.asarray(u, dtype=float)
    w = 1.0 / (1.0 + float(u @ u))
    sigma = 1.0 if chart_id == "north" else -1.0
    return np.array([2.0 * u[0] * w, 2.0 * u[1] * w, sigma * (1.0 - 2.0 * w)])


def ellipsoid_sphere(params=None) -> AtlasDescriptor:
    half = float((params or {}).get("box", 3.0))
    lower, upper = np.full(2, -half), np.full(2, half)
    charts = {
        cid: Chart(
            cid, lower, upper, (False, False), _stereo_metric, _stereo_metric_derivative,
            metric_inverse=_stereo_metric_inverse,
        )
        for cid in ("north", "south")
    }

    def overlap(u):
        s = float(u @ u)
        if s < 1e-300:
            return False
        v = u / s
        return bool(np.all(np.abs(v) < half + BOUNDARY_TOL))

    transitions = {
        (a, b): Transition(a, b, _inversion, _inversion_jacobian, overlap)
        for a, b in (("north", "south"), ("south", "north"))
    }
    return AtlasDescriptor(
        "ellipsoid-sphere", charts, transitions, dict(params or {}), embedding=stereo_embedding
    )


def morse_local_model(params=None) -> AtlasDescriptor:
    params = dict(params or {})
    dm = int(params.setdefault("dim_minus", 1))
    dp = int(params.setdefault("dim_plus", 1))
    ext = float(params.setdefault("extent", 1e3))
    n = dm + dp
    if n < 1 or dm < 0 or dp < 0:
        raise DescriptorError("local model needs non-negative dimensions summing to at least 1")
    metric, dmetric, inverse = _constant_metric(np.ones(n))
    ch = Chart(
        "B", np.full(n, -ext), np.full(n, ext), (False,) * n, metric, dmetric, metric_inverse=inverse
    )
    return AtlasDescriptor("morse-local-model", {"B": ch}, {}, params)


CP2_METRIC = (1.0, 0.5, 0.25, 0.25)


def cp2_chart(params=None) -> AtlasDescriptor:
    metric, dmetric, inverse = _constant_metric(CP2_METRIC)
    ch = Chart(
        "U", np.full(4, -2.0), np.full(4, 2.0), (False,) * 4, metric, dmetric,
        ball_radius=2.0, metric_inverse=inverse,
    )
    return AtlasDescriptor("cp2-chart", {"U": ch}, {}, dict(params or {}))


BUILTINS = {
    "flat-torus": flat_torus,
    "ellipsoid-sphere": ellipsoid_sphere,
    "morse-local-model": morse_local_model,
    "cp2-chart": cp2_chart,
}


def builtin(name: str, params=None) -> AtlasDescriptor:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise DescriptorError(
            f"unknown built-in manifold {name!r}; choose one of {sorted(BUILTINS)}"
        ) from None
    return factory(params)
