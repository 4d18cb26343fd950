"""Morse functions, critical points, Morse-chart data and the metric that turns a
gradient-like field into a gradient."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.linalg import cholesky, eigh, solve_triangular

from .errors import (
    ConsistencyError,
    DegenerateCriticalPointError,
    DescriptorError,
    DomainError,
    PreconditionError,
)
from .manifold import AtlasDescriptor, ManifoldPoint, TWO_PI, stereo_embedding

log = logging.getLogger(__name__)

EIGEN_GAP = 1e-6
DEDUP_RADIUS = 1e-6
DEFECT_WARN = 1e-3


@dataclass(frozen=True, eq=False)
class MorseFunctionDescriptor:
    """Closed-form f, differential and coordinate Hessian, one triple per chart."""

    name: str
    value: Dict[str, Callable[[np.ndarray], float]]
    differential: Dict[str, Callable[[np.ndarray], np.ndarray]]
    hessian: Dict[str, Callable[[np.ndarray], np.ndarray]]
    landmarks: Dict[str, ManifoldPoint] = field(default_factory=dict)
    params: Dict[str, object] = field(default_factory=dict)

    def _get(self, table, chart):
        try:
            return table[chart]
        except KeyError:
            raise DescriptorError(f"function {self.name!r} has no formula on chart {chart!r}") from None

    def f(self, point: ManifoldPoint) -> float:
        return float(self._get(self.value, point.chart)(point.coords))

    def df(self, point: ManifoldPoint) -> np.ndarray:
        return np.asarray(self._get(self.differential, point.chart)(point.coords), dtype=float)

    def hess(self, point: ManifoldPoint) -> np.ndarray:
        return np.asarray(self._get(self.hessian, point.chart)(point.coords), dtype=float)

    def gradient(self, atlas: AtlasDescriptor, point: ManifoldPoint) -> np.ndarray:
        return atlas.inverse_metric(point) @ self.df(point)

    def gradient_norm(self, atlas: AtlasDescriptor, point: ManifoldPoint) -> float:
        df = self.df(point)
        return float(np.sqrt(max(df @ atlas.inverse_metric(point) @ df, 0.0)))


# ------------------------------------------------------------ built-in functions


def torus_function(params=None) -> MorseFunctionDescriptor:
    """f = a cos(t1) + b cos(t2) on the flat torus (a = b = 1 by default)."""
    params = dict(params or {})
    a = float(params.setdefault("a", 1.0))
    b = float(params.setdefault("b", 1.0))
    if a <= 0 or b <= 0:
        raise DescriptorError("torus amplitudes must be positive")

    def value(x):
        return a * np.cos(x[0]) + b * np.cos(x[1])

    def differential(x):
        return np.array([-a * np.sin(x[0]), -b * np.sin(x[1])])

    def hessian(x):
        return np.diag([-a * np.cos(x[0]), -b * np.cos(x[1])])

    pi = np.pi
    marks = {
        "p": ManifoldPoint("T", [0.0, 0.0]),
        "r": ManifoldPoint("T", [pi, 0.0]),
        "s": ManifoldPoint("T", [0.0, pi]),
        "q": ManifoldPoint("T", [pi, pi]),
    }
    return MorseFunctionDescriptor(
        "torus-cosine", {"T": value}, {"T": differential}, {"T": hessian}, marks, params
    )


def _stereo_derivatives(u, sigma):
    """Embedding X(u), its Jacobian dX[i, j] and second derivatives ddX[i, j, k]."""
    s = float(u @ u)
    w = 1.0 / (1.0 + s)
    dw = -2.0 * u * w**2
    ddw = -2.0 * w**2 * np.eye(2) + 8.0 * w**3 * np.outer(u, u)
    X = np.array([2 * u[0] * w, 2 * u[1] * w, sigma * (1 - 2 * w)])
    dX = np.zeros((3, 2))
    ddX = np.zeros((3, 2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1.0
        dX[i] = 2 * e * w + 2 * u[i] * dw
        ddX[i] = 2 * (np.outer(e, dw) + np.outer(dw, e)) + 2 * u[i] * ddw
    dX[2] = -2 * sigma * dw
    ddX[2] = -2 * sigma * ddw
    return X, dX, ddX


def sphere_quadratic(params=None) -> MorseFunctionDescriptor:
    """f = c1 x^2 + c2 y^2 + c3 z^2 restricted to the unit sphere, c = (1, 2, 3) by default."""
    params = dict(params or {})
    c = np.asarray(params.setdefault("coefficients", [1.0, 2.0, 3.0]), dtype=float)
    if c.shape != (3,) or len(set(c.tolist())) != 3:
        raise DescriptorError("sphere coefficients must be three distinct numbers")

    tables = ({}, {}, {})
    for cid, sigma in (("north", 1.0), ("south", -1.0)):

        def value(u, sigma=sigma):
            X = stereo_embedding("north" if sigma > 0 else "south", u)
            return float(c @ X**2)

        def differential(u, sigma=sigma):
            u = np.asarray(u, dtype=float)
            w = 1.0 / (1.0 + u[0] * u[0] + u[1] * u[1])
            x1, x2, x3 = 2 * u[0] * w, 2 * u[1] * w, sigma * (1 - 2 * w)
            k = 8.0 * w * w * (sigma * c[2] * x3 - c[0] * x1 * u[0] - c[1] * x2 * u[1])
            return np.array([4 * w * c[0] * x1 + k * u[0], 4 * w * c[1] * x2 + k * u[1]])

        def hessian(u, sigma=sigma):
            X, dX, ddX = _stereo_derivatives(np.asarray(u, dtype=float), sigma)
            H = 2.0 * (dX.T * c) @ dX + 2.0 * np.einsum("i,ijk->jk", c * X, ddX)
            return 0.5 * (H + H.T)

        tables[0][cid] = value
        tables[1][cid] = differential
        tables[2][cid] = hessian

    marks = {
        "+x": ManifoldPoint("north", [1.0, 0.0]),
        "-x": ManifoldPoint("north", [-1.0, 0.0]),
        "+y": ManifoldPoint("north", [0.0, 1.0]),
        "-y": ManifoldPoint("north", [0.0, -1.0]),
        "+z": ManifoldPoint("south", [0.0, 0.0]),
        "-z": ManifoldPoint("north", [0.0, 0.0]),
    }
    return MorseFunctionDescriptor("sphere-quadratic", *tables, marks, params)


def local_model_function(params=None) -> MorseFunctionDescriptor:
    """f(v1, v2) = c - |v1|^2 / 2 + |v2|^2 / 2 on B = R^{dim_minus} x R^{dim_plus}."""
    params = dict(params or {})
    dm = int(params.setdefault("dim_minus", 1))
    dp = int(params.setdefault("dim_plus", 1))
    c0 = float(params.setdefault("value", 0.0))
    sign = np.concatenate([-np.ones(dm), np.ones(dp)])

    def value(x):
        return c0 + 0.5 * float(sign @ (np.asarray(x) ** 2))

    def differential(x):
        return sign * np.asarray(x, dtype=float)

    def hessian(x):
        return np.diag(sign)

    marks = {"o": ManifoldPoint("B", np.zeros(dm + dp))}
    return MorseFunctionDescriptor(
        "local-quadratic", {"B": value}, {"B": differential}, {"B": hessian}, marks, params
    )


def cp2_function(params=None) -> MorseFunctionDescriptor:
    """f = (-v1^2 - v2^2 + v3^2 + v4^2) / 2 on the chart U; with metric diag(1, 1/2, 1/4, 1/4)
    its negative gradient flow has rates (1, 2, -4, -4)."""
    sign = np.array([-1.0, -1.0, 1.0, 1.0])

    def value(x):
        return 0.5 * float(sign @ (np.asarray(x) ** 2))

    def differential(x):
        return sign * np.asarray(x, dtype=float)

    def hessian(x):
        return np.diag(sign)

    marks = {"r": ManifoldPoint("U", np.zeros(4))}
    return MorseFunctionDescriptor(
        "cp2-local", {"U": value}, {"U": differential}, {"U": hessian}, marks, dict(params or {})
    )


FUNCTIONS = {
    "flat-torus": torus_function,
    "ellipsoid-sphere": sphere_quadratic,
    "morse-local-model": local_model_function,
    "cp2-chart": cp2_function,
}


def builtin_function(manifold_name: str, params=None) -> MorseFunctionDescriptor:
    try:
        return FUNCTIONS[manifold_name](params)
    except KeyError:
        raise DescriptorError(f"no built-in function for manifold {manifold_name!r}") from None


# ------------------------------------------------------------ critical points


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    """Nondegenerate critical point with its metric eigenframe.

    ``eigenvectors`` are orthonormal for the metric at the point, sorted by increasing
    eigenvalue, so the first ``index`` columns span the negative space.  ``orientation``
    multiplies the first column of the negative frame (for index 0 it is the sign of
    the point itself).
    """

    label: str
    position: ManifoldPoint
    value: float
    index: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    orientation: int = 1

    @property
    def v_minus(self) -> np.ndarray:
        return self.eigenvectors[:, : self.index]

    @property
    def v_plus(self) -> np.ndarray:
        return self.eigenvectors[:, self.index :]

    @property
    def orientation_frame(self) -> np.ndarray:
        frame = self.v_minus.copy()
        if self.index > 0:
            frame[:, 0] *= self.orientation
        return frame

    def with_orientation(self, sign: int) -> "CriticalPoint":
        if sign not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        return replace(self, orientation=sign)

    def flipped(self) -> "CriticalPoint":
        return self.with_orientation(-self.orientation)

    def __repr__(self):
        return f"CriticalPoint({self.label!r}, index={self.index}, value={self.value:.10g}, at={self.position})"


def _canonical_signs(vecs: np.ndarray) -> np.ndarray:
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        k = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[k, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vecs


def classify(
    atlas: AtlasDescriptor,
    func: MorseFunctionDescriptor,
    point: ManifoldPoint,
    label: str = "",
    tol: float = 1e-8,
) -> CriticalPoint:
    """Build the CriticalPoint record at ``point`` (which must be critical)."""
    gnorm = func.gradient_norm(atlas, point)
    if gnorm >= tol:
        raise PreconditionError(f"gradient norm {gnorm:.3e} at {point} is not below {tol}")
    H = func.hess(point)
    G = atlas.metric_tensor(point)
    lam, vec = eigh(0.5 * (H + H.T), G)
    if np.any(np.abs(lam) < EIGEN_GAP):
        raise DegenerateCriticalPointError(
            f"critical point at {point} has eigenvalue {lam[np.argmin(np.abs(lam))]:.3e} inside the gap"
        )
    vec = _canonical_signs(vec)
    return CriticalPoint(
        label, point, func.f(point), int(np.sum(lam < 0)), lam, vec, 1
    )


def _newton(atlas, func, chart_id, x0, max_iter=60):
    ch = atlas.chart(chart_id)
    widths = [np.pi if per else 0.5 * (ch.upper[i] - ch.lower[i]) for i, per in enumerate(ch.periodic)]
    max_step = 0.25 * min(widths)
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        g = func.differential[chart_id](x)
        if not np.all(np.isfinite(g)):
            return None
        if np.linalg.norm(g) < 1e-15:
            break
        H = func.hessian[chart_id](x)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        # damp huge steps so seeds do not jump across the whole chart
        size = np.linalg.norm(step)
        if size > max_step:
            step *= max_step / size
        x = ch.canonical(x - step)
        if not ch.contains(x, tol=0.0):
            return None
        if size < 1e-15:
            break
    return x


def _seed_grid(chart, density):
    # keep the seed count near density**2 in every dimension
    n = chart.dim
    if n > 2:
        density = max(3, int(round(density ** (2.0 / n))))
    axes = []
    for i, per in enumerate(chart.periodic):
        if per:
            axes.append((np.arange(density) + 0.5) * TWO_PI / density)
        else:
            lo, hi = chart.lower[i], chart.upper[i]
            axes.append(lo + (np.arange(density) + 0.5) * (hi - lo) / density)
    for combo in itertools.product(*axes):
        x = np.array(combo)
        if chart.contains(x):
            yield x


def find_critical_points(
    atlas: AtlasDescriptor,
    func: MorseFunctionDescriptor,
    density: int = 20,
    tol: float = 1e-8,
) -> List[CriticalPoint]:
    """Newton's method on df from a uniform seed grid in every chart, deduplicated."""
    if tol <= 0:
        raise PreconditionError("tolerance must be positive")
    found: List[ManifoldPoint] = []
    for chart_id, ch in atlas.charts.items():
        for seed in _seed_grid(ch, density):
            x = _newton(atlas, func, chart_id, seed)
            if x is None:
                continue
            pt = ManifoldPoint(chart_id, x)
            if func.gradient_norm(atlas, pt) >= tol:
                continue
            pt = atlas.best_chart(pt)
            if any(atlas.distance(pt, other) < DEDUP_RADIUS for other in found):
                continue
            found.append(pt)
    found.sort(key=lambda p: (p.chart, tuple(np.round(p.coords, 9))))
    for a, b in itertools.combinations(found, 2):
        if atlas.distance(a, b) < DEDUP_RADIUS:
            raise ConsistencyError(f"duplicate critical points {a} and {b} survived deduplication")

    crits = []
    used = set()
    for i, pt in enumerate(found):
        label = None
        for name, mark in func.landmarks.items():
            if name not in used and atlas.distance(pt, mark) < 1e-6:
                label = name
                break
        if label is None:
            label = f"c{i}"
        used.add(label)
        crits.append(classify(atlas, func, pt, label, tol))
    return crits


def by_label(criticals, label: str) -> CriticalPoint:
    for c in criticals:
        if c.label == label:
            return c
    raise KeyError(label)


def apply_orientation_overrides(criticals, overrides: Optional[Dict[str, int]]):
    if not overrides:
        return list(criticals)
    unknown = set(overrides) - {c.label for c in criticals}
    if unknown:
        raise DescriptorError(f"orientation override for unknown critical points {sorted(unknown)}")
    return [c.with_orientation(int(overrides.get(c.label, c.orientation))) for c in criticals]


# ------------------------------------------------------------ Morse charts


@dataclass(frozen=True, eq=False)
class MorseChartReport:
    """Affine chart h(v) = p + L v with v = (v1, v2) in B(eps) = {|v1|^2 < 2 eps, |v2|^2 < 2 eps}.

    ``function_defect`` compares f(h(v)) with f(p) - |v1|^2/2 + |v2|^2/2, ``metric_defect``
    compares the pulled-back metric with the identity; ``defect`` is their sum.
    """

    critical: CriticalPoint
    epsilon: float
    linear_map: np.ndarray
    function_defect: float
    metric_defect: float

    @property
    def defect(self) -> float:
        return self.function_defect + self.metric_defect

    def h(self, v) -> np.ndarray:
        return self.critical.position.coords + self.linear_map @ np.asarray(v, dtype=float)

    def h_inverse(self, x) -> np.ndarray:
        return np.linalg.solve(self.linear_map, np.asarray(x, dtype=float) - self.critical.position.coords)


def _ball_samples(rng, dim, count, radius):
    if dim == 0:
        return np.zeros((count, 0))
    d = rng.normal(size=(count, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(count, 1)) ** (1.0 / dim)
    r[: count // 4] = radius  # include the closure, where defects peak
    return d * r


def morse_chart(
    atlas: AtlasDescriptor,
    func: MorseFunctionDescriptor,
    crit: CriticalPoint,
    epsilon: float,
    samples: int = 2000,
    seed: int = 0,
) -> MorseChartReport:
    if epsilon <= 0:
        raise PreconditionError("epsilon must be positive")
    lam = crit.eigenvalues
    L = crit.eigenvectors / np.sqrt(np.abs(lam))
    k = crit.index
    n = L.shape[0]
    rad = np.sqrt(2.0 * epsilon)
    ch = atlas.chart(crit.position.chart)
    p = crit.position.coords
    Lm, Lp = L[:, :k], L[:, k:]

    # largest coordinate excursion of h over the closure of B(eps)
    reach = rad * (np.linalg.norm(Lm, axis=1) + np.linalg.norm(Lp, axis=1))
    for i, per in enumerate(ch.periodic):
        if per:
            if reach[i] >= np.pi:
                raise DomainError(f"B({epsilon}) wraps around periodic coordinate {i}")
        elif p[i] - reach[i] < ch.lower[i] - 1e-12 or p[i] + reach[i] > ch.upper[i] + 1e-12:
            raise DomainError(f"B({epsilon}) at {crit.label} leaves chart {ch.id!r}")
    if ch.ball_radius is not None:
        nm = np.linalg.norm(Lm, 2) if k else 0.0
        npl = np.linalg.norm(Lp, 2) if k < n else 0.0
        if k and k < n and np.linalg.norm(Lm.T @ Lp) < 1e-12:
            span = rad * np.hypot(nm, npl)
        else:
            span = rad * (nm + npl)
        if np.linalg.norm(p) + span > ch.ball_radius + 1e-12:
            raise DomainError(f"B({epsilon}) at {crit.label} leaves the chart ball")

    rng = np.random.default_rng(seed)
    v = np.hstack([_ball_samples(rng, k, samples, rad), _ball_samples(rng, n - k, samples, rad)])
    v = np.vstack([np.zeros((1, n)), v])
    fdef = 0.0
    mdef = 0.0
    sign = np.concatenate([-np.ones(k), np.ones(n - k)])
    for row in v:
        x = ch.canonical(p + L @ row)
        pt = ManifoldPoint(ch.id, x)
        model = crit.value + 0.5 * float(sign @ row**2)
        fdef = max(fdef, abs(func.f(pt) - model))
        pulled = L.T @ atlas.metric_tensor(pt) @ L
        mdef = max(mdef, float(np.max(np.abs(pulled - np.eye(n)))))
    report = MorseChartReport(crit, epsilon, L, fdef, mdef)
    if report.defect > DEFECT_WARN:
        log.warning(
            "local-triviality defect %.3e at %s (function %.3e, metric %.3e)",
            report.defect, crit.label, fdef, mdef,
        )
    return report


# ------------------------------------------------------------ gradient-like fields


def _a2(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Unit-vector operator whose block on span(e1, e2) is [[c, s], [s, 1/c]] in the
    basis (e1, f), c = <e1, e2>.  Its determinant there is c^2, so the smallest
    eigenvalue is about c^3 and nearly orthogonal pairs lose definiteness in floats."""
    c = float(e1 @ e2)
    n = e1.size
    a = -(1.0 + c + c * c) / (1.0 + c)
    b = c / (1.0 + c)
    d = 1.0 / (c * (1.0 + c))
    return (
        np.eye(n)
        + a * np.outer(e1, e1)
        + b * (np.outer(e1, e2) + np.outer(e2, e1))
        + d * np.outer(e2, e2)
    )


def _a2_balanced(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Same constraints with the block [[c, s], [s, (1 + s^2)/c]] of determinant 1:
    eigenvalues near c/2 and 2/c, within a factor 4 of the best possible conditioning
    for A e1 = e2.  Written with g = e2 - c e1 = s f so that c -> 1 is regular."""
    c = float(e1 @ e2)
    n = e1.size
    g = e2 - c * e1
    k = (2.0 + c) / (c * (1.0 + c))
    return (
        np.eye(n)
        + (c - 1.0) * np.outer(e1, e1)
        + np.outer(e1, g) + np.outer(g, e1)
        + k * np.outer(g, g)
    )


FORMS = {"balanced": _a2_balanced, "classic": _a2}


def metric_operator(v1, v2, metric=None, form: str = "balanced") -> np.ndarray:
    """Operator A, symmetric and positive for ``metric``, with A v1 = v2.

    Requires <v1, v2> > 0.  A(v, v) is exactly the identity.  ``form`` picks the
    block on span(v1, v2): "classic" is the classical [[c, s], [s, 1/c]], "balanced"
    the better conditioned determinant-one block.
    """
    if form not in FORMS:
        raise PreconditionError(f"unknown operator form {form!r}")
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    n = v1.size
    if np.array_equal(v1, v2):
        return np.eye(n)
    G = np.eye(n) if metric is None else np.asarray(metric, dtype=float)
    if float(v1 @ G @ v2) <= 0.0:
        raise PreconditionError("the field is not gradient-like here: <X, grad f> <= 0")
    C = cholesky(G, lower=True)  # G = C C^T, y = C^T x is an orthonormal coordinate
    y1, y2 = C.T @ v1, C.T @ v2
    n1, n2 = np.linalg.norm(y1), np.linalg.norm(y2)
    A_hat = (n2 / n1) * FORMS[form](y1 / n1, y2 / n2)
    A_hat = 0.5 * (A_hat + A_hat.T)
    if metric is None:
        return A_hat
    # back to x-coordinates: A = C^{-T} A_hat C^T
    return solve_triangular(C.T, A_hat @ C.T, lower=False)


@dataclass(frozen=True, eq=False)
class MetricOperatorField:
    """Pointwise operator A(X, grad f) and the metric <A., .> whose gradient of f is X."""

    atlas: AtlasDescriptor
    function: MorseFunctionDescriptor
    field: Callable[[ManifoldPoint], np.ndarray]

    def operator(self, point: ManifoldPoint) -> np.ndarray:
        return gradient_like_to_metric(self.atlas, self.function, self.field, point)

    def metric(self, point: ManifoldPoint) -> np.ndarray:
        G = self.atlas.metric_tensor(point)
        M = G @ self.operator(point)
        return 0.5 * (M + M.T)


def gradient_like_to_metric(atlas, func, field, point: ManifoldPoint, crit_tol: float = 1e-12):
    X = np.asarray(field(point), dtype=float)
    grad = func.gradient(atlas, point)
    G = atlas.metric_tensor(point)
    if np.linalg.norm(grad) <= crit_tol and np.linalg.norm(X) <= crit_tol:
        return np.eye(X.size)
    return metric_operator(X, grad, G)
