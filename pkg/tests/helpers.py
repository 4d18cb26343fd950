import numpy as np

from morseflow.flow import GradientFlow, project_to_level
from morseflow.manifold import ManifoldPoint, builtin
from morseflow.morse import builtin_function, find_critical_points

# (manifold, params, upper level, lower level) with no critical value in between
LEVEL_PAIRS = [
    ("flat-torus", None, 1.5, 0.5),
    ("ellipsoid-sphere", None, 2.8, 2.2),
    ("ellipsoid-sphere", None, 1.8, 1.2),
    ("morse-local-model", {"dim_minus": 1, "dim_plus": 1}, 0.5, 0.2),
    ("cp2-chart", None, 0.5, 0.1),
]


def make_flow(name, params=None, settings=None):
    atlas = builtin(name, params)
    func = builtin_function(name, params)
    return GradientFlow(atlas, func, find_critical_points(atlas, func), settings)


def level_points(flow, level, count, seed, radius=None):
    """Random points on f = level (chart samples pushed along the gradient line)."""
    rng = np.random.default_rng(seed)
    atlas, func = flow.atlas, flow.func
    out = []
    while len(out) < count:
        cid = list(atlas.charts)[int(rng.integers(len(atlas.charts)))]
        ch = atlas.chart(cid)
        x = ch.sample(rng, margin=0.2)
        if radius is not None:
            x = x * radius / max(np.linalg.norm(x), radius)
        pt = ManifoldPoint(cid, x)
        if func.gradient_norm(atlas, pt) < 0.1:
            continue
        pt = project_to_level(atlas, func, pt, level)
        if abs(func.f(pt) - level) > 1e-12 or not ch.in_core(pt.coords):
            continue
        if radius is not None and np.linalg.norm(pt.coords) > radius:
            continue
        out.append(pt)
    return out


