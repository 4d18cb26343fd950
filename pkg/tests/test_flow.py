import csv

import numpy as np
import pytest

from morseflow import cp2gap
from morseflow.errors import ConfigurationError, UndefinedFlowMapError
from morseflow.flow import (
    FlowSettings,
    decompose_to_broken,
    flow_map,
    level_tangent_basis,
    omega_limit,
    project_to_level,
)
from morseflow.manifold import ManifoldPoint
from morseflow.moduli import ModuliEngine
from morseflow.morse import by_label

from helpers import LEVEL_PAIRS, level_points, make_flow

PI = np.pi


def test_local_model_closed_form_example():
    flow = make_flow("morse-local-model", settings=FlowSettings(abs_tol=1e-12, rel_tol=1e-12))
    tr = flow.integrate(ManifoldPoint("B", [1.0, 1.0]), time=np.log(2), stop_at_convergence=False)
    assert tr.status == "reached-time"
    assert np.allclose(tr.end.coords, [2.0, 0.5], atol=1e-9)


def test_local_model_closed_form_range():
    flow = make_flow("morse-local-model", settings=FlowSettings(abs_tol=1e-12, rel_tol=1e-12))
    rng = np.random.default_rng(10)
    for t in np.linspace(-5, 5, 21):
        v = rng.uniform(-1, 1, size=2)
        tr = flow.integrate(ManifoldPoint("B", v), time=abs(t), direction=1 if t >= 0 else -1,
                            stop_at_convergence=False)
        exact = np.array([np.exp(t) * v[0], np.exp(-t) * v[1]])
        assert np.max(np.abs(tr.end.coords - exact)) < 1e-8


def test_torus_invariant_lines():
    flow = make_flow("flat-torus")
    tr = flow.integrate(ManifoldPoint("T", [PI / 3, PI / 3]))
    assert tr.status == "converged" and tr.critical.label == "q"
    tr = flow.integrate(ManifoldPoint("T", [PI / 2, 0.0]))
    assert tr.status == "converged" and tr.critical.label == "r"
    assert all(abs(p.coords[1]) < 1e-12 or abs(p.coords[1] - 2 * PI) < 1e-12 for p in tr.points)


@pytest.mark.parametrize("name", ["flat-torus", "ellipsoid-sphere"])
def test_monotone_decrease(name):
    flow = make_flow(name)
    rng = np.random.default_rng(11)
    for _ in range(10):
        cid = list(flow.atlas.charts)[0]
        tr = flow.integrate(ManifoldPoint(cid, flow.atlas.chart(cid).sample(rng, margin=0.2)))
        assert tr.monotone
        assert all(b <= a + 1e-12 for a, b in zip(tr.values, tr.values[1:]))


def test_torus_flow_map_example():
    flow = make_flow("flat-torus")
    res = flow_map(flow, ManifoldPoint("T", [PI / 3, PI / 3]), -1.0)
    assert np.allclose(res.image.coords, [2 * PI / 3, 2 * PI / 3], atol=1e-8)
    assert abs(flow.func.f(res.image) + 1.0) < 1e-9
    # separable ODE: tan(theta/2) = tan(theta0/2) e^t
    t = np.log(np.tan(PI / 3) / np.tan(PI / 6))
    assert abs(res.elapsed - t) < 1e-7


def test_cp2_flow_map_matches_closed_form():
    flow = make_flow("cp2-chart")
    for x in ([0.3, 0.1, 1.0, np.sqrt(0.1)], [0.5, -0.2, 0.8, 0.9]):
        pt = ManifoldPoint("U", x)
        lvl = flow.func.f(pt)
        res = flow_map(flow, pt, lvl - 0.9)
        exact = cp2gap.cp2_flow(np.array(x), res.elapsed)
        assert np.max(np.abs(res.image.coords - exact)) < 1e-8


@pytest.mark.parametrize("name,params,b,a", LEVEL_PAIRS)
def test_flow_map_derivative_matches_finite_differences(name, params, b, a):
    flow = make_flow(name, params, FlowSettings(abs_tol=1e-12, rel_tol=1e-12))
    atlas, func = flow.atlas, flow.func
    radius = 1.5 if name == "cp2-chart" else None
    h = 1e-6
    for pt in level_points(flow, b, 10, seed=12, radius=radius):
        res = flow_map(flow, pt, a)
        B = level_tangent_basis(atlas, func, pt)
        for j in range(B.shape[1]):
            v = B[:, j]
            ends = []
            for sgn in (1, -1):
                q = project_to_level(atlas, func, ManifoldPoint(pt.chart, pt.coords + sgn * h * v), b)
                img = flow_map(flow, q, a).image
                if img.chart != res.image.chart:
                    img = atlas.transition(img, res.image.chart)
                ends.append(img.coords)
            d = ends[0] - ends[1]
            if atlas.chart(res.image.chart).periodic[0]:
                d = (d + PI) % (2 * PI) - PI
            fd = d / (2 * h)
            exact = res.derivative @ v
            assert np.linalg.norm(fd - exact) <= 1e-4 * max(np.linalg.norm(exact), 1e-3)


@pytest.mark.parametrize("name,params,b,a", LEVEL_PAIRS)
def test_flow_map_inverse(name, params, b, a):
    flow = make_flow(name, params)
    radius = 1.5 if name == "cp2-chart" else None
    for pt in level_points(flow, b, 20, seed=13, radius=radius):
        down = flow_map(flow, pt, a)
        assert abs(flow.func.f(down.image) - a) < 1e-9
        up = flow_map(flow, down.image, b)
        assert flow.atlas.distance(up.image, pt) < 1e-7


@pytest.mark.parametrize("name", ["flat-torus", "ellipsoid-sphere"])
def test_energy_identity(name):
    flow = make_flow(name)
    rng = np.random.default_rng(14)
    for _ in range(20):
        cid = list(flow.atlas.charts)[int(rng.integers(len(flow.atlas.charts)))]
        pt = ManifoldPoint(cid, flow.atlas.chart(cid).sample(rng, margin=0.2))
        tr = flow.integrate(pt, time=5.0)
        drop = tr.values[0] - tr.values[-1]
        assert abs(tr.dissipation(flow.atlas, flow.func) - drop) <= 1e-6 * max(abs(drop), 1e-12) + 1e-12


def test_undefined_flow_map_names_critical_point():
    flow = make_flow("flat-torus")
    with pytest.raises(UndefinedFlowMapError) as info:
        flow_map(flow, ManifoldPoint("T", [PI / 2, 0.0]), -1.0)
    assert info.value.critical.label == "r"
    assert "r" in str(info.value)


def test_omega_limit_examples():
    flow = make_flow("flat-torus")
    assert omega_limit(flow, ManifoldPoint("T", [PI / 3, PI / 3])).critical.label == "q"
    om = omega_limit(flow, ManifoldPoint("T", [0.0, 0.0]))
    assert om.status == "converged" and om.critical.label == "p"
    local = make_flow("morse-local-model", {"dim_minus": 1, "dim_plus": 1})
    assert omega_limit(local, ManifoldPoint("B", [0.0, 0.7])).critical.label == "o"
    assert omega_limit(local, ManifoldPoint("B", [0.1, 0.7])).status == "exited-domain"


def test_omega_limit_inconclusive_is_not_an_exception():
    flow = make_flow("flat-torus", settings=FlowSettings(max_time=0.5))
    assert omega_limit(flow, ManifoldPoint("T", [PI / 3, PI / 3])).status == "inconclusive"


def test_broken_decomposition_near_r():
    flow = make_flow("flat-torus")
    tr = flow.integrate(ManifoldPoint("T", [PI / 2, 1e-6]))
    dec = decompose_to_broken(flow, tr, 0.1)
    assert dec.labels == ["r", "q"]
    assert len(set(dec.labels)) == len(dec.labels)
    values = [c.value for c in dec.skeleton]
    assert all(a > b for a, b in zip(values, values[1:]))
    # linear saddle: the product of the two coordinates is conserved, entry and exit at radius 0.1
    expect = np.log(0.1**2 / (2 * 1e-6))
    assert abs(dec.dwells[0].duration - expect) < 0.02 * expect


def test_broken_decomposition_diagonal():
    flow = make_flow("flat-torus")
    tr = flow.integrate(ManifoldPoint("T", [PI / 3, PI / 3]))
    assert decompose_to_broken(flow, tr, 0.1).labels == ["q"]


def test_overlapping_dwell_balls():
    flow = make_flow("flat-torus")
    tr = flow.integrate(ManifoldPoint("T", [PI / 3, PI / 3]))
    with pytest.raises(ConfigurationError):
        decompose_to_broken(flow, tr, 2.0)


def test_shadowing_is_monotone():
    flow = make_flow("flat-torus")
    engine = ModuliEngine(flow)
    r = by_label(flow.criticals, "r")
    closest, dwell = [], []
    for delta in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]:
        tr = flow.integrate(ManifoldPoint("T", [PI / 2, delta]))
        closest.append(engine.closest_approach(tr, r))
        # the widest start never enters the 0.1 ball of r
        dwell.append(sum(d.duration for d in decompose_to_broken(flow, tr, 0.1).dwells if d.critical is r))
    assert all(a > b for a, b in zip(closest, closest[1:]))
    assert all(a < b for a, b in zip(dwell, dwell[1:]))
    assert dwell[1] > 0


def test_trajectory_csv(tmp_path):
    flow = make_flow("ellipsoid-sphere")
    tr = flow.integrate(ManifoldPoint("north", [0.4, 0.3]), time=2.0)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "chart", "x1", "x2"]
    assert len(rows) == len(tr.points) + 1
    assert float(rows[1][0]) == 0.0 and rows[1][1] == "north"


def test_bad_settings():
    with pytest.raises(ConfigurationError):
        FlowSettings(abs_tol=0)
