import numpy as np
import pytest

from morseflow.errors import LevelError, PreconditionError
from morseflow.flow import FlowSettings, GradientFlow
from morseflow.manifold import builtin
from morseflow.moduli import (
    ModuliEngine,
    ModuliSettings,
    connecting_orbits,
    default_level,
    descending_sphere,
    launch_point,
    moduli_curve,
    orientation_sign,
    signed_count,
    sphere_mesh,
)
from morseflow.morse import builtin_function, find_critical_points

PI = np.pi


def torus_dist(atlas, pt, coords):
    return atlas.distance(pt, atlas.point("T", coords))


def test_sphere_mesh_shapes():
    assert sphere_mesh(1, 8).tolist() == [[1.0], [-1.0]]
    m = sphere_mesh(2, 16)
    assert m.shape == (16, 2) and np.allclose(np.linalg.norm(m, axis=1), 1)
    m = sphere_mesh(3, 50)
    assert m.shape == (50, 3) and np.allclose(np.linalg.norm(m, axis=1), 1)


def test_descending_sphere_torus_direction(torus):
    p = torus["p"]
    x0 = launch_point(torus.flow, p, np.array([1.0, 0.0]), 1e-4)
    tr = torus.flow.integrate(x0, level=1.0)
    assert torus_dist(torus.atlas, tr.end, [PI / 2, 0]) < 1e-8


def test_descending_sphere_torus_saddle(torus):
    ds = descending_sphere(torus.flow, torus["r"], -1.0)
    assert ds.gaps == []
    got = sorted(tuple(np.round(p.coords, 6)) for p in ds.points)
    assert np.allclose(got, [[PI, PI / 2], [PI, 3 * PI / 2]], atol=1e-6)
    for pt in ds.points:
        assert abs(torus.func.f(pt) + 1.0) < 1e-9


def test_descending_sphere_on_level(torus):
    ds = descending_sphere(torus.flow, torus["p"], 1.0, mesh=24)
    pts = [p for p in ds.points if p is not None]
    assert len(pts) == 24
    assert all(abs(torus.func.f(p) - 1.0) < 1e-9 for p in pts)
    dmin = min(torus.atlas.distance(a, b) for i, a in enumerate(pts) for b in pts[i + 1 :])
    assert dmin > 0


def test_descending_sphere_local_model_radial():
    params = {"dim_minus": 2, "dim_plus": 1}
    atlas = builtin("morse-local-model", params)
    func = builtin_function("morse-local-model", params)
    crits = find_critical_points(atlas, func)
    flow = GradientFlow(atlas, func, crits, FlowSettings(abs_tol=1e-12, rel_tol=1e-12))
    eps = 0.5
    o = crits[0]
    ds = descending_sphere(flow, o, -eps / 2, mesh=12)
    for u, pt in zip(ds.directions, ds.points):
        expect = np.sqrt(eps) * (o.orientation_frame @ u)
        assert np.allclose(pt.coords, expect, atol=1e-8)


def test_descending_sphere_level_errors(torus):
    with pytest.raises(LevelError):
        descending_sphere(torus.flow, torus["p"], 0.0)  # critical value
    with pytest.raises(LevelError):
        descending_sphere(torus.flow, torus["p"], -1.0)  # crosses f(r) = f(s) = 0
    with pytest.raises(LevelError):
        descending_sphere(torus.flow, torus["r"], 1.0)  # above f(r)
    ds = descending_sphere(torus.flow, torus["p"], -1.0, mesh=8, allow_punctured=True)
    assert len(ds.points) == 8


def test_default_level(torus):
    assert default_level(torus.criticals, torus["p"], torus["r"]) == 1.0
    assert default_level(torus.criticals, torus["r"], torus["q"]) == -1.0


def test_torus_orbits_p_r(torus):
    classes = connecting_orbits(torus.engine, torus["p"], torus["r"])
    assert len(classes) == 2
    reps = sorted(c.representative.coords[0] for c in classes)
    for c in classes:
        assert c.level == 1.0
        assert abs(torus.func.f(c.representative) - 1.0) < 1e-9
        assert c.tolerance < 1e-6
    assert torus_dist(torus.atlas, classes[0].representative, [reps[0], 0]) < 1e-6
    assert np.allclose(reps, [PI / 2, 3 * PI / 2], atol=1e-6)


def test_torus_orbits_r_q(torus):
    classes = connecting_orbits(torus.engine, torus["r"], torus["q"])
    assert len(classes) == 2
    got = sorted(tuple(c.representative.coords) for c in classes)
    assert np.allclose(got, [[PI, PI / 2], [PI, 3 * PI / 2]], atol=1e-6)


def test_orbit_representatives_converge_to_target(torus):
    for src, dst in [("p", "r"), ("p", "s"), ("r", "q"), ("s", "q")]:
        for c in connecting_orbits(torus.engine, torus[src], torus[dst]):
            assert c.target is torus[dst]
            assert c.closest < 1e-3


def test_sphere_max_saddle_single_orbit(sphere):
    classes = connecting_orbits(sphere.engine, sphere["+z"], sphere["+y"])
    assert len(classes) == 1
    X = sphere.atlas.ambient(classes[0].representative)
    assert abs(X[0]) < 1e-6 and X[1] > 0 and X[2] > 0


def test_index_difference_precondition(torus):
    with pytest.raises(PreconditionError):
        moduli_curve(torus.engine, torus["p"], torus["r"])


def test_torus_signs_opposite(torus):
    signs = sorted(orientation_sign(torus.engine, c) for c in connecting_orbits(torus.engine, torus["p"], torus["r"]))
    assert signs == [-1, 1]


def test_torus_signed_counts_vanish(torus):
    for src, dst in [("p", "r"), ("p", "s"), ("r", "q"), ("s", "q")]:
        assert signed_count(torus.engine, torus[src], torus[dst]) == 0


def test_sphere_max_saddle_counts(sphere):
    for m in ("+z", "-z"):
        for s in ("+y", "-y"):
            assert abs(signed_count(sphere.engine, sphere[m], sphere[s])) == 1


def test_flip_negates_signs(torus, sphere):
    for world, src, dst in [(torus, "p", "r"), (torus, "r", "q"), (sphere, "+z", "-y"), (sphere, "+y", "+x")]:
        p = world[src]
        for c in connecting_orbits(world.engine, p, world[dst]):
            s = orientation_sign(world.engine, c)
            assert orientation_sign(world.engine, c, source=p.flipped()) == -s
            if world[dst].index > 0:
                assert orientation_sign(world.engine, c, target=world[dst].flipped()) == -s


@pytest.mark.parametrize("pair", [("p", "r"), ("p", "s"), ("r", "q"), ("s", "q")])
def test_sign_level_independence(torus, pair):
    for c in connecting_orbits(torus.engine, torus[pair[0]], torus[pair[1]]):
        s = orientation_sign(torus.engine, c)
        assert orientation_sign(torus.engine, c, offset=0.05) == s
        assert orientation_sign(torus.engine, c, offset=0.5) == s


def test_mesh_doubling_finds_no_new_classes(torus):
    fine = ModuliEngine(torus.flow, ModuliSettings(mesh=64))
    for src, dst in [("p", "r"), ("p", "s"), ("r", "q"), ("s", "q")]:
        a = connecting_orbits(torus.engine, torus[src], torus[dst])
        b = connecting_orbits(fine, torus[src], torus[dst])
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert torus.atlas.distance(x.representative, y.representative) < 1e-6
            assert orientation_sign(torus.engine, x) == orientation_sign(fine, y)


def test_torus_moduli_curve(torus):
    curve = moduli_curve(torus.engine, torus["p"], torus["q"])
    assert len(curve.components) == 4
    assert len(curve.endpoints) == 8
    via = sorted(e.intermediate.label for e in curve.endpoints)
    assert via == ["r"] * 4 + ["s"] * 4
    for comp in curve.components:
        assert len(comp.endpoints) == 2
        a, b = comp.endpoints
        assert a.boundary_sign == -b.boundary_sign
        assert comp.weighted_sum == 0
        assert all(e.shadowed for e in comp.endpoints)
        assert all(abs(torus.func.f(pt) - curve.level) < 1e-9 for pt in comp.points)
    assert curve.consistent


def test_sphere_moduli_curve(sphere):
    curve = moduli_curve(sphere.engine, sphere["+z"], sphere["+x"])
    assert curve.components
    assert {e.intermediate.label for e in curve.endpoints} == {"+y", "-y"}
    assert curve.weighted_sum == 0
    assert curve.consistent


def test_bad_settings():
    from morseflow.errors import ConfigurationError

    with pytest.raises(ConfigurationError):
        ModuliSettings(mesh=2)
    with pytest.raises(ConfigurationError):
        ModuliSettings(sign_offset=1.5)
