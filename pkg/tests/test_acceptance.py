"""The nine acceptance criteria; each test logs its verdict for the terminal summary."""

import numpy as np
import pytest

from conftest import record
from helpers import LEVEL_PAIRS, level_points, make_flow
from morseflow import cp2gap
from morseflow.flow import FlowSettings, GradientFlow, flow_map, level_tangent_basis, project_to_level
from morseflow.homology import build_complex, smith_homology, verify_d_squared
from morseflow.manifold import ManifoldPoint
from morseflow.moduli import ModuliEngine, ModuliSettings, connecting_orbits, moduli_curve, orientation_sign
from morseflow.morse import metric_operator
from morseflow.pipeline import PipelineConfig, dumps, run_pipeline
from morseflow.strata import CORNER_VARIANTS, corner_check, stratification

PI = np.pi
TORUS_PAIRS = [("p", "r"), ("p", "s"), ("r", "q"), ("s", "q")]


def check(n, ok, text):
    record(n, ok, text)
    assert ok, text


# ------------------------------------------------------------------ 1


def test_criterion_1_torus_pipeline(torus_run):
    ctx, report, seconds = torus_run
    expect = {"p": ([0, 0], 2), "r": ([PI, 0], 1), "s": ([0, PI], 1), "q": ([PI, PI], 0)}
    located = len(ctx.criticals) == 4 and all(
        ctx.atlas.distance(c.position, ctx.atlas.point("T", expect[c.label][0])) < 1e-8
        and c.index == expect[c.label][1]
        for c in ctx.criticals
    )
    sizes = {pair: len(ctx.engine.orbits(*(next(c for c in ctx.criticals if c.label == x) for x in pair)))
             for pair in TORUS_PAIRS}
    counts = {pair: ctx.counts[pair] for pair in TORUS_PAIRS}
    d2 = verify_d_squared(ctx.complex).passed
    betti = smith_homology(ctx.complex).betti
    ok = (located and all(v == 2 for v in sizes.values()) and all(v == 0 for v in counts.values())
          and d2 and betti == [1, 2, 1] and seconds < 60 and report["passed"])
    check(1, ok, f"4 critical points located, |M| = {sorted(sizes.values())}, #M = {sorted(counts.values())}, "
                 f"d^2 = 0: {d2}, Betti {betti}, {seconds:.1f} s")


# ------------------------------------------------------------------ 2


def test_criterion_2_torus_stratification(torus_run):
    ctx = torus_run[0]
    d = stratification("Dbar", ctx.poset, ctx.table, "p")
    table = d.table()
    k2 = {s.label() for s in d.by_k(2)}
    vertex_faces = [len(v) for key, v in d.faces.items() if key[0] in k2]
    ok = (table == {0: (1, [2]), 1: (8, [1]), 2: (8, [0])} and d.euler(1) == 0 and d.euler() == 1
          and len(vertex_faces) == 8 and set(vertex_faces) == {2})
    check(2, ok, f"Dbar(p) strata {table}, chi(boundary) = {d.euler(1)}, chi = {d.euler()}, "
                 f"faces per vertex {sorted(set(vertex_faces))}")


# ------------------------------------------------------------------ 3


def test_criterion_3_orientation_formula(torus, sphere):
    curve = moduli_curve(torus.engine, torus["p"], torus["q"])
    torus_ok = (len(curve.components) == 4
                and all(len(c.endpoints) == 2 and c.weighted_sum == 0 for c in curve.components))
    sums = []
    for mx in ("+z", "-z"):
        for mn in ("+x", "-x"):
            c = moduli_curve(sphere.engine, sphere[mx], sphere[mn])
            sums.extend(comp.weighted_sum for comp in c.components)
            sphere_ok = c.consistent and all(len(comp.endpoints) in (0, 2) for comp in c.components)
            torus_ok &= sphere_ok
    ok = torus_ok and sums and all(s == 0 for s in sums)
    check(3, ok, f"torus 4 components x 2 endpoints with weighted sums "
                 f"{[c.weighted_sum for c in curve.components]}; ellipsoid component sums {sums}")


# ------------------------------------------------------------------ 4


def test_criterion_4_sphere_pipeline(sphere_run, sphere):
    ctx, report, seconds = sphere_run
    indices = sorted(c.index for c in ctx.criticals)
    maxsad = [abs(ctx.counts[(m, s)]) for m in ("+z", "-z") for s in ("+y", "-y")]
    d2 = verify_d_squared(ctx.complex)
    betti = smith_homology(ctx.complex).betti
    ok = (indices == [0, 0, 1, 1, 2, 2] and maxsad == [1, 1, 1, 1] and d2.passed and d2.nonzero
          and betti == [1, 0, 1] and seconds < 120 and report["passed"])
    check(4, ok, f"indices {indices}, |#M(max, saddle)| = {maxsad}, d^2 = 0 with nonzero d: "
                 f"{d2.passed and d2.nonzero}, Betti {betti}, {seconds:.1f} s")


# ------------------------------------------------------------------ 5


def test_criterion_5_cp2_counterexample():
    rng = np.random.default_rng(2024)
    pts = cp2gap.random_upper_points(rng, 100)
    worst = max(float(np.max(np.abs(cp2gap.cp2_connect(v) - cp2gap.integrate_to_section(v)))) for v in pts)
    rows = cp2gap.c1_blowup_scan(1.0, 0.0, cp2gap.s_grid(1e-6, 1e-1))
    v5_err = max(abs(r.v5 - 1.0) for r in rows)
    cert = cp2gap.certificate(rows)
    ok = worst < 1e-6 and v5_err < 1e-9 and min(r.s for r in rows) <= 1e-6 and cert.boundary_value == 0 and cert.non_c1
    check(5, ok, f"connect vs integration max error {worst:.1e} on 100 points; v5 - 1 within {v5_err:.1e} "
                 f"down to s = 1e-6; boundary value 0; non-C1 certificate {cert.non_c1}")


# ------------------------------------------------------------------ 6


def test_criterion_6_corner_charts():
    worst_rt, worst_col, min_sv = 0.0, 0.0, np.inf
    for variant in CORNER_VARIANTS:
        c = corner_check(variant, 1.0, 1000, seed=6)
        worst_rt = max(worst_rt, c.roundtrip_error)
        worst_col = max(worst_col, c.column_error)
        min_sv = min(min_sv, c.min_singular)
    ok = worst_rt < 1e-12 and worst_col < 1e-6 and min_sv >= 0.5
    check(6, ok, f"round trip {worst_rt:.1e}, boundary columns {worst_col:.1e}, "
                 f"min singular value {min_sv:.3f} over {', '.join(CORNER_VARIANTS)}")


# ------------------------------------------------------------------ 7


def test_criterion_7_closed_forms():
    flow = make_flow("morse-local-model", settings=FlowSettings(abs_tol=1e-12, rel_tol=1e-12))
    rng = np.random.default_rng(7)
    local = 0.0
    for t in np.linspace(-5, 5, 41):
        v = rng.uniform(-1, 1, size=2)
        tr = flow.integrate(ManifoldPoint("B", v), time=abs(t), direction=1 if t >= 0 else -1,
                            stop_at_convergence=False)
        local = max(local, float(np.max(np.abs(tr.end.coords - [np.exp(t) * v[0], np.exp(-t) * v[1]]))))
    cp2 = 0.0
    for _ in range(100):
        v = rng.uniform(-0.5, 0.5, size=4)
        t = rng.uniform(0, 0.5)
        cp2 = max(cp2, float(np.max(np.abs(cp2gap.cp2_flow(v, t) - cp2gap.integrate_flow(v, t)))))
    ok = local < 1e-8 and cp2 < 1e-8
    check(7, ok, f"local model max error {local:.1e} over |t| <= 5; cp2 closed form vs metric ODE {cp2:.1e}")


# ------------------------------------------------------------------ 8


def test_criterion_8_metric_operator():
    rng = np.random.default_rng(8)
    sym = lin = 0.0
    pos = True
    n_pairs = 0
    while n_pairs < 1000:
        n = int(rng.integers(2, 7))
        v1, v2 = rng.normal(size=n), rng.normal(size=n)
        if v1 @ v2 <= 0:
            continue
        n_pairs += 1
        A = metric_operator(v1, v2)
        sym = max(sym, float(np.max(np.abs(A - A.T))))
        pos &= bool(np.linalg.eigvalsh(0.5 * (A + A.T)).min() > 0)
        lin = max(lin, float(np.max(np.abs(A @ v1 - v2))))
    ident = all(np.array_equal(metric_operator(v, v), np.eye(v.size)) for v in rng.normal(size=(50, 4)))
    ok = sym < 1e-12 and pos and lin < 1e-10 and ident
    check(8, ok, f"1000 pairs: asymmetry {sym:.1e}, positive definite {pos}, |A V1 - V2| {lin:.1e}, "
                 f"A(V, V) = I exactly {ident}")


# ------------------------------------------------------------------ 9


def _random_start(flow, rng):
    name = flow.atlas.name
    if name == "morse-local-model":
        return ManifoldPoint("B", rng.uniform(-1, 1, size=2)), 2.0
    if name == "cp2-chart":
        return ManifoldPoint("U", rng.uniform(-0.25, 0.25, size=4)), 0.3
    cid = list(flow.atlas.charts)[int(rng.integers(len(flow.atlas.charts)))]
    return ManifoldPoint(cid, flow.atlas.chart(cid).sample(rng, margin=0.2)), 10.0


@pytest.mark.parametrize("name", ["flat-torus", "ellipsoid-sphere", "morse-local-model", "cp2-chart"])
def test_criterion_9_energy_identity(name):
    flow = make_flow(name)
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        x, T = _random_start(flow, rng)
        tr = flow.integrate(x, time=T)
        drop = tr.values[0] - tr.values[-1]
        if drop > 1e-12:
            worst = max(worst, abs(tr.dissipation(flow.atlas, flow.func) - drop) / drop)
    check(9, worst < 1e-6, f"energy identity on 100 {name} trajectories, relative error {worst:.1e}")


def test_criterion_9_flow_map_derivative():
    worst = 0.0
    h = 1e-6
    for name, params, b, a in LEVEL_PAIRS:
        flow = make_flow(name, params, FlowSettings(abs_tol=1e-12, rel_tol=1e-12))
        atlas, func = flow.atlas, flow.func
        for pt in level_points(flow, b, 10, seed=19, radius=1.5 if name == "cp2-chart" else None):
            res = flow_map(flow, pt, a)
            B = level_tangent_basis(atlas, func, pt)
            for v in B.T:
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
                exact = res.derivative @ v
                worst = max(worst, float(np.linalg.norm(d / (2 * h) - exact) / max(np.linalg.norm(exact), 1e-3)))
    check(9, worst < 1e-4, f"flow-map derivative vs finite differences, relative error {worst:.1e}")


def test_criterion_9_sign_invariance(torus, sphere):
    changed = 0
    total = 0
    for world, pairs in [(torus, TORUS_PAIRS), (sphere, [("+z", "+y"), ("-z", "-y"), ("+y", "+x"), ("-y", "-x")])]:
        fine = ModuliEngine(world.flow, ModuliSettings(mesh=64))
        tight = ModuliEngine(GradientFlow(world.atlas, world.func, world.criticals, world.flow.settings.tightened(10)))
        for src, dst in pairs:
            base = connecting_orbits(world.engine, world[src], world[dst])
            signs = [orientation_sign(world.engine, c) for c in base]
            variants = [
                [orientation_sign(world.engine, c, offset=0.05) for c in base],
                [orientation_sign(world.engine, c, offset=0.5) for c in base],
                [orientation_sign(fine, c) for c in connecting_orbits(fine, world[src], world[dst])],
                [orientation_sign(tight, c) for c in connecting_orbits(tight, world[src], world[dst])],
            ]
            for v in variants:
                total += 1
                changed += v != signs
    check(9, changed == 0, f"signs unchanged in {total - changed}/{total} level, mesh-64 and 10x-tolerance reruns")


def test_criterion_9_flip_covariance(torus_run, sphere_run):
    ok = True
    for ctx in (torus_run[0], sphere_run[0]):
        cx = build_complex(ctx.criticals, ctx.counts)
        base = smith_homology(cx)
        for p in ctx.criticals:
            if p.index == 0:
                continue
            # recompute the counts out of p with the reversed frame
            for q in ctx.criticals:
                if p.index - q.index == 1:
                    classes = connecting_orbits(ctx.engine, p, q)
                    flipped = sum(orientation_sign(ctx.engine, c, source=p.flipped()) for c in classes)
                    ok &= flipped == -ctx.counts[(p.label, q.label)]
            h = smith_homology(cx.flipped(p.label))
            ok &= (h.betti, h.torsion) == (base.betti, base.torsion)
    check(9, ok, "reversing any D(p) frame negates #M(p, .) and leaves homology unchanged")


def test_criterion_9_determinism(torus_run, monkeypatch):
    monkeypatch.setenv("MORSEFLOW_THREADS", "2")
    again = run_pipeline(PipelineConfig(manifold="flat-torus"), normalized=True)
    same = dumps(again) == dumps(torus_run[1])
    check(9, same, "normalized torus report byte-identical across runs (1 vs 2 threads)")
