"""Configuration-driven pipeline: critical points -> moduli -> strata -> complex ->
homology -> checks, assembled into a JSON-ready report."""

from __future__ import annotations

import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, MorseFlowError
from .flow import FlowSettings, GradientFlow
from .homology import build_complex, smith_homology, verify_d_squared
from .manifold import builtin
from .moduli import ModuliEngine, ModuliSettings, connecting_orbits, moduli_curve, orientation_sign
from .morse import apply_orientation_overrides, builtin_function, find_critical_points, morse_chart
from .strata import moduli_table, observed_relations, stratification, succession_poset

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STAGES = ("critical-points", "moduli", "strata", "homology")
LEVEL_MODES = ("auto",)


@dataclass
class PipelineConfig:
    manifold: str = "flat-torus"
    manifold_params: Dict[str, Any] = field(default_factory=dict)
    function_params: Dict[str, Any] = field(default_factory=dict)
    density: int = 20
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_time: float = 200.0
    mesh: int = 32
    bisect_tol: float = 1e-10
    levels_mode: str = "auto"
    chart_epsilon: float = 0.05
    overrides: Dict[str, int] = field(default_factory=dict)
    report: Optional[str] = None
    csv_dir: Optional[str] = None

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol", "max_time", "bisect_tol", "chart_epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.levels_mode not in LEVEL_MODES:
            raise ConfigurationError(f"levels.mode must be one of {LEVEL_MODES}")
        for k, v in self.overrides.items():
            if v not in (1, -1):
                raise ConfigurationError(f"orientation override for {k} must be +1 or -1")

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "PipelineConfig":
        known = {"manifold", "function", "critical", "flow", "moduli", "levels", "orientation", "output", "morse"}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config sections {sorted(extra)}")
        m = d.get("manifold", {})
        fl = d.get("flow", {})
        mo = d.get("moduli", {})
        out = d.get("output", {})
        return cls(
            manifold=m.get("name", "flat-torus"),
            manifold_params=dict(m.get("params", {})),
            function_params=dict(d.get("function", {}).get("params", {})),
            density=int(d.get("critical", {}).get("density", 20)),
            abs_tol=float(fl.get("abs_tol", 1e-10)),
            rel_tol=float(fl.get("rel_tol", 1e-10)),
            max_time=float(fl.get("max_time", 200.0)),
            mesh=int(mo.get("mesh", 32)),
            bisect_tol=float(mo.get("bisect_tol", 1e-10)),
            levels_mode=d.get("levels", {}).get("mode", "auto"),
            chart_epsilon=float(d.get("morse", {}).get("epsilon", 0.05)),
            overrides={k: int(v) for k, v in d.get("orientation", {}).get("overrides", {}).items()},
            report=out.get("report"),
            csv_dir=out.get("csv_dir"),
        )

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "manifold": {"name": self.manifold, "params": self.manifold_params},
            "function": {"params": self.function_params},
            "critical": {"density": self.density},
            "flow": {"abs_tol": self.abs_tol, "rel_tol": self.rel_tol, "max_time": self.max_time},
            "moduli": {"mesh": self.mesh, "bisect_tol": self.bisect_tol},
            "levels": {"mode": self.levels_mode},
            "morse": {"epsilon": self.chart_epsilon},
            "orientation": {"overrides": dict(sorted(self.overrides.items()))},
        }


def thread_count() -> int:
    raw = os.environ.get("MORSEFLOW_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"MORSEFLOW_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("MORSEFLOW_THREADS must be at least 1")
    return n


def _num(x, digits: int = 10):
    x = float(x)
    if not np.isfinite(x):
        return None
    r = round(x, digits)
    return 0.0 if r == 0 else r


def _point(pt) -> Dict[str, Any]:
    return {"chart": pt.chart, "coords": [_num(c) for c in pt.coords]}


def _check(ok: Optional[bool], reason: str = "") -> Dict[str, str]:
    if ok is None:
        return {"status": "skipped", "reason": reason}
    return {"status": "pass" if ok else "fail", "reason": reason}


@dataclass
class Context:
    """Objects shared by the stages (kept out of the report)."""

    config: PipelineConfig
    atlas: Any = None
    func: Any = None
    criticals: List[Any] = field(default_factory=list)
    flow: Any = None
    engine: Any = None
    counts: Dict[Any, int] = field(default_factory=dict)
    curves: List[Any] = field(default_factory=list)
    poset: Any = None
    table: Any = None
    complex: Any = None


def setup(config: PipelineConfig) -> Context:
    ctx = Context(config)
    ctx.atlas = builtin(config.manifold, config.manifold_params)
    ctx.func = builtin_function(config.manifold, config.function_params)
    crits = find_critical_points(ctx.atlas, ctx.func, density=config.density)
    ctx.criticals = apply_orientation_overrides(crits, config.overrides)
    settings = FlowSettings(abs_tol=config.abs_tol, rel_tol=config.rel_tol, max_time=config.max_time)
    ctx.flow = GradientFlow(ctx.atlas, ctx.func, ctx.criticals, settings)
    ctx.engine = ModuliEngine(ctx.flow, ModuliSettings(mesh=config.mesh, bisect_tol=config.bisect_tol))
    return ctx


def _stage_criticals(ctx: Context, report):
    rows = []
    for c in ctx.criticals:
        try:
            defect = _num(morse_chart(ctx.atlas, ctx.func, c, ctx.config.chart_epsilon).defect)
        except DomainError:
            defect = None
        rows.append({
            "label": c.label,
            "position": _point(c.position),
            "value": _num(c.value),
            "index": c.index,
            "orientation": c.orientation,
            "defect": defect,
        })
    report["criticals"] = rows
    report["checks"]["critical_gradient"] = _check(
        all(ctx.func.gradient_norm(ctx.atlas, c.position) < 1e-8 for c in ctx.criticals), "|grad f| < 1e-8"
    )


def _orbits_from(ctx: Context, p):
    out = []
    for q in ctx.criticals:
        if p.index - q.index == 1:
            classes = connecting_orbits(ctx.engine, p, q)
            signs = [orientation_sign(ctx.engine, c) for c in classes]
            out.append((q, classes, signs))
    return out


def _stage_moduli(ctx: Context, report):
    sources = [p for p in ctx.criticals if p.index >= 1]
    n = thread_count()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            results = list(ex.map(lambda p: _orbits_from(ctx, p), sources))
    else:
        results = [_orbits_from(ctx, p) for p in sources]
    rows = []
    for p, res in zip(sources, results):
        for q, classes, signs in res:
            count = int(sum(signs))
            ctx.counts[(p.label, q.label)] = count
            rows.append({
                "source": p.label,
                "target": q.label,
                "classes": [
                    {"parameter": _num(c.parameter), "level": _num(c.level),
                     "representative": _point(c.representative), "sign": s}
                    for c, s in zip(classes, signs)
                ],
                "signed_count": count,
            })
    rows.sort(key=lambda r: (r["source"], r["target"]))
    report["moduli"] = rows

    curves = []
    for p in ctx.criticals:
        for q in ctx.criticals:
            if p.index == 2 and q.index == 0 and p.value > q.value:
                curve = moduli_curve(ctx.engine, p, q)
                ctx.curves.append(curve)
                curves.append({
                    "source": p.label,
                    "target": q.label,
                    "level": _num(curve.level),
                    "components": [
                        {
                            "range": [_num(comp.start), _num(comp.end)],
                            "points": len(comp.points),
                            "gaps": len(comp.gaps),
                            "orientation": comp.orientation,
                            "endpoints": [
                                {"parameter": _num(e.parameter), "through": e.intermediate.label,
                                 "boundary_sign": e.boundary_sign, "predicted_sign": e.predicted_sign,
                                 "weight": e.weight, "shadowed": e.shadowed}
                                for e in comp.endpoints
                            ],
                            "weighted_sum": comp.weighted_sum,
                        }
                        for comp in curve.components
                    ],
                    "consistent": curve.consistent,
                })
                if ctx.config.csv_dir:
                    _curve_csv(ctx, curve)
    report["curves"] = curves
    if ctx.curves:
        report["checks"]["endpoint_identity"] = _check(all(c.consistent for c in ctx.curves),
                                                       "weighted endpoint sums vanish")
    else:
        report["checks"]["endpoint_identity"] = _check(None, "no index-difference-2 pairs")


def _curve_csv(ctx: Context, curve):
    d = Path(ctx.config.csv_dir)
    d.mkdir(parents=True, exist_ok=True)
    n = ctx.atlas.dim
    with open(d / f"curve_{curve.source.label}_{curve.target.label}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "chart"] + [f"x{i + 1}" for i in range(n)])
        for i, comp in enumerate(curve.components):
            for pt in comp.points:
                w.writerow([i, pt.chart] + [repr(float(c)) for c in pt.coords])


def _stage_strata(ctx: Context, report):
    ctx.poset = succession_poset(ctx.criticals, observed_relations(ctx.engine, ctx.criticals))
    ctx.table = moduli_table(ctx.engine, ctx.poset)
    out = []
    faces_ok = True
    for p in sorted(ctx.criticals, key=lambda c: c.label):
        st = stratification("Dbar", ctx.poset, ctx.table, p.label)
        faces_ok &= st.manifold_with_faces()
        entry = st.to_dict()
        entry["euler"] = st.euler()
        entry["boundary_euler"] = st.euler(1)
        out.append(entry)
        for q in ctx.poset.below(p.label):
            try:
                mst = stratification("Mbar", ctx.poset, ctx.table, p.label, q)
            except MorseFlowError as exc:
                log.info("Mbar(%s, %s) skipped: %s", p.label, q, exc)
                continue
            faces_ok &= mst.manifold_with_faces()
            out.append(mst.to_dict())
    report["poset"] = [list(r) for r in sorted(ctx.poset.relations)]
    report["strata"] = out
    report["checks"]["faces"] = _check(faces_ok, "codimension-k components lie in k faces")


def _stage_homology(ctx: Context, report):
    ctx.complex = build_complex(ctx.criticals, ctx.counts)
    d2 = verify_d_squared(ctx.complex)
    report["complex"] = ctx.complex.to_dict()
    report["checks"]["d_squared"] = _check(d2.passed, "d o d = 0")
    if d2.passed:
        h = smith_homology(ctx.complex)
        report["homology"] = h.to_dict()
        report["checks"]["euler"] = _check(h.euler_generators == h.euler_betti, "chi(generators) = chi(betti)")
    else:
        report["homology"] = None
        report["d_squared_failures"] = d2.to_dict()["failures"]
        report["checks"]["euler"] = _check(None, "homology undefined")


def run_with_context(config: PipelineConfig, until: str = "homology", normalized: bool = False):
    """Run the stages up to ``until``; returns the shared context (None if setup failed)
    and the report."""
    if until not in STAGES:
        raise ConfigurationError(f"unknown stage {until!r}")
    report: Dict[str, Any] = {"schema_version": SCHEMA_VERSION, "config": config.to_dict(), "checks": {}}
    timings = {}
    stages = [_stage_criticals, _stage_moduli, _stage_strata, _stage_homology]
    ctx = None
    t0 = time.perf_counter()
    try:
        ctx = setup(config)
        timings["setup"] = time.perf_counter() - t0
        for name, stage in zip(STAGES, stages):
            t = time.perf_counter()
            stage(ctx, report)
            timings[name] = time.perf_counter() - t
            if name == until:
                break
    except MorseFlowError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        report["checks"]["pipeline"] = _check(False, str(exc))
    if not normalized:
        report["timings"] = {k: round(v, 3) for k, v in timings.items()}
    report["passed"] = all(c["status"] != "fail" for c in report["checks"].values())
    return ctx, report


def run_pipeline(config: PipelineConfig, until: str = "homology", normalized: bool = False) -> Dict[str, Any]:
    return run_with_context(config, until, normalized)[1]


def dumps(report: Dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
