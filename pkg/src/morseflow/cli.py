"""Command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import cp2gap
from .errors import MorseFlowError
from .flow import FlowSettings, GradientFlow
from .manifold import ManifoldPoint, builtin
from .morse import builtin_function
from .pipeline import STAGES, PipelineConfig, dumps, run_pipeline
from .strata import CORNER_VARIANTS, corner_check


def _emit(obj, path=None):
    text = dumps(obj)
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _pipeline(args) -> int:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.manifold:
        config.manifold = args.manifold
    report = run_pipeline(config, until=args.command, normalized=args.normalized)
    _emit(report, args.report or config.report)
    return 0 if report["passed"] else 1


def _corner(args) -> int:
    out = {}
    ok = True
    for variant in ([args.variant] if args.variant else CORNER_VARIANTS):
        c = corner_check(variant, args.epsilon, args.samples, seed=args.seed)
        floor = 0.5 * min(1.0, np.sqrt(args.epsilon))
        passed = c.roundtrip_error < 1e-12 * max(1.0, args.epsilon) and c.column_error < 1e-6 and c.min_singular >= floor
        ok &= passed
        out[variant] = {
            "roundtrip_error": c.roundtrip_error,
            "column_error": c.column_error,
            "min_singular": c.min_singular,
            "passed": passed,
        }
    _emit({"epsilon": args.epsilon, "samples": args.samples, "charts": out})
    return 0 if ok else 1


def _blowup(args) -> int:
    rows = cp2gap.c1_blowup_scan(args.a, args.b, cp2gap.s_grid(args.s_min, args.s_max), verify=args.verify)
    if args.csv:
        cp2gap.write_scan_csv(rows, args.csv)
    else:
        cp2gap.write_scan(rows, sys.stdout)
    cert = cp2gap.certificate(rows)
    print(f"# limit L = {cert.limit:.12f}, boundary value 0, spread {cert.spread:.2e}, "
          f"non-C1 certificate: {'yes' if cert.non_c1 else 'no'}", file=sys.stderr)
    return 0 if cert.non_c1 else 1


def _local_model(args) -> int:
    v1, v2 = args.v1, args.v2
    atlas = builtin("morse-local-model", {"dim_minus": 1, "dim_plus": 1})
    func = builtin_function("morse-local-model", {"dim_minus": 1, "dim_plus": 1})
    flow = GradientFlow(atlas, func, settings=FlowSettings(abs_tol=1e-12, rel_tol=1e-12))
    direction = 1 if args.t >= 0 else -1
    tr = flow.integrate(ManifoldPoint("B", [v1, v2]), time=abs(args.t), direction=direction,
                        stop_at_convergence=False)
    got = tr.end.coords
    exact = np.array([np.exp(args.t) * v1, np.exp(-args.t) * v2])
    err = float(np.max(np.abs(got - exact)))
    _emit({"t": args.t, "start": [v1, v2], "integrated": got.tolist(), "closed_form": exact.tolist(),
           "max_error": err, "passed": err < 1e-8})
    return 0 if err < 1e-8 else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morseflow", description="Morse flow lines, moduli strata and homology")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the pipeline up to {name}")
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--manifold", help="override manifold.name")
        p.add_argument("--report", help="write the JSON report here instead of stdout")
        p.add_argument("--normalized", action="store_true", help="omit timings for byte-stable output")
        p.set_defaults(func=_pipeline)

    p = sub.add_parser("corner-check", help="round-trip and boundary-derivative checks of corner charts")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--variant", choices=CORNER_VARIANTS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_corner)

    p = sub.add_parser("cp2-blowup", help="scan of the collar coordinate near the broken lines")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--s-min", type=float, default=1e-6)
    p.add_argument("--s-max", type=float, default=1e-1)
    p.add_argument("--csv", help="output CSV path (default stdout)")
    p.add_argument("--verify", action="store_true", help="cross-check each row by flow integration")
    p.set_defaults(func=_blowup)

    p = sub.add_parser("local-model", help="integrated flow of the quadratic model vs closed form")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--v1", type=float, default=1.0)
    p.add_argument("--v2", type=float, default=1.0)
    p.set_defaults(func=_local_model)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except MorseFlowError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
