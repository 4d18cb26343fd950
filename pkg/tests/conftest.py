import logging
import time

import pytest

from morseflow.morse import by_label
from morseflow.pipeline import PipelineConfig, run_with_context

ACCEPTANCE = {}


class World:
    """The objects of a pipeline run, indexable by critical point label."""

    def __init__(self, ctx):
        self.atlas = ctx.atlas
        self.func = ctx.func
        self.criticals = ctx.criticals
        self.flow = ctx.flow
        self.engine = ctx.engine

    def __getitem__(self, label):
        return by_label(self.criticals, label)


def timed_run(name):
    """(context, normalized report, wall seconds) of a full pipeline run."""
    logging.getLogger("morseflow").setLevel(logging.ERROR)
    t0 = time.perf_counter()
    ctx, report = run_with_context(PipelineConfig(manifold=name), normalized=True)
    return ctx, report, time.perf_counter() - t0


@pytest.fixture(scope="session")
def torus_run():
    return timed_run("flat-torus")


@pytest.fixture(scope="session")
def sphere_run():
    return timed_run("ellipsoid-sphere")


# the worlds share the caches of the pipeline runs
@pytest.fixture(scope="session")
def torus(torus_run):
    return World(torus_run[0])


@pytest.fixture(scope="session")
def sphere(sphere_run):
    return World(sphere_run[0])


def record(n, ok, text):
    """Log one sub-check of acceptance criterion n; the summary reports the conjunction."""
    ACCEPTANCE.setdefault(n, []).append((bool(ok), text))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p for p, _ in parts)
        text = "; ".join(t for _, t in parts)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {text}")
