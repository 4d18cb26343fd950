"""Integer chain complex generated by critical points, the d^2 = 0 check and homology
by Smith normal form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import IncompleteInputError, PreconditionError

Pair = Tuple[str, str]


@dataclass
class ChainComplex:
    """``generators[k]`` lists the labels of index-k critical points; ``boundary[k]`` is
    the integer matrix of d_k: C_k -> C_{k-1}, rows indexed by generators[k - 1]."""

    generators: Dict[int, List[str]]
    boundary: Dict[int, List[List[int]]]
    values: Dict[str, float] = field(default_factory=dict)

    @property
    def top(self) -> int:
        return max(self.generators) if self.generators else -1

    def ranks(self) -> List[int]:
        return [len(self.generators.get(k, [])) for k in range(self.top + 1)]

    def matrix(self, k: int) -> List[List[int]]:
        rows = len(self.generators.get(k - 1, []))
        cols = len(self.generators.get(k, []))
        return self.boundary.get(k, [[0] * cols for _ in range(rows)])

    def entry(self, k: int, p: str, q: str) -> int:
        return self.matrix(k)[self.generators[k - 1].index(q)][self.generators[k].index(p)]

    def euler_characteristic(self) -> int:
        return sum((-1) ** k * n for k, n in enumerate(self.ranks()))

    def flipped(self, label: str) -> "ChainComplex":
        """Complex after reversing the orientation of D(label): conjugation by a sign."""
        out = {k: [row[:] for row in m] for k, m in self.boundary.items()}
        for k, gens in self.generators.items():
            if label in gens:
                j = gens.index(label)
                if k in out:
                    for row in out[k]:
                        row[j] = -row[j]
                if k + 1 in out:
                    out[k + 1][j] = [-x for x in out[k + 1][j]]
        return ChainComplex({k: list(v) for k, v in self.generators.items()}, out, dict(self.values))

    def to_dict(self) -> dict:
        return {
            "generators": {str(k): v for k, v in sorted(self.generators.items())},
            "boundary": {str(k): self.matrix(k) for k in range(1, self.top + 1)},
        }


def build_complex(criticals, counts: Mapping[Pair, int], level_cap: Optional[float] = None) -> ChainComplex:
    """Generators are the critical points with f(p) <= level_cap; entry (q, p) of d_k is
    the signed count #M(p, q)."""
    cap = np.inf if level_cap is None else level_cap
    kept = [c for c in criticals if c.value <= cap]
    gens: Dict[int, List[str]] = {}
    for c in sorted(kept, key=lambda c: (c.index, c.label)):
        gens.setdefault(c.index, []).append(c.label)
    top = max(gens) if gens else -1
    for k in range(top + 1):
        gens.setdefault(k, [])
    bd = {}
    for k in range(1, top + 1):
        m = []
        for q in gens[k - 1]:
            row = []
            for p in gens[k]:
                if (p, q) not in counts:
                    raise IncompleteInputError(f"missing signed count #M({p}, {q})")
                row.append(int(counts[(p, q)]))
            m.append(row)
        bd[k] = m
    return ChainComplex(gens, bd, {c.label: c.value for c in kept})


def _matmul(a: List[List[int]], b: List[List[int]]) -> List[List[int]]:
    if not a or not b or not b[0]:
        return [[0] * (len(b[0]) if b else 0) for _ in a]
    return [[sum(a[i][t] * b[t][j] for t in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


@dataclass
class DSquaredFailure:
    degree: int
    source: str
    target: str
    value: int
    broken: List[Tuple[str, int, int]]  # (r, #M(p, r), #M(r, q))


@dataclass
class DSquaredReport:
    passed: bool
    failures: List[DSquaredFailure]
    nonzero: bool  # some boundary matrix has a nonzero entry

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "failures": [f.__dict__ for f in self.failures],
        }


def verify_d_squared(cx: ChainComplex) -> DSquaredReport:
    failures = []
    for k in range(2, cx.top + 1):
        prod = _matmul(cx.matrix(k - 1), cx.matrix(k))
        for i, q in enumerate(cx.generators[k - 2]):
            for j, p in enumerate(cx.generators[k]):
                if prod[i][j] != 0:
                    broken = [(r, cx.entry(k, p, r), cx.entry(k - 1, r, q)) for r in cx.generators[k - 1]
                              if cx.entry(k, p, r) and cx.entry(k - 1, r, q)]
                    failures.append(DSquaredFailure(k, p, q, prod[i][j], broken))
    nonzero = any(x for m in cx.boundary.values() for row in m for x in row)
    return DSquaredReport(not failures, failures, nonzero)


# -------------------------------------------------------------------- Smith normal form


def smith_normal_form(matrix: Sequence[Sequence[int]]) -> List[int]:
    """Nonzero invariant factors d_1 | d_2 | ... of an integer matrix (Python integers,
    so no overflow)."""
    A = [[int(x) for x in row] for row in matrix]
    m = len(A)
    n = len(A[0]) if m else 0
    diag = []
    t = 0
    while t < min(m, n):
        # pivot: smallest nonzero magnitude in the remaining block
        best = None
        for i in range(t, m):
            for j in range(t, n):
                if A[i][j] and (best is None or abs(A[i][j]) < abs(A[best[0]][best[1]])):
                    best = (i, j)
        if best is None:
            break
        i, j = best
        A[t], A[i] = A[i], A[t]
        for row in A:
            row[t], row[j] = row[j], row[t]
        while True:
            p = A[t][t]
            done = True
            for i in range(t + 1, m):
                qt = A[i][t] // p
                if qt:
                    A[i] = [a - qt * b for a, b in zip(A[i], A[t])]
                if A[i][t]:
                    done = False
            for j in range(t + 1, n):
                qt = A[t][j] // p
                if qt:
                    for row in A:
                        row[j] -= qt * row[t]
                if A[t][j]:
                    done = False
            if not done:
                # move the smallest remainder in row/column t to the pivot and repeat
                cand = [(abs(A[i][t]), i, t) for i in range(t + 1, m) if A[i][t]]
                cand += [(abs(A[t][j]), t, j) for j in range(t + 1, n) if A[t][j]]
                _, i, j = min(cand)
                if j == t:
                    A[t], A[i] = A[i], A[t]
                else:
                    for row in A:
                        row[t], row[j] = row[j], row[t]
                continue
            # divisibility: every remaining entry must be a multiple of the pivot
            bad = [(i, j) for i in range(t + 1, m) for j in range(t + 1, n) if A[i][j] % p]
            if bad:
                i, _ = bad[0]
                A[t] = [a + b for a, b in zip(A[t], A[i])]
                continue
            break
        diag.append(abs(A[t][t]))
        t += 1
    return diag


@dataclass
class HomologyResult:
    betti: List[int]
    torsion: List[List[int]]
    euler_generators: int
    euler_betti: int

    def to_dict(self) -> dict:
        return {"betti": self.betti, "torsion": self.torsion}


def smith_homology(cx: ChainComplex) -> HomologyResult:
    if not verify_d_squared(cx).passed:
        raise PreconditionError("boundary does not square to zero")
    ranks = cx.ranks()
    top = len(ranks) - 1
    factors = {k: smith_normal_form(cx.matrix(k)) if ranks[k] and ranks[k - 1] else [] for k in range(1, top + 1)}
    betti, torsion = [], []
    for k in range(top + 1):
        r_k = len(factors.get(k, []))
        r_up = len(factors.get(k + 1, []))
        betti.append(ranks[k] - r_k - r_up)
        torsion.append([d for d in factors.get(k + 1, []) if d > 1])
    eb = sum((-1) ** k * b for k, b in enumerate(betti))
    return HomologyResult(betti, torsion, cx.euler_characteristic(), eb)
