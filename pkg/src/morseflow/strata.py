"""Combinatorics of the compactified moduli spaces: the succession order, critical
sequences, strata of Mbar(p,q), Dbar(p), Wbar(p,q) with face closures, evaluation on
levels, and the explicit corner charts near broken lines."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import ConsistencyError, DomainError, IncompleteInputError, LevelError, PreconditionError
from .flow import GradientFlow
from .manifold import ManifoldPoint
from .moduli import FlowLineClass, ModuliEngine, launch_point, moduli_curve
from .morse import CriticalPoint

Pair = Tuple[str, str]

# -------------------------------------------------------------------- poset


@dataclass
class SuccessionPoset:
    """Strict order p > q on critical point labels (transitively closed)."""

    labels: List[str]
    values: Dict[str, float]
    indices: Dict[str, int]
    relations: Set[Pair]

    def succeeds(self, p: str, q: str) -> bool:
        return (p, q) in self.relations

    def below(self, p: str) -> List[str]:
        return sorted(q for (a, q) in self.relations if a == p)

    def __len__(self):
        return len(self.relations)


def transitive_closure(labels: Sequence[str], direct: Iterable[Pair]) -> Set[Pair]:
    idx = {l: i for i, l in enumerate(labels)}
    n = len(labels)
    reach = np.zeros((n, n), dtype=bool)
    for a, b in direct:
        reach[idx[a], idx[b]] = True
    for k in range(n):
        reach |= reach[:, k : k + 1] & reach[k : k + 1, :]
    return {(labels[i], labels[j]) for i, j in zip(*np.nonzero(reach))}


def succession_poset(criticals: Sequence[CriticalPoint], direct: Iterable[Pair]) -> SuccessionPoset:
    """Close the directly observed nonempty pairs; a cycle or a relation that does not
    decrease f signals a numeric misclassification."""
    labels = sorted(c.label for c in criticals)
    values = {c.label: c.value for c in criticals}
    rel = transitive_closure(labels, direct)
    for a, b in sorted(rel):
        if a == b:
            raise ConsistencyError(f"succession relation has a cycle through {a}")
        if not values[a] > values[b]:
            raise ConsistencyError(f"relation {a} > {b} does not decrease f")
    return SuccessionPoset(labels, values, {c.label: c.index for c in criticals}, rel)


def observed_relations(engine: ModuliEngine, criticals: Sequence[CriticalPoint]) -> Set[Pair]:
    """Pairs with M(p, q) nonempty seen by the orbit search or by the omega-limits of the
    descending-sphere mesh of p."""
    out: Set[Pair] = set()
    for p in criticals:
        if p.index == 0:
            continue
        for tr in engine.mesh_run(p).trajectories:
            if tr.status == "converged" and tr.critical is not None and tr.critical is not p:
                out.add((p.label, tr.critical.label))
        for q in criticals:
            if p.index - q.index == 1 and q.value < p.value and engine.orbits(p, q):
                out.add((p.label, q.label))
    return out


# -------------------------------------------------------------------- sequences


@dataclass(frozen=True)
class CriticalSequence:
    """Strictly descending chain (r_0, ..., r_{k+1}); a single element has length -1."""

    labels: Tuple[str, ...]

    @property
    def head(self) -> str:
        return self.labels[0]

    @property
    def tail(self) -> str:
        return self.labels[-1]

    @property
    def length(self) -> int:
        return len(self.labels) - 2

    @property
    def pairs(self) -> List[Pair]:
        return list(zip(self.labels, self.labels[1:]))

    def __str__(self):
        return "(" + ",".join(self.labels) + ")"


def _sort_key(seq: Tuple[str, ...]):
    return (len(seq), seq)


def critical_sequences(poset: SuccessionPoset, head: str, tail: Optional[str] = None) -> List[CriticalSequence]:
    out = []

    def extend(chain):
        last = chain[-1]
        if tail is None or last == tail:
            if tail is None or len(chain) > 1 or head == tail:
                out.append(chain)
        if tail is not None and last == tail:
            return
        for nxt in poset.below(last):
            if tail is None or nxt == tail or poset.succeeds(nxt, tail):
                extend(chain + (nxt,))

    extend((head,))
    return [CriticalSequence(s) for s in sorted(out, key=_sort_key)]


# -------------------------------------------------------------------- moduli data


@dataclass
class ModuliTable:
    """Component data of the moduli spaces M(a, b) that the strata are built from.

    ``counts[(a, b)]`` is the number of components of M(a, b); ``euler[(a, b)]`` the
    compactly supported Euler characteristic of each component (points 1, open arcs -1,
    circles 0); ``endpoints[(a, b)][i]`` lists the broken pairs (r, j, k) in the closure
    of component i, with j a component of M(a, r) and k one of M(r, b).
    """

    indices: Dict[str, int]
    counts: Dict[Pair, int] = field(default_factory=dict)
    euler: Dict[Pair, List[int]] = field(default_factory=dict)
    endpoints: Dict[Pair, List[List[Tuple[str, int, int]]]] = field(default_factory=dict)

    def count(self, a: str, b: str) -> int:
        if (a, b) not in self.counts:
            raise IncompleteInputError(f"no moduli data for the pair ({a}, {b})")
        return self.counts[(a, b)]

    def component_euler(self, a: str, b: str, i: int) -> int:
        if (a, b) in self.euler:
            return self.euler[(a, b)][i]
        return (-1) ** (self.indices[a] - self.indices[b] - 1)


def moduli_table(engine: ModuliEngine, poset: SuccessionPoset) -> ModuliTable:
    """Counts from the orbit search (index difference 1) and moduli curves (2)."""
    crit = {c.label: c for c in engine.flow.criticals}
    table = ModuliTable(dict(poset.indices))
    for a, b in sorted(poset.relations):
        p, q = crit[a], crit[b]
        diff = p.index - q.index
        if diff == 1:
            n = len(engine.orbits(p, q))
            table.counts[(a, b)] = n
            table.euler[(a, b)] = [1] * n
        elif diff == 2 and p.index == 2:
            curve = moduli_curve(engine, p, q)
            table.counts[(a, b)] = len(curve.components)
            table.euler[(a, b)] = [-1 if comp.endpoints else 0 for comp in curve.components]
            ends = []
            for comp in curve.components:
                rows = []
                for e in comp.endpoints:
                    r = e.intermediate
                    j = _class_index(engine.orbits(p, r), e.first)
                    k = _class_index(engine.orbits(r, q), e.second)
                    rows.append((r.label, j, k))
                ends.append(rows)
            table.endpoints[(a, b)] = ends
    return table


def _class_index(classes: List[FlowLineClass], cls: FlowLineClass) -> int:
    for i, c in enumerate(classes):
        if c is cls:
            return i
    raise ConsistencyError("endpoint class is not among the computed classes")


# -------------------------------------------------------------------- strata


@dataclass
class Stratum:
    datum: Tuple[str, ...]
    k: int
    dim: int
    components: int
    s: Optional[int] = None  # position of the W factor for Wbar strata
    euler: int = 0  # compactly supported Euler characteristic of the stratum

    def label(self) -> str:
        body = ",".join(self.datum)
        return f"({body})" if self.s is None else f"({body};s={self.s})"


@dataclass
class Stratification:
    space: str
    head: str
    tail: Optional[str]
    dim: int
    strata: List[Stratum]
    # component-level faces: (stratum label, component tuple) -> set of codim-1 (label, tuple)
    faces: Dict[Tuple[str, Tuple[int, ...]], Set[Tuple[str, Tuple[int, ...]]]] = field(default_factory=dict)

    def by_k(self, k: int) -> List[Stratum]:
        return [s for s in self.strata if s.k == k]

    def table(self) -> Dict[int, Tuple[int, List[int]]]:
        """k -> (component count, dimensions present)."""
        out = {}
        for s in self.strata:
            n, dims = out.get(s.k, (0, []))
            out[s.k] = (n + s.components, sorted(set(dims + [s.dim])))
        return out

    def euler(self, min_k: int = 0) -> int:
        return int(sum(s.euler for s in self.strata if s.k >= min_k))

    def face_counts(self) -> Dict[Tuple[str, Tuple[int, ...]], int]:
        return {key: len(v) for key, v in self.faces.items()}

    def manifold_with_faces(self) -> bool:
        """Every codimension-k component lies in exactly k codimension-1 closures."""
        ks = {s.label(): s.k for s in self.strata}
        return all(len(v) == ks[key[0]] for key, v in self.faces.items())

    def to_dict(self) -> dict:
        return {
            "space": self.space,
            "head": self.head,
            "tail": self.tail,
            "dim": self.dim,
            "strata": [
                {"I": list(s.datum), "s": s.s, "k": s.k, "dim": s.dim, "components": s.components}
                for s in self.strata
            ],
        }


def _chain_dim(chain: Sequence[str], ind: Dict[str, int]) -> int:
    return sum(ind[a] - ind[b] - 1 for a, b in zip(chain, chain[1:]))


def _chain_components(chain, table: ModuliTable) -> List[Tuple[int, ...]]:
    ranges = [range(table.count(a, b)) for a, b in zip(chain, chain[1:])]
    return list(itertools.product(*ranges))


def _chain_euler(chain, comp, table: ModuliTable) -> int:
    e = 1
    for (a, b), i in zip(zip(chain, chain[1:]), comp):
        e *= table.component_euler(a, b, i)
    return e


def stratification(space: str, poset: SuccessionPoset, table: ModuliTable, head: str,
                   tail: Optional[str] = None) -> Stratification:
    ind = poset.indices
    if space == "Mbar":
        if tail is None:
            raise PreconditionError("Mbar needs a tail")
        return _mbar(poset, table, head, tail)
    if space == "Dbar":
        return _dbar(poset, table, head)
    if space == "Wbar":
        if tail is None:
            raise PreconditionError("Wbar needs a tail")
        return _wbar(poset, table, head, tail)
    raise PreconditionError(f"unknown space {space!r}; expected Mbar, Dbar or Wbar")


def _check_dim(datum, dim):
    if dim < 0:
        raise ConsistencyError(f"stratum {datum} has negative dimension {dim}")


def _mbar(poset, table, head, tail):
    ind = poset.indices
    strata, comps = [], {}
    for seq in critical_sequences(poset, head, tail):
        dim = _chain_dim(seq.labels, ind)
        _check_dim(seq.labels, dim)
        cs = _chain_components(seq.labels, table)
        st = Stratum(seq.labels, seq.length, dim, len(cs),
                     euler=sum(_chain_euler(seq.labels, c, table) for c in cs))
        strata.append(st)
        comps[st.label()] = (seq.labels, cs)
    out = Stratification("Mbar", head, tail, ind[head] - ind[tail] - 1, strata)
    out.faces = _faces(strata, comps, table, open_tail=False)
    return out


def _dbar(poset, table, head):
    ind = poset.indices
    strata, comps = [], {}
    for seq in critical_sequences(poset, head):
        dim = _chain_dim(seq.labels, ind) + ind[seq.tail]
        _check_dim(seq.labels, dim)
        cs = _chain_components(seq.labels, table)
        e_tail = (-1) ** ind[seq.tail]  # D(tail) is an open disk
        st = Stratum(seq.labels, seq.length + 1, dim, len(cs),
                     euler=sum(_chain_euler(seq.labels, c, table) * e_tail for c in cs))
        strata.append(st)
        comps[st.label()] = (seq.labels, cs)
    out = Stratification("Dbar", head, None, ind[head], strata)
    out.faces = _faces(strata, comps, table, open_tail=True)
    return out


def _wbar(poset, table, head, tail):
    ind = poset.indices
    strata = []
    for seq in critical_sequences(poset, head, tail):
        labels = seq.labels
        k_base = seq.length
        # W factor between consecutive entries (strict step) ...
        for s in range(len(labels) - 1):
            strata.append(_w_stratum(labels, s, labels[s], labels[s + 1], k_base, table, ind))
        # ... or on a repeated entry r_s = r_{s+1} (a constant line)
        for s in range(len(labels)):
            rep = labels[: s + 1] + labels[s:]
            strata.append(_w_stratum(rep, s, labels[s], labels[s], k_base + 1, table, ind))
    strata.sort(key=lambda st: (st.k, st.datum, st.s))
    return Stratification("Wbar", head, tail, ind[head] - ind[tail], strata)


def _w_stratum(labels, s, a, b, k, table, ind):
    left, right = labels[: s + 1], labels[s + 1 :]
    dim = _chain_dim(left, ind) + (ind[a] - ind[b]) + _chain_dim(right, ind)
    _check_dim(labels, dim)
    n_left = len(_chain_components(left, table))
    n_right = len(_chain_components(right, table))
    n_w = 1 if a == b else table.count(a, b)
    return Stratum(tuple(labels), k, dim, n_left * n_w * n_right, s=s)


def _faces(strata, comps, table: ModuliTable, open_tail: bool):
    """Component-level closure relation between each stratum and the codimension-1
    strata (k = 1 for Mbar, k = 1 for Dbar)."""
    faces = {}
    codim1 = [s for s in strata if s.k == 1]
    for st in strata:
        chain, cs = comps[st.label()]
        for c in cs:
            hits = set()
            for f in codim1:
                fchain, fcs = comps[f.label()]
                for fc in fcs:
                    if _contains(fchain, fc, chain, c, table, open_tail):
                        hits.add((f.label(), fc))
            faces[(st.label(), c)] = hits
    return faces


def _contains(fchain, fc, chain, c, table: ModuliTable, open_tail: bool) -> bool:
    """Is the component ``c`` of stratum ``chain`` in the closure of component ``fc`` of
    the stratum ``fchain``?"""
    if fchain == chain:
        return fc == c
    pos = []
    j = 0
    for x in fchain:
        while j < len(chain) and chain[j] != x:
            j += 1
        if j == len(chain):
            return False
        pos.append(j)
    if pos[0] != 0:
        return False
    if pos[-1] != len(chain) - 1 and not open_tail:
        return False
    for n, (i0, i1) in enumerate(zip(pos, pos[1:])):
        sub = c[i0:i1]
        if i1 - i0 == 1:
            if sub[0] != fc[n]:
                return False
            continue
        if i1 - i0 != 2:
            raise IncompleteInputError(
                f"closure of M({fchain[n]}, {fchain[n + 1]}) through more than one break is not tabulated"
            )
        key = (fchain[n], fchain[n + 1])
        if key not in table.endpoints:
            raise IncompleteInputError(f"no endpoint table for M{key}")
        if (chain[i0 + 1], sub[0], sub[1]) not in table.endpoints[key][fc[n]]:
            return False
    # the open tail disk D(tail) of the face contains everything that continues below it
    return True


# -------------------------------------------------------------------- evaluation maps


def evaluate_on_levels(flow: GradientFlow, pieces: Sequence, levels: Sequence[float],
                       launch_radius: float = 1e-4) -> List[ManifoldPoint]:
    """Intersection of a generalized flow line with each level.

    ``pieces`` is either a chain of FlowLineClass (each ending where the next starts)
    or a single ManifoldPoint on an unbroken flow line.
    """
    crit_vals = [c.value for c in flow.criticals]
    for a in levels:
        if any(abs(a - v) < 1e-9 for v in crit_vals):
            raise LevelError(f"level {a} is a critical value")
    out = []
    for a in levels:
        if isinstance(pieces, ManifoldPoint) or (len(pieces) == 1 and isinstance(pieces[0], ManifoldPoint)):
            x = pieces if isinstance(pieces, ManifoldPoint) else pieces[0]
            fx = flow.func.f(x)
            if abs(fx - a) < 1e-12:
                out.append(x)
                continue
            tr = flow.integrate(x, level=a, direction=1 if a < fx else -1)
        else:
            for i, cls in enumerate(pieces):
                if i and cls.source is not pieces[i - 1].target:
                    raise PreconditionError("classes do not form a broken line")
            hit = [c for c in pieces if c.target.value < a < c.source.value]
            if len(hit) != 1:
                raise LevelError(f"level {a} does not cut the broken line exactly once")
            cls = hit[0]
            x0 = launch_point(flow, cls.source, cls.direction, launch_radius)
            tr = flow.integrate(x0, level=a)
        if tr.status != "reached-level":
            raise LevelError(f"flow line does not reach level {a} (status {tr.status})")
        out.append(tr.end)
    return out


def evaluation_injective(atlas, tuples: Sequence[Sequence[ManifoldPoint]], tol: float = 1e-6) -> bool:
    for i, a in enumerate(tuples):
        for b in tuples[i + 1 :]:
            if max(atlas.distance(x, y) for x, y in zip(a, b)) < tol:
                return False
    return True


# -------------------------------------------------------------------- corner charts

CORNER_VARIANTS = ("P", "Q+", "Q-", "collar")


def _unit_sphere_point(rng, dim, radius):
    v = rng.normal(size=dim)
    return radius * v / np.linalg.norm(v)


def _disk_point(rng, dim, radius):
    v = _unit_sphere_point(rng, dim, 1.0)
    return radius * rng.uniform() ** (1.0 / dim) * v


def _tangent_basis(v):
    """Orthonormal basis of the complement of v."""
    n = v.size
    q, _ = np.linalg.qr(np.column_stack([v, np.eye(n)]))
    return q[:, 1:n]


@dataclass
class CornerCheck:
    roundtrip_error: float
    jacobian: np.ndarray
    printed: np.ndarray
    column_error: float
    min_singular: float


@dataclass
class CornerChart:
    """Model corner map phi(x, y, s) of the local model and its left inverse alpha.

    For P the arguments are (v2 on S+, v1 on S-, s); for Q+ (v2 on S+, v1 in D, s);
    for Q- (v1 on S-, v2 in A, s); for the collar (s, v2 on S+, v1 on S-).  Images are
    pairs of points of V- x V+ written as (z1, z2, z3, z4).
    """

    variant: str
    epsilon: float
    dim_minus: int = 2
    dim_plus: int = 2
    theta: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.variant not in CORNER_VARIANTS:
            raise PreconditionError(f"unknown corner chart {self.variant!r}")
        if not self.epsilon > 0:
            raise PreconditionError("epsilon must be positive")
        if self.theta is None:
            eps = self.epsilon
            # descending manifold of the model: keep the upper level while moving along V-
            self.theta = lambda u, v2: np.sqrt(1.0 + (u @ u) / eps) * v2

    # --------------------------------------------------------------- domain

    def _on_sphere(self, v, name):
        if abs(v @ v - self.epsilon) > 1e-9 * max(1.0, self.epsilon):
            raise DomainError(f"{name} is not on the sphere of radius sqrt(epsilon)")

    def _in_disk(self, v, name):
        if not v @ v < self.epsilon:
            raise DomainError(f"{name} is not in the open disk of radius sqrt(epsilon)")

    def _check_s(self, s):
        if not 0.0 <= s < 1.0:
            raise DomainError(f"s = {s} is outside [0, 1)")

    def sample(self, rng):
        r = np.sqrt(self.epsilon)
        s = rng.uniform(0.0, 1.0)
        nm, npl = self.dim_minus, self.dim_plus
        if self.variant == "P":
            return (_unit_sphere_point(rng, npl, r), _unit_sphere_point(rng, nm, r), s)
        if self.variant == "Q+":
            return (_unit_sphere_point(rng, npl, r), _disk_point(rng, nm, r), s)
        if self.variant == "Q-":
            return (_unit_sphere_point(rng, nm, r), _disk_point(rng, npl, r), s)
        return (s, _unit_sphere_point(rng, npl, r), _unit_sphere_point(rng, nm, r))

    # --------------------------------------------------------------- maps

    def phi(self, *args, check: bool = True):
        eps = self.epsilon
        if self.variant == "P":
            v2, v1, s = args
            if check:
                self._on_sphere(v2, "v2"), self._on_sphere(v1, "v1"), self._check_s(s)
            c = np.sqrt(1.0 + s * s)
            return (s * v1, c * v2, c * v1, s * v2)
        if self.variant == "Q+":
            v2, v1, s = args
            if check:
                self._on_sphere(v2, "v2"), self._in_disk(v1, "v1"), self._check_s(s)
            K = np.sqrt(s * s * (v1 @ v1) + eps) / np.sqrt(eps)
            return (s * v1, K * v2, v1, s * K * v2)
        if self.variant == "Q-":
            v1, v2, s = args
            if check:
                self._on_sphere(v1, "v1"), self._in_disk(v2, "v2"), self._check_s(s)
            K = np.sqrt(s * s * (v2 @ v2) + eps) / np.sqrt(eps)
            return (s * K * v1, v2, K * v1, s * v2)
        s, v2, v1 = args
        if check:
            self._check_s(s), self._on_sphere(v2, "v2"), self._on_sphere(v1, "v1")
        th = self.theta(s * v1, v2)
        nth = np.linalg.norm(th)
        return (s * v1, th, nth / np.sqrt(eps) * v1, s * np.sqrt(eps) * th / nth)

    def alpha(self, z1, z2, z3, z4):
        r = np.sqrt(self.epsilon)
        if self.variant == "P":
            return (r * z2 / np.linalg.norm(z2), r * z3 / np.linalg.norm(z3), np.linalg.norm(z1) / r)
        if self.variant == "Q+":
            return (r * z2 / np.linalg.norm(z2), np.array(z3), np.linalg.norm(z4) / np.linalg.norm(z2))
        if self.variant == "Q-":
            return (r * z3 / np.linalg.norm(z3), np.array(z2), np.linalg.norm(z1) / np.linalg.norm(z3))
        return (np.linalg.norm(z4) / r, r * z2 / np.linalg.norm(z2), r * z3 / np.linalg.norm(z3))

    # --------------------------------------------------------------- checks

    def roundtrip_error(self, args) -> float:
        back = self.alpha(*self.phi(*args))
        return max(float(np.max(np.abs(np.atleast_1d(a) - np.atleast_1d(b)))) for a, b in zip(args, back))

    def _split(self, args):
        """(s, plus-part point, minus-part point, which of them live on spheres)."""
        if self.variant in ("P", "Q+"):
            v2, v1, s = args
        elif self.variant == "Q-":
            v1, v2, s = args
        else:
            s, v2, v1 = args
        return s, v1, v2

    def _join(self, s, v1, v2):
        if self.variant in ("P", "Q+"):
            return (v2, v1, s)
        if self.variant == "Q-":
            return (v1, v2, s)
        return (s, v2, v1)

    def boundary_jacobian(self, v1: np.ndarray, v2: np.ndarray, h: float = 1e-5) -> CornerCheck:
        """Finite-difference d(phi) at s = 0 on unit tangent vectors (d/ds, e1..., e2...),
        compared with the columns (v1,0,0,v2), (0,0,e1,0), (0,e2,0,0)."""
        r = np.sqrt(self.epsilon)
        nm, npl = v1.size, v2.size
        sphere1 = self.variant in ("P", "Q-", "collar")
        sphere2 = self.variant in ("P", "Q+", "collar")
        E1 = _tangent_basis(v1) if sphere1 else np.eye(nm)
        E2 = _tangent_basis(v2) if sphere2 else np.eye(npl)

        def flat(s, a, b):
            return np.concatenate(self.phi(*self._join(s, a, b), check=False))

        def move(v, e, t, on_sphere):
            w = v + t * e
            return r * w / np.linalg.norm(w) if on_sphere else w

        cols, printed = [], []
        f0, f1, f2 = flat(0.0, v1, v2), flat(h, v1, v2), flat(2 * h, v1, v2)
        cols.append((-3 * f0 + 4 * f1 - f2) / (2 * h))
        printed.append(np.concatenate([v1, np.zeros(npl), np.zeros(nm), v2]))
        for e in E1.T:
            d = (flat(0.0, move(v1, e, h, sphere1), v2) - flat(0.0, move(v1, e, -h, sphere1), v2)) / (2 * h)
            cols.append(d)
            printed.append(np.concatenate([np.zeros(nm), np.zeros(npl), e, np.zeros(npl)]))
        for e in E2.T:
            d = (flat(0.0, v1, move(v2, e, h, sphere2)) - flat(0.0, v1, move(v2, e, -h, sphere2))) / (2 * h)
            cols.append(d)
            printed.append(np.concatenate([np.zeros(nm), e, np.zeros(nm), np.zeros(npl)]))
        J = np.column_stack(cols)
        P = np.column_stack(printed)
        sv = np.linalg.svd(J, compute_uv=False)
        return CornerCheck(0.0, J, P, float(np.max(np.abs(J - P))), float(sv[-1]))


def corner_chart(variant: str, epsilon: float, dim_minus: int = 2, dim_plus: int = 2) -> CornerChart:
    return CornerChart(variant, epsilon, dim_minus, dim_plus)


def corner_check(variant: str, epsilon: float, samples: int, seed: int = 0,
                 dim_minus: int = 2, dim_plus: int = 2) -> CornerCheck:
    """Round-trip alpha(phi) on random samples plus the s = 0 derivative at one boundary point."""
    chart = corner_chart(variant, epsilon, dim_minus, dim_plus)
    rng = np.random.default_rng(seed)
    err = 0.0
    for _ in range(samples):
        err = max(err, chart.roundtrip_error(chart.sample(rng)))
    s, v1, v2 = chart._split(chart.sample(rng))
    if variant == "Q+":
        v1 = _disk_point(rng, dim_minus, np.sqrt(epsilon))
    if variant == "Q-":
        v2 = _disk_point(rng, dim_plus, np.sqrt(epsilon))
    check = chart.boundary_jacobian(v1, v2)
    check.roundtrip_error = err
    return check
