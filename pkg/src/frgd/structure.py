"""Graph-directed constructions, walks, attractor clouds and vertex sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ModelError, ResourceLimitError
from .geometry import (EPS_GEO, IFSModel, Similitude, apply, cluster_points, compose,
                       fixed_point, identity)

WALK_DEPTH_CAP = 20


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    map: Similitude

    @property
    def ratio(self) -> float:
        return self.map.ratio


class GraphConstruction:
    """States 0..M-1 and edges carrying similitudes; K_s = U psi_e K_f(e) over i(e)=s."""

    def __init__(self, states: Sequence[str], edges: Sequence[Edge], root: int = 0):
        self.states = list(states)
        self.edges = list(edges)
        self.root = int(root)
        for k, e in enumerate(self.edges):
            if not (0 <= e.src < self.M and 0 <= e.dst < self.M):
                raise ModelError(f"edge {k} refers to an unknown state")
        self.out_edges = [[k for k, e in enumerate(self.edges) if e.src == s]
                          for s in range(self.M)]

    @property
    def M(self) -> int:
        return len(self.states)

    def adjacency_counts(self) -> np.ndarray:
        a = np.zeros((self.M, self.M), dtype=np.int64)
        for e in self.edges:
            a[e.src, e.dst] += 1
        return a

    def reachable(self, start: int | None = None) -> set[int]:
        start = self.root if start is None else start
        seen, stack = {start}, [start]
        while stack:
            s = stack.pop()
            for k in self.out_edges[s]:
                t = self.edges[k].dst
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return seen

    def strongly_connected(self) -> bool:
        return all(len(self.reachable(s)) == self.M for s in range(self.M))

    @classmethod
    def from_ifs(cls, ifs: IFSModel, label: str = "K") -> "GraphConstruction":
        return cls([label], [Edge(0, 0, m) for m in ifs.maps])


def simple_cycles(g: GraphConstruction, max_len: int | None = None) -> list[tuple]:
    """All simple cycles as edge-index tuples, each listed once (from its lowest state)."""
    out = []
    max_len = g.M if max_len is None else max_len

    def dfs(start, s, path, visited):
        for k in g.out_edges[s]:
            t = g.edges[k].dst
            if t == start:
                out.append(tuple(path + [k]))
            elif t > start and t not in visited and len(path) + 1 < max_len:
                visited.add(t)
                dfs(start, t, path + [k], visited)
                visited.discard(t)

    for start in range(g.M):
        dfs(start, start, [], {start})
    return out


def closed_walks(g: GraphConstruction, max_len: int) -> list[tuple]:
    """All closed walks of length 1..max_len, any start."""
    out = []
    for s in range(g.M):
        frontier = [((), s)]
        for _ in range(max_len):
            nxt = []
            for path, st in frontier:
                for k in g.out_edges[st]:
                    p = path + (k,)
                    t = g.edges[k].dst
                    if t == s:
                        out.append(p)
                    nxt.append((p, t))
            frontier = nxt
    return out


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.valid:
            return "valid"
        return "invalid:\n" + "\n".join("  - " + v for v in self.violations)


def validate_construction(g: GraphConstruction) -> ValidationReport:
    rep = ValidationReport()
    if g.M > 8:
        rep.notes.append(f"{g.M} states: cycle enumeration may be slow")
    for s in range(g.M):
        if not g.out_edges[s]:
            rep.violations.append(f"state {g.states[s]!r} has no outgoing edge")
    for cyc in simple_cycles(g):
        prod = float(np.prod([g.edges[k].ratio for k in cyc]))
        if not prod < 1.0 - 1e-12:
            rep.violations.append(
                f"cycle {list(cyc)} has ratio product {prod:.6g} >= 1")
    missing = set(range(g.M)) - g.reachable()
    for s in sorted(missing):
        rep.violations.append(f"state {g.states[s]!r} not reachable from the root")
    return rep


@dataclass(frozen=True, eq=False)
class Walk:
    edges: tuple
    map: Similitude
    start: int
    end: int

    def __len__(self):
        return len(self.edges)

    @property
    def ratio(self) -> float:
        return self.map.ratio


def enumerate_walks(g: GraphConstruction, start: int, n: int,
                    cap: int = WALK_DEPTH_CAP) -> list[Walk]:
    """All length-n walks from start, lexicographic in edge indices."""
    if n < 0:
        raise ValueError("depth must be nonnegative")
    if n > cap:
        raise ResourceLimitError(f"walk depth {n} exceeds cap {cap}")
    walks = [Walk((), identity(), start, start)]
    for _ in range(n):
        nxt = []
        for w in walks:
            for k in g.out_edges[w.end]:
                e = g.edges[k]
                nxt.append(Walk(w.edges + (k,), compose(w.map, e.map), start, e.dst))
        walks = nxt
    return walks


def walks_up_to(g: GraphConstruction, start: int, n: int,
                cap: int = WALK_DEPTH_CAP) -> list[Walk]:
    """All walks of length 0..n from start, in breadth-first order."""
    if n > cap:
        raise ResourceLimitError(f"walk depth {n} exceeds cap {cap}")
    out = [Walk((), identity(), start, start)]
    frontier = out
    for _ in range(n):
        nxt = []
        for w in frontier:
            for k in g.out_edges[w.end]:
                e = g.edges[k]
                nxt.append(Walk(w.edges + (k,), compose(w.map, e.map), start, e.dst))
        out = out + nxt
        frontier = nxt
    return out


@dataclass
class BoundarySpec:
    """Declared boundary points V_s and auxiliary vertices (cut points) per state."""

    boundary: list
    aux: list

    def __post_init__(self):
        self.boundary = [np.asarray(b, dtype=float).reshape(-1, 2) for b in self.boundary]
        if not self.aux:
            self.aux = [np.zeros((0, 2)) for _ in self.boundary]
        self.aux = [np.asarray(a, dtype=float).reshape(-1, 2) for a in self.aux]

    def vertices(self, s: int, with_aux: bool = True) -> np.ndarray:
        if with_aux:
            return np.vstack([self.boundary[s], self.aux[s]])
        return self.boundary[s]


class FractalModel:
    def __init__(self, name: str, construction: GraphConstruction,
                 boundary: BoundarySpec, parameters: dict | None = None,
                 ifs: IFSModel | None = None):
        self.name = name
        self.construction = construction
        self.boundary = boundary
        self.parameters = dict(parameters or {})
        self.ifs = ifs
        if len(boundary.boundary) != construction.M:
            raise ModelError("boundary spec must list every state")
        self._radii = None

    @property
    def g(self) -> GraphConstruction:
        return self.construction

    @property
    def M(self) -> int:
        return self.construction.M

    def vertices(self, s: int, with_aux: bool = True) -> np.ndarray:
        return self.boundary.vertices(s, with_aux)

    def seeds(self) -> list[np.ndarray]:
        """One point of each attractor K_s."""
        g = self.g
        out = [None] * g.M
        for s in range(g.M):
            if len(self.boundary.boundary[s]):
                out[s] = self.boundary.boundary[s][0]
        # fixed points of cycles through seedless states
        for cyc in simple_cycles(g):
            m = identity()
            for k in cyc:
                m = compose(m, g.edges[k].map)
            s0 = g.edges[cyc[0]].src
            if out[s0] is None and m.ratio < 1:
                out[s0] = fixed_point(m)
        # propagate along edges
        changed = True
        while changed:
            changed = False
            for s in range(g.M):
                if out[s] is not None:
                    continue
                for k in g.out_edges[s]:
                    e = g.edges[k]
                    if out[e.dst] is not None:
                        out[s] = apply(e.map, out[e.dst])
                        changed = True
                        break
        for s in range(g.M):
            if out[s] is None:
                raise ModelError(f"state {g.states[s]!r} has no seed point")
        return [np.asarray(p, dtype=float) for p in out]

    def bounding_disks(self):
        """Centers c_s and radii R_s with K_s inside the closed disk B(c_s, R_s)."""
        if self._radii is not None:
            return self._radii
        g = self.g
        seeds = self.seeds()
        centers = []
        for s in range(g.M):
            b = self.boundary.boundary[s]
            centers.append(b.mean(axis=0) if len(b) else seeds[s])
        R = np.zeros(g.M)
        for _ in range(10000):
            newR = np.zeros(g.M)
            for e in g.edges:
                d = np.linalg.norm(apply(e.map, centers[e.dst]) - centers[e.src])
                newR[e.src] = max(newR[e.src], d + e.ratio * R[e.dst])
            if np.allclose(newR, R, rtol=1e-13, atol=1e-15):
                R = newR
                break
            R = newR
        else:
            raise ModelError("bounding radii did not converge; check cycle ratios")
        self._radii = (centers, R * (1 + 1e-9) + 1e-12)
        return self._radii

    def diameter_bound(self, s: int) -> float:
        return 2 * self.bounding_disks()[1][s]


def approximate_attractor(m: FractalModel, resolution: float, state: int | None = None,
                          max_points: int = 2_000_000) -> list[np.ndarray]:
    """Point cloud per state with every attractor point within `resolution` of it."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    g = m.g
    seeds = m.seeds()
    diam = np.array([m.diameter_bound(s) for s in range(g.M)])
    states = range(g.M) if state is None else [state]
    out = [np.zeros((0, 2)) for _ in range(g.M)]
    lin = np.array([e.map.linear for e in g.edges])
    tr = np.array([e.map.translation for e in g.edges])
    src = np.array([e.src for e in g.edges])
    dst = np.array([e.dst for e in g.edges])
    ratio = np.array([e.ratio for e in g.edges])
    for s in states:
        # frontier of composite maps (A, t), current ratio and final state
        A = np.eye(2)[None]
        t = np.zeros((1, 2))
        r = np.ones(1)
        fs = np.array([s])
        done = []
        while len(r):
            fin = r * diam[fs] < resolution
            if fin.any():
                seed = np.array([seeds[f] for f in fs[fin]])
                done.append(np.einsum("kij,kj->ki", A[fin], seed) + t[fin])
            A, t, r, fs = A[~fin], t[~fin], r[~fin], fs[~fin]
            if not len(r):
                break
            # expand every remaining item along every edge out of its state
            pairs = np.nonzero(fs[:, None] == src[None, :])
            i, k = pairs
            A, t = (np.einsum("kij,kjl->kil", A[i], lin[k]),
                    np.einsum("kij,kj->ki", A[i], tr[k]) + t[i])
            r = r[i] * ratio[k]
            fs = dst[k]
            if len(r) + sum(len(d) for d in done) > max_points:
                raise ResourceLimitError("attractor cloud exceeds point cap")
        out[s] = np.vstack(done) if done else np.zeros((0, 2))
    return out


def vertex_approximation(m: FractalModel, n: int, state: int | None = None,
                         with_aux: bool = False, cap: int = WALK_DEPTH_CAP):
    """V_n of a state: union of walk images of declared vertex sets, deduplicated.

    Returns (points, walks, images) where images[k] holds the indices into points
    of walk k's vertex images.
    """
    if n < 0:
        raise ValueError("level must be nonnegative")
    s = m.g.root if state is None else state
    walks = enumerate_walks(m.g, s, n, cap=cap)
    chunks, owner = [], []
    for k, w in enumerate(walks):
        v = m.vertices(w.end, with_aux)
        chunks.append(apply(w.map, v) if len(v) else np.zeros((0, 2)))
        owner.append(len(v))
    allp = np.vstack(chunks) if chunks else np.zeros((0, 2))
    reps, labels = cluster_points(allp, EPS_GEO)
    images, pos = [], 0
    for cnt in owner:
        images.append(labels[pos:pos + cnt])
        pos += cnt
    return reps, walks, images


@dataclass
class ConsistencyReport:
    violations: list = field(default_factory=list)
    intersections: list = field(default_factory=list)  # (walk a, walk b, point)
    pairs_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        head = f"checked {self.pairs_checked} cell pairs, {len(self.intersections)} contacts"
        if self.ok:
            return head + ": consistent"
        return head + ":\n" + "\n".join("  - " + v for v in self.violations)


def check_boundary_consistency(m: FractalModel, depth: int) -> ConsistencyReport:
    """Finite-depth check that cells meet only at their declared boundary images.

    Intersections are detected heuristically: clouds at 0.02 cell diameter, match
    tolerance 0.05 of the smaller cell diameter.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    g = m.g
    rep = ConsistencyReport()
    # children count and vertex inclusion V_s u aux_s inside the level-1 images
    for s in range(g.M):
        if len(g.out_edges[s]) < 2:
            rep.violations.append(f"state {g.states[s]!r} has fewer than two children")
        v = m.vertices(s, True)
        if not len(v):
            continue
        imgs = [apply(g.edges[k].map, m.vertices(g.edges[k].dst, True))
                for k in g.out_edges[s]]
        imgs = np.vstack([i for i in imgs if len(i)]) if imgs else np.zeros((0, 2))
        if len(imgs) == 0:
            rep.violations.append(f"state {g.states[s]!r}: no child vertices")
            continue
        d, _ = cKDTree(imgs).query(v)
        for p, dist in zip(v, d):
            if dist > EPS_GEO:
                rep.violations.append(
                    f"state {g.states[s]!r}: vertex ({p[0]:.6g}, {p[1]:.6g}) is not "
                    f"the image of a child vertex")

    # all pairs of distinct cells of equal depth, for every depth 1..d
    diam = np.array([m.diameter_bound(s) for s in range(g.M)])
    centers, radii = m.bounding_disks()
    base = {}
    for s in range(g.M):
        base[s] = approximate_attractor(m, 0.02 * diam[s], state=s)[s]

    for n in range(1, depth + 1):
        walks = enumerate_walks(g, g.root, n)
        cen = np.array([apply(w.map, centers[w.end]) for w in walks])
        rad = np.array([w.ratio * radii[w.end] for w in walks])
        tree = cKDTree(cen)
        cand = tree.query_pairs(2 * rad.max() + 1e-12 if len(rad) else 0.0)
        for a, b in sorted(cand):
            wa, wb = walks[a], walks[b]
            if np.linalg.norm(cen[a] - cen[b]) > rad[a] + rad[b] + 1e-12:
                continue
            da, db = wa.ratio * diam[wa.end], wb.ratio * diam[wb.end]
            tol = 0.05 * min(da, db)
            pa = apply(wa.map, base[wa.end])
            pb = apply(wb.map, base[wb.end])
            dist, _ = cKDTree(pb).query(pa, distance_upper_bound=tol)
            near = pa[np.isfinite(dist)]
            rep.pairs_checked += 1
            if not len(near):
                continue
            va = apply(wa.map, m.vertices(wa.end, True))
            vb = apply(wb.map, m.vertices(wb.end, True))
            # shared boundary images of the two cells, to which contacts are snapped
            common = np.zeros((0, 2))
            if len(va) and len(vb):
                d, _ = cKDTree(vb).query(va)
                common = va[d <= EPS_GEO]
            reps, _ = cluster_points(near, 2 * tol)
            for p in reps:
                if len(common):
                    dc = np.linalg.norm(common - p, axis=1)
                    if dc.min() <= 2 * tol:
                        rep.intersections.append((wa.edges, wb.edges, common[np.argmin(dc)]))
                        continue
                rep.intersections.append((wa.edges, wb.edges, p))
                rep.violations.append(
                    f"cells {list(wa.edges)} and {list(wb.edges)} meet near "
                    f"({p[0]:.4g}, {p[1]:.4g}) away from shared boundary images")
    return rep
