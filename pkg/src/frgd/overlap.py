"""Overlap audits of a raw IFS: neighbor maps, overlapping chains, decompositions.

Intersections of attractor copies are decided from point clouds, so every
verdict here is heuristic evidence at finite depth, never a proof.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, cKDTree

from .errors import ResourceLimitError
from .geometry import (IFSModel, Similitude, apply, canonical_keys, cluster_points,
                       compose, invert, word_str)
from .structure import (BoundarySpec, Edge, FractalModel, GraphConstruction,
                        approximate_attractor)

log = logging.getLogger(__name__)

DEPTH_CAP = 8
FAT_FRACTION = 0.1  # intersection diameter / smaller cell diameter above which overlap is "fat"
TOUCH_RES, TOUCH_TOL = 0.02, 0.05  # cloud resolution and match tolerance for contact
FINE_RES, FINE_TOL = 0.004, 0.01  # finer clouds for fat-overlap and containment decisions
RATIO_SLACK = 1e-9
HEURISTIC_NOTE = ("intersections decided from attractor point clouds; "
                  "'fat' means intersection diameter > 0.1 of the smaller copy")


# word tables ---------------------------------------------------------------

class WordTable:
    """All words of length <= depth with composite maps, in level then lexicographic order."""

    def __init__(self, ifs: IFSModel, depth: int):
        if depth > DEPTH_CAP:
            raise ResourceLimitError(f"depth {depth} exceeds cap {DEPTH_CAP}")
        N = ifs.n
        total = sum(N ** k for k in range(depth + 1))
        if total > 2_000_000:
            raise ResourceLimitError(f"{total} words at depth {depth}")
        lin = np.array([m.linear for m in ifs.maps])
        tr = np.array([m.translation for m in ifs.maps])
        As, ts, codes, lens = [np.eye(2)[None]], [np.zeros((1, 2))], [np.zeros(1, np.int64)], [0]
        A, t, c = As[0], ts[0], codes[0]
        for n in range(1, depth + 1):
            A = np.einsum("kij,mjl->kmil", A, lin).reshape(-1, 2, 2)
            t = (np.einsum("kij,mj->kmi", As[-1], tr) + ts[-1][:, None, :]).reshape(-1, 2)
            c = (codes[-1][:, None] * N + np.arange(N)[None, :]).reshape(-1)
            As.append(A)
            ts.append(t)
            codes.append(c)
            lens.append(n)
        self.N = N
        self.A = np.concatenate(As)
        self.t = np.concatenate(ts)
        self.code = np.concatenate(codes)
        self.length = np.concatenate([np.full(len(c_), n) for c_, n in zip(codes, lens)])
        self.ratio = np.sqrt(np.abs(self.A[:, 0, 0] * self.A[:, 1, 1] - self.A[:, 0, 1] * self.A[:, 1, 0]))

    def __len__(self):
        return len(self.code)

    def word(self, i) -> tuple:
        n, c = int(self.length[i]), int(self.code[i])
        out = []
        for _ in range(n):
            out.append(c % self.N)
            c //= self.N
        return tuple(reversed(out))

    def map(self, i) -> Similitude:
        return Similitude(self.A[i], self.t[i])

    def is_prefix(self, i, j) -> np.ndarray:
        """Vectorized: word i is a prefix of word j (i, j index arrays)."""
        i, j = np.asarray(i), np.asarray(j)
        d = self.length[j] - self.length[i]
        ok = d >= 0
        p = np.where(ok, self.N ** np.maximum(d, 0), 1)
        return ok & (self.code[j] // p == self.code[i])


def _relative_maps(tab: WordTable, i, j):
    """Linear parts and translations of F_i^-1 F_j for index arrays i, j."""
    Ai, Aj = tab.A[i], tab.A[j]
    r2 = tab.ratio[i] ** 2
    AiT = np.transpose(Ai, (0, 2, 1)) / r2[:, None, None]
    return np.einsum("kij,kjl->kil", AiT, Aj), np.einsum("kij,kj->ki", AiT, tab.t[j] - tab.t[i])


# intersection oracle ---------------------------------------------------------

@dataclass
class Relation:
    touch: bool
    fat: bool = False
    region: float = 0.0  # intersection diameter relative to the smaller copy
    inside: bool = False  # hK within K
    outside: bool = False  # K within hK


class OverlapOracle:
    """Decides how K and hK meet, cached by canonical key of h."""

    def __init__(self, ifs: IFSModel):
        self.ifs = ifs
        g = GraphConstruction.from_ifs(ifs)
        self.model = FractalModel("ifs", g, BoundarySpec([np.zeros((0, 2))], []), ifs=ifs)
        centers, radii = self.model.bounding_disks()
        self.center, self.radius = np.asarray(centers[0]), float(radii[0])
        pts = self._cloud_raw(0.01 * 2 * self.radius)
        self.diam = _diameter(pts)
        self._clouds: dict = {}
        self.cache: dict = {}

    def _cloud_raw(self, res):
        return approximate_attractor(self.model, res, state=0)[0]

    def cloud(self, res):
        """(points, KD-tree) at resolution <= res, quantized to powers of two."""
        k = int(math.floor(math.log2(res / self.diam)))
        if k not in self._clouds:
            pts = self._cloud_raw(self.diam * 2.0 ** k)
            self._clouds[k] = (pts, cKDTree(pts))
        return self._clouds[k]

    def key(self, A, t) -> tuple:
        return canonical_keys(A, t, diameter=self.diam)[0]

    def relation(self, A, t, key=None) -> Relation:
        key = self.key(A, t) if key is None else key
        rel = self.cache.get(key)
        if rel is None:
            rel = self._compute(np.asarray(A), np.asarray(t))
            self.cache[key] = rel
        return rel

    def _compute(self, A, t) -> Relation:
        h = Similitude(A, t)
        ch = h.ratio
        # disks first
        hc = apply(h, self.center)
        if np.linalg.norm(hc - self.center) > self.radius * (1 + ch) + 1e-12:
            return Relation(False)
        small = self.diam * min(1.0, ch)
        K, Ktree = self.cloud(TOUCH_RES * small)
        hK = apply(h, self.cloud(TOUCH_RES * small / ch)[0])
        tol = TOUCH_TOL * small
        d, _ = Ktree.query(hK, distance_upper_bound=tol)
        near = hK[np.isfinite(d)]
        if not len(near):
            return Relation(False)
        # fine pass restricted to the neighbourhood of the coarse contacts
        Kf, Kftree = self.cloud(FINE_RES * small)
        hKf = apply(h, self.cloud(FINE_RES * small / ch)[0])
        ftol = FINE_TOL * small
        nd, _ = cKDTree(near).query(hKf, distance_upper_bound=2 * tol)
        cand = hKf[np.isfinite(nd)]
        df, _ = Kftree.query(cand, distance_upper_bound=ftol) if len(cand) else (np.zeros(0), None)
        fnear = cand[np.isfinite(df)]
        region = float(np.linalg.norm(np.ptp(fnear, axis=0))) / small if len(fnear) > 1 else 0.0
        rel = Relation(True, region > FAT_FRACTION, region)
        if rel.fat:
            if ch <= 1 + RATIO_SLACK:
                dd, _ = Kftree.query(hKf, distance_upper_bound=ftol)
                rel.inside = bool(np.all(np.isfinite(dd)))
            if ch >= 1 - RATIO_SLACK:
                hinv = invert(h)
                back = apply(hinv, self.cloud(FINE_RES * small)[0])
                dd, _ = self.cloud(FINE_RES * small / ch)[1].query(
                    back, distance_upper_bound=ftol / ch)
                rel.outside = bool(np.all(np.isfinite(dd)))
        return rel


def _diameter(pts) -> float:
    if len(pts) < 3:
        return float(np.max(np.linalg.norm(pts - pts[0], axis=1))) if len(pts) else 0.0
    try:
        hull = pts[ConvexHull(pts).vertices]
    except Exception:  # collinear clouds
        hull = pts[[np.argmin(pts[:, 0]), np.argmax(pts[:, 0]),
                    np.argmin(pts[:, 1]), np.argmax(pts[:, 1])]]
    diff = hull[:, None, :] - hull[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def dedup_words(tab: WordTable, idx, oracle: OverlapOracle) -> np.ndarray:
    """Keep one word per distinct map (the lexicographically smallest)."""
    idx = np.asarray(idx)
    keys = canonical_keys(tab.A[idx], tab.t[idx], diameter=oracle.diam)
    best: dict = {}
    for k, i in zip(keys, idx):
        j = best.get(k)
        if j is None or tab.word(i) < tab.word(j):
            best[k] = i
    return np.array(sorted(best.values(), key=lambda i: tab.word(i)), dtype=int)


def _disk_pairs(tab, oracle, ia, ib, same: bool):
    """Index pairs (a in ia, b in ib) whose bounding disks meet."""
    ca = apply_batch(tab, ia, oracle.center)
    cb = apply_batch(tab, ib, oracle.center)
    ra, rb = tab.ratio[ia] * oracle.radius, tab.ratio[ib] * oracle.radius
    if not len(ia) or not len(ib):
        return np.zeros((0, 2), dtype=int)
    tree = cKDTree(cb)
    hits = tree.query_ball_point(ca, ra + rb.max() + 1e-12)
    out = []
    for a, lst in enumerate(hits):
        for b in lst:
            if same and ib[b] <= ia[a]:
                continue
            if np.linalg.norm(ca[a] - cb[b]) <= ra[a] + rb[b] + 1e-12:
                out.append((ia[a], ib[b]))
    return np.array(out, dtype=int).reshape(-1, 2)


def apply_batch(tab: WordTable, idx, p):
    idx = np.asarray(idx, dtype=int)
    return np.einsum("kij,j->ki", tab.A[idx], np.asarray(p, dtype=float)) + tab.t[idx]


def _verdict(counts: list, increasing_means_growth=True) -> str:
    if len(counts) >= 3 and all(b > a for a, b in zip(counts[-3:], counts[-2:])):
        return "growth-detected"
    if len(counts) >= 2 and counts[-1] == counts[-2]:
        return "finite-evidence"
    return "inconclusive"


# neighbor maps --------------------------------------------------------------

@dataclass
class NeighborMapSet:
    depth: int
    counts: dict  # depth -> number of distinct neighbor maps
    keys: dict  # key -> first depth found
    witnesses: dict  # key -> (w, u)
    verdict: str
    note: str = HEURISTIC_NOTE

    def to_dict(self) -> dict:
        return {
            "kind": "neighbor_maps",
            "depth": self.depth,
            "counts": {str(d): c for d, c in sorted(self.counts.items())},
            "verdict": self.verdict,
            "witnesses": [[word_str(w), word_str(u)] for w, u in
                          list(self.witnesses.values())[:50]],
            "note": self.note,
        }

    def __str__(self):
        lines = [f"neighbor maps up to depth {self.depth} ({self.note})"]
        for d, c in sorted(self.counts.items()):
            lines.append(f"  depth {d}: {c}")
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)


def neighbor_maps(ifs: IFSModel, depth: int, cap: int = DEPTH_CAP,
                  oracle: OverlapOracle | None = None) -> NeighborMapSet:
    """Distinct h = F_w^-1 F_u over incomparable words with F_w K meeting F_u K, c_h in (c_*, 1/c_*)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > cap:
        raise ResourceLimitError(f"depth {depth} exceeds cap {cap}")
    oracle = oracle or OverlapOracle(ifs)
    tab = WordTable(ifs, depth)
    cs = ifs.min_ratio
    words = dedup_words(tab, np.arange(1, len(tab)), oracle)
    keys: dict = {}
    wit: dict = {}
    levels = sorted(set(tab.length[words].tolist()))
    by_level = {n: words[tab.length[words] == n] for n in levels}
    for n1 in levels:
        for n2 in levels:
            if n2 < n1:
                continue
            ia, ib = by_level[n1], by_level[n2]
            # ratio window prefilter on level representatives
            q = tab.ratio[ib].max() / tab.ratio[ia].min()
            q2 = tab.ratio[ib].min() / tab.ratio[ia].max()
            if q2 >= 1 / cs * (1 + RATIO_SLACK) or q <= cs * (1 - RATIO_SLACK):
                continue
            pairs = _disk_pairs(tab, oracle, ia, ib, same=(n1 == n2))
            if not len(pairs):
                continue
            a, b = pairs[:, 0], pairs[:, 1]
            comparable = tab.is_prefix(a, b) | tab.is_prefix(b, a)
            ratio = tab.ratio[b] / tab.ratio[a]
            ok = (~comparable & (ratio > cs * (1 + RATIO_SLACK))
                  & (ratio < (1 - RATIO_SLACK) / cs))
            a, b = a[ok], b[ok]
            if not len(a):
                continue
            dmax = np.maximum(tab.length[a], tab.length[b])
            for x, y in ((a, b), (b, a)):
                A, t = _relative_maps(tab, x, y)
                ks = canonical_keys(A, t, diameter=oracle.diam)
                for k, kk in enumerate(ks):
                    if kk in keys and keys[kk] <= dmax[k]:
                        continue
                    if not oracle.relation(A[k], t[k], kk).touch:
                        continue
                    if kk not in keys or dmax[k] < keys[kk]:
                        keys[kk] = int(dmax[k])
                        wit[kk] = (tab.word(x[k]), tab.word(y[k]))
    counts = {d: sum(1 for v in keys.values() if v <= d) for d in range(1, depth + 1)}
    verdict = _verdict([counts[d] for d in range(1, depth + 1)])
    return NeighborMapSet(depth, counts, keys, wit, verdict)


# chains -----------------------------------------------------------------

@dataclass
class ChainReport:
    delta: float
    lengths: dict  # depth -> longest chain length
    witnesses: dict  # depth -> list of words
    verdict: str
    note: str = HEURISTIC_NOTE

    def to_dict(self) -> dict:
        return {
            "kind": "chains",
            "delta": self.delta,
            "lengths": {str(d): n for d, n in sorted(self.lengths.items())},
            "witnesses": {str(d): [word_str(w) for w in ws]
                          for d, ws in sorted(self.witnesses.items())},
            "verdict": self.verdict,
            "note": self.note,
        }

    def __str__(self):
        lines = [f"longest {self.delta:.6g}-overlapping chains ({self.note})"]
        for d, n in sorted(self.lengths.items()):
            w = " ".join(word_str(x) for x in self.witnesses[d][:12])
            more = " ..." if len(self.witnesses[d]) > 12 else ""
            lines.append(f"  depth {d}: {n}  [{w}{more}]")
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)


def _fat_graph(tab, oracle, idx):
    """Remove contained copies from idx, then return (kept, fat-overlap components)."""
    idx = np.asarray(idx, dtype=int)
    pairs = _disk_pairs(tab, oracle, idx, idx, same=True)
    contained = set()
    fat_edges = []
    if len(pairs):
        a, b = pairs[:, 0], pairs[:, 1]
        pre_ab, pre_ba = tab.is_prefix(a, b), tab.is_prefix(b, a)
        A, t = _relative_maps(tab, a, b)
        ks = canonical_keys(A, t, diameter=oracle.diam)
        for k in range(len(a)):
            if pre_ab[k]:
                contained.add(int(b[k]))
                continue
            if pre_ba[k]:
                contained.add(int(a[k]))
                continue
            rel = oracle.relation(A[k], t[k], ks[k])
            if not rel.fat:
                continue
            if rel.inside:
                contained.add(int(b[k]))
            elif rel.outside:
                contained.add(int(a[k]))
            else:
                fat_edges.append((int(a[k]), int(b[k])))
    kept = np.array([i for i in idx if int(i) not in contained], dtype=int)
    pos = {int(i): k for k, i in enumerate(kept)}
    e = [(pos[x], pos[y]) for x, y in fat_edges if x in pos and y in pos]
    n = len(kept)
    if e:
        ei = np.array(e)
        G = coo_matrix((np.ones(len(e)), (ei[:, 0], ei[:, 1])), shape=(n, n))
    else:
        G = coo_matrix((n, n))
    _, lab = connected_components(G, directed=False)
    comps: dict = {}
    for k, l in enumerate(lab):
        comps.setdefault(int(l), []).append(int(kept[k]))
    groups = sorted(comps.values(), key=lambda c: min(tab.word(i) for i in c))
    return kept, [sorted(c, key=lambda i: tab.word(i)) for c in groups], e


def max_chain_length(ifs: IFSModel, delta: float, depth: int,
                     oracle: OverlapOracle | None = None) -> ChainReport:
    """Longest delta-overlapping chain among copies of depth <= d, for every d <= depth.

    A chain exists on a set of copies exactly when they are connected in the
    fat-overlap graph, so the longest chain in a ratio band [lam*delta, lam] is the
    largest connected component after dropping copies contained in others.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    oracle = oracle or OverlapOracle(ifs)
    tab = WordTable(ifs, depth)
    lengths, wits = {}, {}
    for d in range(1, depth + 1):
        words = dedup_words(tab, np.nonzero((tab.length >= 1) & (tab.length <= d))[0], oracle)
        ratios = np.unique(np.round(tab.ratio[words], 12))
        best, best_w = 0, []
        for lam in ratios[::-1]:
            band = words[(tab.ratio[words] <= lam * (1 + RATIO_SLACK))
                         & (tab.ratio[words] >= lam * delta * (1 - RATIO_SLACK))]
            if len(band) <= best:
                continue
            _, comps, _ = _fat_graph(tab, oracle, band)
            for c in comps:
                if len(c) > best:
                    best, best_w = len(c), [tab.word(i) for i in c]
        lengths[d], wits[d] = best, best_w
    verdict = _verdict([lengths[d] for d in range(1, depth + 1)])
    return ChainReport(delta, lengths, wits, verdict)


# decomposition ------------------------------------------------------------

@dataclass
class IslandType:
    words: list  # reference island (words in K coordinates)
    boundary: list = field(default_factory=list)


@dataclass
class Decomposition:
    success: bool
    message: str
    types: list = field(default_factory=list)  # IslandType; index 0 is K itself
    edges: list = field(default_factory=list)  # (src, dst, Similitude)
    unmatched: list = field(default_factory=list)
    audits: dict = field(default_factory=dict)

    def child_counts(self) -> list:
        """Per state, the count of edges to each state."""
        M = len(self.types)
        out = [[0] * M for _ in range(M)]
        for s, t, _ in self.edges:
            out[s][t] += 1
        return out

    def construction(self) -> GraphConstruction:
        states = [f"T{k + 1}" for k in range(len(self.types))]
        return GraphConstruction(states, [Edge(s, t, m) for s, t, m in self.edges])

    def model(self, name: str = "proposed", ifs: IFSModel | None = None) -> FractalModel:
        bnd = [np.array(t.boundary, dtype=float).reshape(-1, 2) for t in self.types]
        return FractalModel(name, self.construction(), BoundarySpec(bnd, []), ifs=ifs)

    def to_dict(self) -> dict:
        return {
            "kind": "decomposition",
            "success": self.success,
            "message": self.message,
            "types": [{"island": [word_str(w) for w in t.words],
                       "boundary": [[float(x), float(y)] for x, y in t.boundary]}
                      for t in self.types],
            "child_counts": self.child_counts(),
            "unmatched": [word_str(w) for w in self.unmatched],
            "audits": self.audits,
            "note": HEURISTIC_NOTE,
        }

    def __str__(self):
        aud = ", ".join(f"{k}: {v}" for k, v in sorted(self.audits.items()))
        if not self.success:
            return f"decomposition failed: {self.message}" + (f"\naudits: {aud}" if aud else "")
        lines = [f"{len(self.types)} island types" + (f" (audits: {aud})" if aud else "")]
        for k, t in enumerate(self.types):
            cnt = self.child_counts()[k]
            kids = ", ".join(f"{c} x T{j + 1}" for j, c in enumerate(cnt) if c)
            isl = "K" if t.words == [()] else " u ".join(f"F{word_str(w)}K" for w in t.words)
            lines.append(f"  T{k + 1} = {isl}: children {kids}")
        return "\n".join(lines)


def _cut(tab: WordTable, roots, lam):
    """Stopping-time cut: descendants w of the roots with c_w <= lam < c_parent."""
    out = []
    N = tab.N
    # index of a word in the table from (length, code)
    start = np.cumsum([0] + [N ** n for n in range(int(tab.length.max()) + 1)])
    for r in roots:
        stack = [r]
        while stack:
            i = stack.pop()
            if tab.ratio[i] <= lam * (1 + RATIO_SLACK):
                out.append(i)
                continue
            n = int(tab.length[i]) + 1
            if n > tab.length.max():
                raise ResourceLimitError("cut needs words beyond the table depth")
            base = start[n] + int(tab.code[i]) * N
            stack.extend(range(base + N - 1, base - 1, -1))
    return np.array(out, dtype=int)


def _islands(tab, oracle, roots, lam):
    words = dedup_words(tab, _cut(tab, roots, lam), oracle)
    _, comps, _ = _fat_graph(tab, oracle, words)
    return comps


def _match(tab, oracle, island, types, type_keys):
    """(type index, g) with g(reference island of that type) = island, else (None, None)."""
    ks = set(canonical_keys(tab.A[island], tab.t[island], diameter=oracle.diam))
    rmax = tab.ratio[island].max()
    for ti, (ref, anchor) in enumerate(type_keys):
        if len(ref[0]) != len(island):
            continue
        Aa, ta = anchor
        for u in island:
            if tab.ratio[u] < rmax * (1 - RATIO_SLACK):
                continue
            gu = Similitude(tab.A[u], tab.t[u])
            g = _compose_arrays(gu, Aa, ta)
            A = np.einsum("ij,kjl->kil", g.linear, ref[0])
            t = ref[1] @ g.linear.T + g.translation
            if set(canonical_keys(A, t, diameter=oracle.diam)) == ks:
                return ti, g
    return None, None


def _compose_arrays(gu: Similitude, Aa, ta) -> Similitude:
    """gu o anchor^-1 for an anchor map given by arrays."""
    inv = invert(Similitude(Aa, ta))
    return Similitude(gu.linear @ inv.linear, gu.linear @ inv.translation + gu.translation)


def propose_decomposition(ifs: IFSModel, lam0: float, lam1: float, audit_depth: int = 4,
                          require_audits: bool = False) -> Decomposition:
    """Graph-directed decomposition from chain-connected islands at two cut scales.

    The neighbor and chain audits always run and their verdicts are attached to
    the result; with require_audits anything but finite evidence aborts.
    """
    if not lam0 > lam1 > 0:
        raise ValueError("need lam0 > lam1 > 0")
    oracle = OverlapOracle(ifs)
    cs = ifs.min_ratio
    nm = neighbor_maps(ifs, audit_depth, oracle=oracle)
    ch = max_chain_length(ifs, cs, audit_depth, oracle=oracle)
    audits = {"neighbor_maps": nm.verdict, "chains": ch.verdict}
    if require_audits and set(audits.values()) != {"finite-evidence"}:
        return Decomposition(False, f"audits not finite (neighbor maps: {nm.verdict}, "
                                    f"chains: {ch.verdict})", audits=audits)
    dec = _decompose(ifs, oracle, lam0, lam1)
    dec.audits = audits
    return dec


def _decompose(ifs, oracle, lam0, lam1) -> Decomposition:
    cs = ifs.min_ratio
    depth = 1
    while ifs.ratios.max() ** depth > lam1 * cs and depth < DEPTH_CAP:
        depth += 1
    tab = WordTable(ifs, depth + 1)
    root = 0  # the empty word
    types = [IslandType([()])]
    type_keys = [((tab.A[[root]], tab.t[[root]]), (tab.A[root], tab.t[root]))]
    type_words = [[root]]
    edges = []
    occurrences = []  # (island indices, type, g, sibling islands)

    anchors = [Similitude(np.eye(2), np.zeros(2))]

    def classify(island, allow_new):
        # returns the type and the map from normalized type coordinates onto the island
        ti, g = _match(tab, oracle, island, types, type_keys)
        if ti is None:
            if not allow_new:
                return None, None
            types.append(IslandType([tab.word(i) for i in island]))
            anchor = max(island, key=lambda i: (tab.ratio[i], [-x for x in tab.word(i)]))
            type_keys.append(((tab.A[island], tab.t[island]), (tab.A[anchor], tab.t[anchor])))
            type_words.append(list(island))
            anchors.append(Similitude(tab.A[anchor], tab.t[anchor]))
            ti = len(types) - 1
            g = Similitude(np.eye(2), np.zeros(2))
        return ti, compose(g, anchors[ti])

    level0 = _islands(tab, oracle, [root], lam0)
    if len(level0) < 2:
        return Decomposition(False, f"only {len(level0)} island at scale {lam0}")
    for isl in level0:
        ti, g = classify(isl, True)
        edges.append((0, ti, g))
        occurrences.append((isl, ti, g, level0, 0, anchors[0]))
    n0 = len(types)
    for ti in range(1, n0):
        kids = _islands(tab, oracle, type_words[ti], lam1)
        if len(kids) < 2:
            return Decomposition(False, f"type T{ti + 1} has a single island at scale {lam1}",
                                 types, edges)
        back = invert(anchors[ti])
        for isl in kids:
            tj, g = classify(isl, False)
            if tj is None:
                return Decomposition(False, f"island at scale {lam1} inside T{ti + 1} "
                                            f"matches no type", types, edges,
                                     [tab.word(i) for i in isl])
            edges.append((ti, tj, compose(back, g)))
            occurrences.append((isl, tj, g, kids, ti, anchors[ti]))
    _suggest_boundaries(tab, oracle, types, occurrences)
    return Decomposition(True, f"{len(types)} types, closed at scale {lam1}", types,
                         sorted(edges, key=lambda e: (e[0], e[1])))


def _vertex_candidates(tab: WordTable, depth: int = 3) -> np.ndarray:
    """Images F_w(p) of fixed points p of short words, the usual contact points."""
    short = np.nonzero(tab.length == 1)[0]
    fix = np.array([np.linalg.solve(np.eye(2) - tab.A[i], tab.t[i]) for i in short])
    idx = np.nonzero(tab.length <= depth)[0]
    pts = (np.einsum("kij,mj->kmi", tab.A[idx], fix) + tab.t[idx][:, None, :]).reshape(-1, 2)
    return cluster_points(pts, 1e-9)[0]


def _suggest_boundaries(tab, oracle, types, occurrences):
    """Contact points between sibling islands, pulled back to type and copy coordinates."""
    pts = [[] for _ in types]
    base = oracle.cloud(FINE_RES * oracle.diam)[0]
    cand = _vertex_candidates(tab, min(3, int(tab.length.max())))
    ctree = cKDTree(cand)
    clouds = {}

    def cloud(i):
        if i not in clouds:
            clouds[i] = base @ tab.A[i].T + tab.t[i]
        return clouds[i]

    for isl, ti, g, sibs, _, _ in occurrences:
        mine = np.vstack([cloud(i) for i in isl])
        for other in sibs:
            if other is isl:
                continue
            small = oracle.diam * min(tab.ratio[isl].min(), tab.ratio[other].min())
            tol = TOUCH_TOL * small
            theirs = np.vstack([cloud(i) for i in other])
            d, j = cKDTree(theirs).query(mine, distance_upper_bound=tol)
            hit = np.isfinite(d)
            if not hit.any():
                continue
            near, partner, dist = mine[hit], theirs[j[hit]], d[hit]
            _, lab = cluster_points(near, 4 * tol)
            for c in range(lab.max() + 1):
                # closest pair of the contact cluster, snapped to a vertex candidate
                k = np.nonzero(lab == c)[0]
                b = k[np.argmin(dist[k])]
                p = 0.5 * (near[b] + partner[b])
                dc, kc = ctree.query(p)
                if dc <= FINE_TOL * small + 2 * FINE_RES * oracle.diam:
                    p = cand[kc]
                pts[ti].append(apply(invert(g), p))
                for i in isl:
                    if np.min(np.linalg.norm(cloud(i) - p, axis=1)) <= tol:
                        pts[0].append(apply(invert(Similitude(tab.A[i], tab.t[i])), p))
    # a type also inherits the parent boundary points lying on its islands
    for _ in range(4):
        grew = False
        for isl, ti, g, _, parent, pemb in occurrences:
            if not pts[parent]:
                continue
            mine = np.vstack([cloud(i) for i in isl])
            tol = TOUCH_TOL * oracle.diam * tab.ratio[isl].min()
            bp = apply(pemb, np.array(pts[parent]))
            d, _ = cKDTree(mine).query(bp, distance_upper_bound=tol)
            back = apply(invert(g), bp[np.isfinite(d)])
            have = np.array(pts[ti]).reshape(-1, 2)
            for q in back:
                if not len(have) or np.min(np.linalg.norm(have - q, axis=1)) > 1e-6 * oracle.diam:
                    pts[ti].append(q)
                    have = np.array(pts[ti])
                    grew = True
        if not grew:
            break
    for k, t in enumerate(types):
        if pts[k]:
            reps, _ = cluster_points(np.array(pts[k]), 0.05 * oracle.diam)
            t.boundary = [tuple(float(round(v, 9)) + 0.0 for v in p) for p in reps]


def audit_json(*reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)
