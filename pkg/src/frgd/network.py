"""Finite resistance networks: Laplacians, energy, trace, effective resistance."""

from __future__ import annotations

from typing import Hashable, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .errors import GeometryError, StructuralError
from .geometry import EPS_GEO, Similitude, apply, cluster_points, match_points

CLAMP = 1e-12
PIVOT_TOL = 1e-12


def point_label(p) -> tuple:
    """Canonical rounded-coordinate label for a geometric vertex."""
    x, y = (float(round(v, 12)) + 0.0 for v in p)
    return (x, y)


def is_point(label) -> bool:
    return (isinstance(label, tuple) and len(label) == 2
            and all(isinstance(v, float) for v in label))


class ResistanceNetwork:
    """Vertex labels plus a Laplacian H (symmetric, H_xy >= 0 off the diagonal, zero row sums)."""

    def __init__(self, vertices: Sequence[Hashable], H, check: bool = True):
        self.vertices = list(vertices)
        self.H = np.array(H, dtype=float)
        n = len(self.vertices)
        if self.H.shape != (n, n):
            raise ValueError("H shape does not match the vertex list")
        if len(set(self.vertices)) != n:
            raise ValueError("duplicate vertex labels")
        self._index = {v: i for i, v in enumerate(self.vertices)}
        if check:
            check_laplacian(self.H)

    @property
    def n(self) -> int:
        return len(self.vertices)

    def index(self, label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"vertex {label!r} not in network") from None

    def points(self) -> np.ndarray:
        return np.array([v for v in self.vertices], dtype=float).reshape(-1, 2)

    def locate(self, p, tol: float = EPS_GEO) -> int:
        """Index of the geometric vertex within tol of point p."""
        pts = np.array([v if is_point(v) else (np.nan, np.nan) for v in self.vertices])
        d = np.linalg.norm(pts - np.asarray(p, dtype=float), axis=1)
        d = np.where(np.isnan(d), np.inf, d)
        i = int(np.argmin(d)) if len(d) else -1
        if i < 0 or d[i] > tol:
            raise GeometryError(f"no vertex within {tol:g} of ({p[0]:g}, {p[1]:g})")
        return i

    def conductance(self, x, y) -> float:
        return float(self.H[self.index(x), self.index(y)])

    def copy(self) -> "ResistanceNetwork":
        return ResistanceNetwork(self.vertices, self.H.copy(), check=False)

    def scaled(self, t: float) -> "ResistanceNetwork":
        return ResistanceNetwork(self.vertices, self.H * t, check=False)

    def __repr__(self):
        return f"ResistanceNetwork(n={self.n})"


def check_laplacian(H, tol: float = 1e-10):
    H = np.asarray(H, dtype=float)
    if H.size == 0:
        return
    scale = max(1.0, float(np.max(np.abs(H))))
    if np.max(np.abs(H - H.T)) > tol * scale:
        raise ValueError("Laplacian is not symmetric")
    off = H - np.diag(np.diag(H))
    if np.min(off) < -tol * scale:
        raise ValueError("Laplacian has a negative off-diagonal entry")
    if np.max(np.abs(H.sum(axis=1))) > tol * scale:
        raise ValueError("Laplacian rows do not sum to zero")


def laplacian_from_conductances(n: int, conductances) -> np.ndarray:
    H = np.zeros((n, n))
    for i, j, c in conductances:
        if i == j:
            raise ValueError("self-loop conductance")
        if not c > 0:
            raise ValueError(f"nonpositive conductance {c}")
        H[i, j] += c
        H[j, i] += c
        H[i, i] -= c
        H[j, j] -= c
    return H


def build_network(vertices: Sequence[Hashable], conductances) -> ResistanceNetwork:
    """Network from (x, y, c_xy) triples, x and y vertex labels."""
    vertices = list(vertices)
    if len(set(vertices)) != len(vertices):
        raise ValueError("duplicate vertex labels")
    idx = {v: i for i, v in enumerate(vertices)}
    trip = []
    for x, y, c in conductances:
        if x == y:
            raise ValueError(f"edge from {x!r} to itself")
        trip.append((idx[x], idx[y], float(c)))
    return ResistanceNetwork(vertices, laplacian_from_conductances(len(vertices), trip))


def energy(net: ResistanceNetwork, u, v=None) -> float:
    """E(u, v) = -u^T H v (sum over edges of c_xy (u(x)-u(y))(v(x)-v(y)))."""
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    return float(-u @ net.H @ v)


def components(H, tol: float = 0.0):
    """Connected components of the positive-conductance graph."""
    A = (np.asarray(H) > tol).astype(int)
    np.fill_diagonal(A, 0)
    return connected_components(A, directed=False)


def _resolve(net: ResistanceNetwork, keep) -> list[int]:
    out = []
    for k in keep:
        # labels win over positions when a network is labelled by integers
        if k in net._index:
            out.append(net._index[k])
        elif isinstance(k, (int, np.integer)) and not isinstance(k, bool) and 0 <= k < net.n:
            out.append(int(k))
        else:
            out.append(net.index(k))
    if len(set(out)) != len(out):
        raise ValueError("repeated vertex in keep set")
    return out


def schur_trace(H: np.ndarray, keep_idx: Sequence[int]) -> np.ndarray:
    """H_kk - H_kd H_dd^-1 H_dk with symmetric factorization of -H_dd."""
    n = H.shape[0]
    keep_idx = list(keep_idx)
    mask = np.ones(n, dtype=bool)
    mask[keep_idx] = False
    drop = np.nonzero(mask)[0]
    Hkk = H[np.ix_(keep_idx, keep_idx)]
    if not len(drop):
        return Hkk.copy()
    Hkd = H[np.ix_(keep_idx, drop)]
    Hdd = H[np.ix_(drop, drop)]
    try:
        cho = scipy.linalg.cho_factor(-Hdd, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise StructuralError("interior block is singular") from None
    piv = np.abs(np.diag(cho[0]))
    if piv.min() < PIVOT_TOL * max(1.0, piv.max()):
        raise StructuralError("interior block is numerically singular")
    X = scipy.linalg.cho_solve(cho, Hkd.T, check_finite=False)
    return Hkk + Hkd @ X


def _clean(T: np.ndarray) -> np.ndarray:
    T = 0.5 * (T + T.T)
    off = T - np.diag(np.diag(T))
    off[off < CLAMP] = 0.0
    return off - np.diag(off.sum(axis=1))


def trace(net: ResistanceNetwork, keep) -> ResistanceNetwork:
    """Trace (Schur complement) of the network onto the vertices in keep.

    keep holds labels or integer indices (labels take precedence); the result's
    vertex order follows keep.
    """
    keep_idx = _resolve(net, keep)
    if not keep_idx:
        raise ValueError("keep set must be nonempty")
    ncomp, lab = components(net.H)
    touched = {lab[i] for i in keep_idx}
    for c in range(ncomp):
        if c not in touched:
            members = [net.vertices[i] for i in range(net.n) if lab[i] == c]
            raise StructuralError(
                f"component {members[:5]}{'...' if len(members) > 5 else ''} "
                f"does not touch the keep set")
    T = schur_trace(net.H, keep_idx)
    return ResistanceNetwork([net.vertices[i] for i in keep_idx], _clean(T), check=False)


def effective_resistance(net: ResistanceNetwork, x, y) -> float:
    i, j = _resolve(net, [x, y])
    if i == j:
        raise ValueError("effective resistance needs two distinct vertices")
    ncomp, lab = components(net.H)
    if lab[i] != lab[j]:
        raise StructuralError(f"{net.vertices[i]!r} and {net.vertices[j]!r} are disconnected")
    sub = [k for k in range(net.n) if lab[k] == lab[i]]
    Hs = net.H[np.ix_(sub, sub)]
    T = schur_trace(Hs, [sub.index(i), sub.index(j)])
    c = T[0, 1]
    if not c > 0:
        raise StructuralError("zero conductance between the pair")
    return float(1.0 / c)


def resistance_matrix(net: ResistanceNetwork) -> np.ndarray:
    """All pairwise effective resistances of a connected network (via pseudo-inverse)."""
    L = -net.H
    P = np.linalg.pinv(L, hermitian=True)
    d = np.diag(P)
    return d[:, None] + d[None, :] - 2 * P


def delta_to_y(R12: float, R13: float, R23: float):
    """Star-leg resistances (R1, R2, R3) equivalent to a triangle."""
    for r in (R12, R13, R23):
        if not r > 0:
            raise ValueError("resistances must be positive")
    S = R12 + R13 + R23
    return R12 * R13 / S, R12 * R23 / S, R13 * R23 / S


def y_to_delta(R1: float, R2: float, R3: float):
    """Triangle resistances (R12, R13, R23) equivalent to a star."""
    for r in (R1, R2, R3):
        if not r > 0:
            raise ValueError("resistances must be positive")
    P = R1 * R2 + R1 * R3 + R2 * R3
    return P / R3, P / R2, P / R1


def glue_scaled_copies(pieces, tol: float = EPS_GEO) -> ResistanceNetwork:
    """Sum of rho^-1 times pushforwards of point-labelled networks under similitudes.

    pieces: iterable of (net, map, rho). Mapped vertices closer than tol are
    identified; the result's vertices are point labels in first-seen order.
    """
    pieces = list(pieces)
    chunks, offs = [], [0]
    for net, sim, rho in pieces:
        if not rho > 0:
            raise ValueError("scale factor must be positive")
        pts = net.points()
        chunks.append(apply(sim, pts) if len(pts) else np.zeros((0, 2)))
        offs.append(offs[-1] + len(pts))
    allp = np.vstack(chunks) if chunks else np.zeros((0, 2))
    reps, labels = cluster_points(allp, tol)
    N = len(reps)
    H = np.zeros((N, N))
    for k, (net, sim, rho) in enumerate(pieces):
        lab = labels[offs[k]:offs[k + 1]]
        if len(set(lab.tolist())) != len(lab):
            raise GeometryError(f"piece {k}: distinct vertices collapse under identification")
        H[np.ix_(lab, lab)] += net.H / rho
    return ResistanceNetwork([point_label(p) for p in reps], H, check=False)


def network_on_points(points, H) -> ResistanceNetwork:
    return ResistanceNetwork([point_label(p) for p in np.asarray(points).reshape(-1, 2)], H)


def match_vertices(small: ResistanceNetwork, big: ResistanceNetwork,
                   tol: float = EPS_GEO) -> list[int]:
    """Indices in big of small's vertices (geometric match for points, else by label)."""
    out = []
    bpts = np.array([v if is_point(v) else (np.nan, np.nan) for v in big.vertices],
                    dtype=float).reshape(-1, 2)
    finite = np.isfinite(bpts[:, 0])
    for v in small.vertices:
        if is_point(v):
            idx = match_points([v], np.where(finite[:, None], bpts, 1e300), tol)[0]
            if idx < 0:
                raise GeometryError(f"vertex {v} not found in the larger network")
            out.append(int(idx))
        else:
            out.append(big.index(v))
    return out


def is_compatible(small: ResistanceNetwork, big: ResistanceNetwork, tol: float = 1e-9):
    """(ok, residual): residual = max |trace(big, small.V).H - small.H|."""
    idx = match_vertices(small, big)
    T = trace(big, idx)
    res = float(np.max(np.abs(T.H - small.H))) if small.n else 0.0
    return res <= tol, res
