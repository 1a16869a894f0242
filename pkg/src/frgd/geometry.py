"""Planar similitudes, words and iterated function systems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

EPS_GEO = 1e-9
KEY_GRID = 1e-6


@dataclass(frozen=True, eq=False)
class Similitude:
    """Planar map x -> linear @ x + translation with linear conformal."""

    linear: np.ndarray
    translation: np.ndarray
    ratio: float = field(default=0.0)

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(2, 2)
        tr = np.asarray(self.translation, dtype=float).reshape(2)
        lin.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)
        r = math.sqrt(abs(np.linalg.det(lin)))
        if not r > 0:
            raise ValueError("similitude must have positive ratio")
        if not np.allclose(lin.T @ lin, r * r * np.eye(2), atol=1e-12 * max(1.0, r * r)):
            raise ValueError("linear part is not conformal")
        object.__setattr__(self, "ratio", r)

    @property
    def reflects(self) -> bool:
        return bool(np.linalg.det(self.linear) < 0)

    @property
    def angle(self) -> float:
        """Rotation angle in [0, 2pi) of the orthogonal part."""
        o = self.linear / self.ratio
        a = math.atan2(o[1, 0], o[0, 0])
        return a % (2 * math.pi)

    def __call__(self, p):
        return apply(self, p)

    def __repr__(self):
        t = self.translation
        return (f"Similitude(ratio={self.ratio:.6g}, angle={math.degrees(self.angle):.6g}deg, "
                f"reflect={self.reflects}, t=({t[0]:.6g}, {t[1]:.6g}))")


def identity() -> Similitude:
    return Similitude(np.eye(2), np.zeros(2))


def from_params(scale: float, rotation_deg: float = 0.0, reflect: bool = False,
                translate: Sequence[float] = (0.0, 0.0)) -> Similitude:
    """x -> scale * R(theta) * S * x + t, with S the flip (x, y) -> (x, -y) if reflect."""
    th = math.radians(rotation_deg)
    c, s = math.cos(th), math.sin(th)
    # snap the usual right angles so that composites stay exact-ish
    c = 0.0 if abs(c) < 1e-15 else c
    s = 0.0 if abs(s) < 1e-15 else s
    rot = np.array([[c, -s], [s, c]])
    if reflect:
        rot = rot @ np.diag([1.0, -1.0])
    return Similitude(scale * rot, np.asarray(translate, dtype=float))


def homothety(ratio: float, center: Sequence[float]) -> Similitude:
    """x -> ratio * x + (1 - ratio) * center."""
    c = np.asarray(center, dtype=float)
    return Similitude(ratio * np.eye(2), (1.0 - ratio) * c)


def to_params(s: Similitude) -> dict:
    """Inverse of from_params (up to float noise)."""
    return {
        "scale": s.ratio,
        "rotation_deg": math.degrees(s.angle),
        "reflect": s.reflects,
        "translate": [float(s.translation[0]), float(s.translation[1])],
    }


def compose(a: Similitude, b: Similitude) -> Similitude:
    """Return a o b, i.e. x -> a(b(x))."""
    return Similitude(a.linear @ b.linear, a.linear @ b.translation + a.translation)


def compose_all(maps: Iterable[Similitude]) -> Similitude:
    out = identity()
    for m in maps:
        out = compose(out, m)
    return out


def invert(s: Similitude) -> Similitude:
    inv = np.linalg.inv(s.linear)
    return Similitude(inv, -inv @ s.translation)


def apply(s: Similitude, p) -> np.ndarray:
    """Evaluate at a point (shape (2,)) or a batch of points (shape (k, 2))."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return s.linear @ p + s.translation
    return p @ s.linear.T + s.translation


def fixed_point(s: Similitude) -> np.ndarray:
    """Fixed point of a contraction (ratio < 1)."""
    return np.linalg.solve(np.eye(2) - s.linear, s.translation)


def is_close(a: Similitude, b: Similitude, tol: float = 1e-10) -> bool:
    return (np.max(np.abs(a.linear - b.linear)) < tol
            and np.max(np.abs(a.translation - b.translation)) < tol)


def canonical_key(s: Similitude, grid: float = KEY_GRID, diameter: float = 1.0) -> tuple:
    """Hashable key, equal for maps that agree to within the grid.

    Rounds ratio, rotation angle, reflection bit and translation / diameter.
    """
    return canonical_keys(s.linear[None], s.translation[None], grid, diameter)[0]


def canonical_keys(linear, translation, grid: float = KEY_GRID, diameter: float = 1.0) -> list:
    """Vectorized canonical_key for stacks of linear parts (k, 2, 2) and translations (k, 2)."""
    if grid <= 0:
        raise ValueError("grid must be positive")
    A = np.asarray(linear, dtype=float).reshape(-1, 2, 2)
    t = np.asarray(translation, dtype=float).reshape(-1, 2) / diameter
    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    r = np.sqrt(np.abs(det))
    ang = np.arctan2(A[:, 1, 0], A[:, 0, 0]) % (2 * math.pi)
    n_ang = int(round(2 * math.pi / grid))
    cols = np.stack([np.rint(r / grid), np.rint(ang / grid) % n_ang, (det < 0).astype(float),
                     np.rint(t[:, 0] / grid), np.rint(t[:, 1] / grid)], axis=1).astype(np.int64)
    return [tuple(row) for row in cols.tolist()]


# words -------------------------------------------------------------------

Word = tuple  # tuple of symbol indices (0-based); () is the empty word


def concat(u: Word, v: Word) -> Word:
    return tuple(u) + tuple(v)


def is_prefix(u: Word, v: Word) -> bool:
    return len(u) <= len(v) and tuple(v[:len(u)]) == tuple(u)


def word_str(w: Word, one_based: bool = True) -> str:
    if not w:
        return "()"
    off = 1 if one_based else 0
    return "".join(str(i + off) if i + off < 10 else f"[{i + off}]" for i in w)


class IFSModel:
    """Finite family of contracting similitudes F_1..F_N."""

    def __init__(self, maps: Sequence[Similitude]):
        maps = list(maps)
        if len(maps) < 2:
            raise ValueError("an IFS needs at least two maps")
        for m in maps:
            if not 0 < m.ratio < 1:
                raise ValueError(f"map ratio {m.ratio} not in (0, 1)")
        self.maps = maps

    @property
    def n(self) -> int:
        return len(self.maps)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([m.ratio for m in self.maps])

    @property
    def min_ratio(self) -> float:
        return float(self.ratios.min())

    def word_map(self, w: Word) -> Similitude:
        return compose_all(self.maps[i] for i in w)

    def conjugate(self, g: Similitude) -> "IFSModel":
        """The IFS {g F_i g^-1}, whose attractor is g(K)."""
        gi = invert(g)
        return IFSModel([compose(g, compose(m, gi)) for m in self.maps])


# point sets ----------------------------------------------------------------

def cluster_points(points, tol: float = EPS_GEO):
    """Identify points closer than tol.

    Returns (representatives, labels) where labels[i] indexes the representative
    of points[i]. Representatives are the first occurrence, in input order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return pts.copy(), np.zeros(0, dtype=int)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    uniq, labels = np.unique(roots, return_inverse=True)
    return pts[uniq], labels


def match_points(query, reference, tol: float = EPS_GEO):
    """Index into reference of the point within tol of each query point, or -1."""
    ref = np.asarray(reference, dtype=float).reshape(-1, 2)
    q = np.asarray(query, dtype=float).reshape(-1, 2)
    if len(ref) == 0:
        return np.full(len(q), -1)
    d, idx = cKDTree(ref).query(q)
    idx = np.where(d <= tol, idx, -1)
    return idx
