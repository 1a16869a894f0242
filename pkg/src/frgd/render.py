"""Deterministic SVG point renders of graph-directed attractors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import apply
from .structure import FractalModel, approximate_attractor, enumerate_walks, vertex_approximation

CANVAS = 1024
MARGIN = 32
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
           "#9467bd", "#8c564b", "#e377c2", "#17becf")


@dataclass
class RenderSpec:
    depth: int = 3
    overlay: int | None = None
    canvas: int = CANVAS
    palette: tuple = PALETTE


def _clouds(m: FractalModel, depth: int, pixel: float):
    """(points, state) for every depth-n cell, each cloud about a pixel fine."""
    cache: dict = {}
    pts, col = [], []
    for w in enumerate_walks(m.g, m.g.root, depth):
        k = int(math.floor(math.log2(pixel / w.ratio)))
        key = (w.end, k)
        if key not in cache:
            cache[key] = approximate_attractor(m, 2.0 ** k, state=w.end)[w.end]
        p = apply(w.map, cache[key])
        pts.append(p)
        col.append(np.full(len(p), w.end))
    return np.vstack(pts), np.concatenate(col)


def render_svg(m: FractalModel, spec: RenderSpec | None = None) -> bytes:
    """One small marker per cloud point colored by cell state, optional V_n overlay."""
    spec = spec or RenderSpec()
    if spec.depth < 0:
        raise ValueError("depth must be nonnegative")
    centers, radii = m.bounding_disks()
    root = m.g.root
    extent = 2 * radii[root]
    pts, col = _clouds(m, spec.depth, extent / spec.canvas)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-12)
    scale = (spec.canvas - 2 * MARGIN) / span
    off = (spec.canvas - scale * (hi - lo)) / 2

    def canvas(p):
        p = np.asarray(p, dtype=float).reshape(-1, 2)
        x = off[0] + scale * (p[:, 0] - lo[0])
        y = spec.canvas - (off[1] + scale * (p[:, 1] - lo[1]))
        return np.round(np.column_stack([x, y]))  # one marker per canvas unit

    cp = canvas(pts)
    # later cells win shared canvas units
    uniq = {}
    for (x, y), c in zip(map(tuple, cp), col.tolist()):
        uniq[(x, y)] = c
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{spec.canvas}" '
        f'height="{spec.canvas}" viewBox="0 0 {spec.canvas} {spec.canvas}">',
        f'<title>{_escape(m.name)} depth {spec.depth}</title>',
        f'<rect x="0" y="0" width="{spec.canvas}" height="{spec.canvas}" fill="#ffffff"/>',
    ]
    by_color: dict = {}
    for (x, y), c in sorted(uniq.items()):
        by_color.setdefault(c, []).append((x, y))
    for c in sorted(by_color):
        out.append(f'<g fill="{spec.palette[c % len(spec.palette)]}" '
                   f'data-state="{_escape(m.g.states[c])}">')
        out.extend(f'<circle cx="{x:g}" cy="{y:g}" r="0.5"/>' for x, y in by_color[c])
        out.append("</g>")
    if spec.overlay is not None:
        vpts, _, _ = vertex_approximation(m, spec.overlay)
        out.append('<g fill="#000000">')
        for x, y in sorted(set(map(tuple, canvas(vpts)))):
            out.append(f'<circle cx="{x:g}" cy="{y:g}" r="2"/>')
        out.append("</g>")
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")


def _escape(s: str) -> str:
    return (str(s).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))
