"""Harmonic structures: level assembly, renormalization residuals, solver, checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FrgdError, ModelError, StructuralError
from .expr import Expr
from .geometry import EPS_GEO, apply, cluster_points, match_points
from .network import (ResistanceNetwork, laplacian_from_conductances, point_label,
                      schur_trace, trace)
from .structure import (FractalModel, closed_walks, enumerate_walks, simple_cycles,
                        walks_up_to)

log = logging.getLogger(__name__)

RATIO_BUCKET = 1e-9


class HarmonicStructure:
    """Per-state networks D_s on V_s u aux_s (declared order) and per-edge factors r_e."""

    def __init__(self, laplacians: Sequence[ResistanceNetwork], factors,
                 restrictions=None):
        self.laplacians = list(laplacians)
        self.factors = np.asarray(factors, dtype=float)
        # optional per-state list of vertex-index subsets; residuals then compare
        # traces on those subsets only (restricted networks)
        self.restrictions = restrictions

    def walk_factor(self, edges) -> float:
        return float(np.prod(self.factors[list(edges)])) if len(edges) else 1.0

    def gauge(self, state: int, t: float, m: FractalModel) -> "HarmonicStructure":
        """Scale D_state by t, factors into state by t and out of it by 1/t."""
        laps = [d.scaled(t) if s == state else d for s, d in enumerate(self.laplacians)]
        f = self.factors.copy()
        for k, e in enumerate(m.g.edges):
            if e.dst == state:
                f[k] *= t
            if e.src == state:
                f[k] /= t
        return HarmonicStructure(laps, f, self.restrictions)


def structure_from_conductances(m: FractalModel, conductances, factors,
                                restrictions=None) -> HarmonicStructure:
    """conductances[s]: list of (i, j, c) over indices of V_s u aux_s."""
    laps = []
    for s in range(m.M):
        pts = m.vertices(s, True)
        H = laplacian_from_conductances(len(pts), conductances[s])
        laps.append(ResistanceNetwork([point_label(p) for p in pts], H))
    return HarmonicStructure(laps, factors, restrictions)


class LevelAssembly:
    """Combinatorics of the level-n network of a state, reusable across structures."""

    def __init__(self, m: FractalModel, state: int, n: int, tol: float = EPS_GEO):
        if n < 0:
            raise ValueError("level must be nonnegative")
        self.m, self.state, self.n = m, state, n
        self.walks = enumerate_walks(m.g, state, n)
        chunks, self.slices = [], []
        pos = 0
        for w in self.walks:
            v = m.vertices(w.end, True)
            chunks.append(apply(w.map, v) if len(v) else np.zeros((0, 2)))
            self.slices.append((pos, pos + len(v)))
            pos += len(v)
        allp = np.vstack(chunks) if chunks else np.zeros((0, 2))
        self.points, labels = cluster_points(allp, tol)
        self.labels = [labels[a:b] for a, b in self.slices]
        for k, lab in enumerate(self.labels):
            if len(set(lab.tolist())) != len(lab):
                raise FrgdError(f"walk {self.walks[k].edges}: vertices collapse")
        self.vertex_labels = [point_label(p) for p in self.points]
        self.walk_edges = [list(w.edges) for w in self.walks]
        base = m.vertices(state, True)
        self.base_index = match_points(base, self.points, 1e3 * tol)
        if np.any(self.base_index < 0):
            raise ModelError(f"state {m.g.states[state]!r}: declared vertices are not "
                             f"level-{n} vertices")

    def H(self, h: HarmonicStructure) -> np.ndarray:
        N = len(self.points)
        H = np.zeros((N, N))
        for w, lab, edges in zip(self.walks, self.labels, self.walk_edges):
            rho = float(np.prod(h.factors[edges])) if edges else 1.0
            H[np.ix_(lab, lab)] += h.laplacians[w.end].H / rho
        return H

    def network(self, h: HarmonicStructure) -> ResistanceNetwork:
        return ResistanceNetwork(self.vertex_labels, self.H(h), check=False)


def assemble_level(m: FractalModel, h: HarmonicStructure, state: int, n: int) -> ResistanceNetwork:
    """Level-n network of a state: glue of D_f(w) over length-n walks w, scaled by 1/r_w."""
    return LevelAssembly(m, state, n).network(h)


def _state_residual(asm: LevelAssembly, h: HarmonicStructure, s: int, vector=False):
    H = asm.H(h)
    D = h.laplacians[s].H
    subsets = None
    if h.restrictions is not None and h.restrictions[s]:
        subsets = h.restrictions[s]
    if subsets is None:
        T = schur_trace(H, asm.base_index)
        diff = T - D
        iu = np.triu_indices(len(D), 1)
        vec = diff[iu]
    else:
        parts = []
        for sub in subsets:
            sub = list(sub)
            T = schur_trace(H, asm.base_index[sub])
            Ds = schur_trace(D, sub)
            iu = np.triu_indices(len(sub), 1)
            parts.append((T - Ds)[iu])
        vec = np.concatenate(parts)
    if vector:
        return vec
    return float(np.max(np.abs(vec))) if len(vec) else 0.0


def renorm_residual(m: FractalModel, h: HarmonicStructure, assemblies=None) -> np.ndarray:
    """Per-state max-norm of trace(level-1 network, V_s u aux_s) - D_s."""
    out = []
    for s in range(m.M):
        asm = assemblies[s] if assemblies else LevelAssembly(m, s, 1)
        try:
            out.append(_state_residual(asm, h, s))
        except StructuralError as exc:
            raise StructuralError(f"state {m.g.states[s]!r}: {exc}") from exc
    return np.array(out)


# templates ----------------------------------------------------------------

@dataclass
class ParamSpec:
    name: str
    kind: str  # "fixed", "free"
    expr: Expr | None = None  # fixed value/derivation, or known closed form of a free one


@dataclass
class HarmonicTemplate:
    """Harmonic section of a model: expressions over named parameters."""

    params: dict
    laplacian_terms: list  # per state: list of (i, j, Expr); i/j int index or str internal node
    factor_exprs: list  # per edge Expr
    constraints: list = field(default_factory=list)
    restrictions: list | None = None

    @property
    def free(self) -> list[str]:
        return [p for p, spec in self.params.items() if spec.kind == "free"]

    @property
    def unresolved(self) -> list[str]:
        return [p for p, spec in self.params.items() if spec.kind == "free" and spec.expr is None]

    def environment(self, free_values: dict | None = None, use_closed_form: bool = False) -> dict:
        """Evaluate all parameters; free ones come from free_values or their closed form."""
        env = {}
        free_values = dict(free_values or {})
        pending = dict(self.params)
        for name, spec in list(pending.items()):
            if spec.kind == "free":
                if name in free_values:
                    env[name] = float(free_values[name])
                    del pending[name]
                elif not (use_closed_form and spec.expr is not None):
                    raise ModelError(f"parameter {name!r} is free and has no value")
        while pending:
            progress = False
            for name, spec in list(pending.items()):
                if spec.expr.names <= env.keys():
                    env[name] = spec.expr(env)
                    del pending[name]
                    progress = True
            if not progress:
                raise ModelError(f"cannot resolve parameters {sorted(pending)} "
                                 f"(cyclic or unknown references)")
        return env

    def instantiate(self, m: FractalModel, env: dict) -> HarmonicStructure:
        laps = []
        for s in range(m.M):
            pts = m.vertices(s, True)
            labels = [point_label(p) for p in pts]
            internal = []
            terms = []
            for i, j, ex in self.laplacian_terms[s]:
                for v in (i, j):
                    if isinstance(v, str) and v not in internal:
                        internal.append(v)
                terms.append((i, j, ex(env)))
            n0 = len(labels)
            idx = {v: n0 + k for k, v in enumerate(internal)}
            trip = []
            for i, j, c in terms:
                ii = idx[i] if isinstance(i, str) else int(i)
                jj = idx[j] if isinstance(j, str) else int(j)
                if not c > 0 or not math.isfinite(c):
                    raise ModelError(f"state {m.g.states[s]!r}: conductance {c} "
                                     f"between {i} and {j} is not positive")
                trip.append((ii, jj, c))
            H = laplacian_from_conductances(n0 + len(internal), trip)
            if internal:
                H = schur_trace(H, list(range(n0)))
                H = 0.5 * (H + H.T)
            laps.append(ResistanceNetwork(labels, H, check=False))
        f = np.array([ex(env) for ex in self.factor_exprs])
        if np.any(~(f > 0)):
            raise ModelError("renormalization factors must be positive")
        return HarmonicStructure(laps, f, self.restrictions)

    def closed_form(self, m: FractalModel) -> HarmonicStructure:
        return self.instantiate(m, self.environment(use_closed_form=True))


def _parse_constraint(text: str):
    t = text.strip()
    if t.startswith("homogeneous"):
        rest = t[len("homogeneous"):].strip()
        return ("homogeneous", int(rest) if rest else 4)
    if "=" in t:
        lhs, rhs = t.split("=", 1)
        return ("equal", Expr(lhs), Expr(rhs))
    raise ModelError(f"cannot parse constraint {text!r}")


def homogeneity_groups(m: FractalModel, depth: int) -> list[list[tuple]]:
    """Root walks of length <= depth grouped by (final state, ratio bucket)."""
    groups: dict = {}
    for w in walks_up_to(m.g, m.g.root, depth):
        key = (w.end, int(round(math.log(w.ratio) / RATIO_BUCKET)))
        groups.setdefault(key, []).append(w.edges)
    return [v for k, v in sorted(groups.items()) if len(v) > 1]


@dataclass
class SolveResult:
    success: bool
    structure: HarmonicStructure | None
    values: dict
    residual: float
    constraint_residual: float
    restarts: int
    message: str = ""


class _Problem:
    def __init__(self, m: FractalModel, tpl: HarmonicTemplate):
        self.m, self.tpl = m, tpl
        self.free = tpl.free
        if not self.free:
            raise ModelError("template has no free parameters")
        self.asm = [LevelAssembly(m, s, 1) for s in range(m.M)]
        self.equal, self.groups = [], []
        for c in tpl.constraints:
            pc = _parse_constraint(c)
            if pc[0] == "equal":
                self.equal.append(pc[1:])
            else:
                self.groups.extend(homogeneity_groups(m, pc[1]))

    def parts(self, x):
        env = self.tpl.environment(dict(zip(self.free, np.exp(x))))
        h = self.tpl.instantiate(self.m, env)
        ren = np.concatenate([_state_residual(a, h, s, vector=True)
                              for s, a in enumerate(self.asm)])
        con = [lhs(env) - rhs(env) for lhs, rhs in self.equal]
        lf = np.log(h.factors)
        for grp in self.groups:
            ref = lf[list(grp[0])].sum()
            con.extend(lf[list(w)].sum() - ref for w in grp[1:])
        return ren, np.array(con, dtype=float), h, env

    def vector(self, x):
        try:
            ren, con, _, _ = self.parts(x)
            v = np.concatenate([ren, con])
            if not np.all(np.isfinite(v)):
                raise FloatingPointError
            return v
        except (FrgdError, FloatingPointError, ValueError, ZeroDivisionError, OverflowError):
            return None


def _levenberg(prob: _Problem, x0, max_iter=200, fd_step=1e-6, goal=1e-13):
    x = np.array(x0, dtype=float)
    f = prob.vector(x)
    if f is None:
        return x, None
    mu = 1e-3
    cost = f @ f
    for _ in range(max_iter):
        if np.max(np.abs(f)) < goal:
            break
        J = np.empty((len(f), len(x)))
        ok = True
        for j in range(len(x)):
            xp = x.copy()
            xp[j] += fd_step
            fp = prob.vector(xp)
            if fp is None:
                ok = False
                break
            J[:, j] = (fp - f) / fd_step
        if not ok:
            return x, f
        g = J.T @ f
        A = J.T @ J
        improved = False
        for _ in range(40):
            step = np.linalg.lstsq(A + mu * (np.diag(np.diag(A)) + np.eye(len(x))), -g,
                                   rcond=None)[0]
            step = np.clip(step, -2.0, 2.0)
            fn = prob.vector(x + step)
            if fn is not None and fn @ fn < cost:
                x, f, cost = x + step, fn, fn @ fn
                mu = max(mu / 3.0, 1e-12)
                improved = True
                break
            mu *= 2.0
        if not improved or np.max(np.abs(step)) < 1e-15:
            break
    return x, f


def solve_harmonic(m: FractalModel, tpl: HarmonicTemplate, seeds: int = 64,
                   tol: float = 1e-9, rng_seed: int = 0, max_restarts: int = 64) -> SolveResult:
    """Damped Gauss-Newton (Levenberg) in log parameters with random restarts."""
    prob = _Problem(m, tpl)
    rng = np.random.default_rng(rng_seed)
    n_runs = min(int(seeds), max_restarts)
    best = None
    for k in range(n_runs):
        x0 = rng.uniform(-3.0, 3.0, size=len(prob.free))
        x, f = _levenberg(prob, x0)
        if f is None:
            continue
        ren, con, h, env = prob.parts(x)
        res = float(np.max(np.abs(ren))) if len(ren) else 0.0
        cres = float(np.max(np.abs(con))) if len(con) else 0.0
        score = max(res, cres)
        log.debug("restart %d: residual %.3g constraints %.3g", k, res, cres)
        if best is None or score < best[0]:
            best = (score, res, cres, h, env, k)
        if res < tol and cres < tol:
            break
    if best is None:
        return SolveResult(False, None, {}, math.inf, math.inf, n_runs,
                           "no restart produced a valid structure")
    score, res, cres, h, env, k = best
    ok = res < tol and cres < tol
    msg = (f"converged at restart {k}" if ok
           else f"best residual {res:.3g} (constraints {cres:.3g}) after {n_runs} restarts")
    return SolveResult(ok, h, env, res, cres, k + 1 if ok else n_runs, msg)


# regularity and homogeneity ------------------------------------------------

@dataclass
class RegularityReport:
    regular: bool
    cycles: list  # (edge tuple, product)
    rho1: float
    rho2: float
    bound_ok: bool
    checked_length: int

    def __str__(self):
        lines = [f"regular: {self.regular}", f"rho1 = {self.rho1:.17g}",
                 f"rho2 = {self.rho2:.17g}",
                 f"two-sided bound on closed walks up to length {self.checked_length}: "
                 f"{'ok' if self.bound_ok else 'violated'}"]
        for cyc, p in self.cycles:
            lines.append(f"  cycle {list(cyc)}: {p:.17g}")
        return "\n".join(lines)


def check_regular(m: FractalModel, h: HarmonicStructure) -> RegularityReport:
    g = m.g
    M = g.M
    r = h.factors
    cycles = [(c, float(np.prod(r[list(c)]))) for c in simple_cycles(g)]
    regular = all(p < 1.0 for _, p in cycles)
    short = [float(np.prod(r[list(c)])) for c in closed_walks(g, M)] if M <= 4 else \
        [p for _, p in cycles]
    lam = max(short) if short else 0.0
    rho1 = float(r.min())
    rho2 = lam ** (1.0 / M) if lam > 0 else 0.0
    # extreme factor per state pair bounds every closed walk of that state sequence
    big = np.zeros((M, M))
    small = np.full((M, M), np.inf)
    for k, e in enumerate(g.edges):
        big[e.src, e.dst] = max(big[e.src, e.dst], r[k])
        small[e.src, e.dst] = min(small[e.src, e.dst], r[k])
    L = 3 * M
    ok = True
    for s in range(M):
        frontier = [(s, 1.0, 1.0)]
        for n in range(1, L + 1):
            nxt = []
            for st, hi, lo in frontier:
                for t in range(M):
                    if big[st, t] > 0:
                        nxt.append((t, hi * big[st, t], lo * small[st, t]))
            frontier = nxt
            for st, hi, lo in frontier:
                if st == s:
                    if hi > rho2 ** n * (1 + 1e-9) or lo < rho1 ** n * (1 - 1e-9):
                        ok = False
    return RegularityReport(regular, cycles, rho1, rho2, ok and regular, L)


@dataclass
class HomogeneityReport:
    homogeneous: bool
    depth: int
    table: dict  # ratio -> sorted list of distinct factor products
    offending: list
    single_valued: bool | None

    def __str__(self):
        head = (f"homogeneous up to depth {self.depth}: {self.homogeneous}")
        lines = [head]
        if self.single_valued is not None:
            lines.append(f"scaling table single-valued across states: {self.single_valued}")
        for ratio in sorted(self.table, reverse=True):
            vals = ", ".join(f"{v:.12g}" for v in self.table[ratio])
            lines.append(f"  c({ratio:.12g}) = {vals}")
        for o in self.offending[:10]:
            lines.append(f"  unequal: {o}")
        return "\n".join(lines)


def check_homogeneous(m: FractalModel, h: HarmonicStructure, depth: int,
                      tol: float = 1e-9) -> HomogeneityReport:
    if depth < 1:
        raise ValueError("depth must be >= 1")
    groups: dict = {}
    for w in walks_up_to(m.g, m.g.root, depth):
        key = (w.end, int(round(math.log(w.ratio) / RATIO_BUCKET)))
        groups.setdefault(key, []).append((w.edges, w.ratio, h.walk_factor(w.edges)))
    homog = True
    offending = []
    table: dict = {}
    for (st, _), items in sorted(groups.items()):
        prods = [p for _, _, p in items]
        if max(prods) - min(prods) > tol * max(1.0, max(prods)):
            homog = False
            offending.append((m.g.states[st], items[0][1],
                              [(list(e), p) for e, _, p in items]))
        table.setdefault(round(items[0][1], 12), []).append(prods[0])
    for k in table:
        vals = sorted(table[k])
        dedup = [vals[0]]
        for v in vals[1:]:
            if abs(v - dedup[-1]) > tol * max(1.0, v):
                dedup.append(v)
        table[k] = dedup
    single = None
    if m.g.strongly_connected():
        single = all(len(v) == 1 for v in table.values())
    return HomogeneityReport(homog, depth, table, offending, single)
