"""Graph-directed measures, the exponent delta, and discrete Laplacian spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FrgdError, ModelError, ResourceLimitError
from .harmonic import HarmonicStructure, LevelAssembly
from .structure import FractalModel, GraphConstruction

DELTA_BRACKET = (0.0, 64.0)
DELTA_TOL = 1e-12
DIM_CAP = 5000


class GDMeasure:
    """Per-edge weights mu_e in (0, 1) summing to one over the edges out of each state."""

    def __init__(self, weights, g: GraphConstruction | None = None):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights <= 0) or np.any(self.weights >= 1 + 1e-15):
            raise ModelError("measure weights must lie in (0, 1)")
        if g is not None:
            if len(self.weights) != len(g.edges):
                raise ModelError(f"measure has {len(self.weights)} weights for "
                                 f"{len(g.edges)} edges")
            for s in range(g.M):
                tot = float(self.weights[g.out_edges[s]].sum())
                if abs(tot - 1.0) > 1e-12:
                    raise ModelError(f"weights out of state {g.states[s]!r} sum to {tot!r}")

    def walk_weight(self, edges) -> float:
        return float(np.prod(self.weights[list(edges)])) if len(edges) else 1.0


def spectral_radius(A, tol: float = 1e-12, max_iter: int = 100_000):
    """Perron root of a nonnegative matrix.

    The root is ||A^N||^(1/N) with N = 2^k reached by repeated squaring (power
    iteration on a doubling schedule, immune to clustered spectra). The vector is
    the limit of power iteration on A + rho I. Returns (rho, v), v >= 0, sum(v) = 1.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(A < 0):
        raise ValueError("matrix must be entrywise nonnegative")
    n = A.shape[0]
    scale = float(A.max()) if A.size else 0.0
    if scale == 0.0:
        return 0.0, np.full(n, 1.0 / n)
    P = A / scale
    logn, N = 0.0, 1
    for _ in range(62):
        P = P @ P
        mx = float(P.max())
        if mx == 0.0:
            return 0.0, np.full(n, 1.0 / n)
        P /= mx
        logn = 2.0 * logn + math.log(mx)
        N *= 2
    rho = scale * math.exp(logn / N)
    # Perron vector: the shift by rho makes the dominant eigenvalue 2 rho strictly dominant
    B = A / scale + (rho / scale) * np.eye(n)
    v = np.full(n, 1.0 / n)
    it = 0
    while it < max_iter:
        B = B @ B
        B /= B.max()
        w = B @ np.full(n, 1.0)
        w /= w.sum()
        it += 1
        if np.max(np.abs(w - v)) < tol:
            v = w
            break
        v = w
        if it > 200:
            raise ResourceLimitError("Perron vector iteration did not converge")
    return float(rho), v


def build_m_delta(m: FractalModel, h: HarmonicStructure, mu: GDMeasure, delta: float) -> np.ndarray:
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    g = m.g
    M = np.zeros((g.M, g.M))
    for k, e in enumerate(g.edges):
        M[e.src, e.dst] += (h.factors[k] * mu.weights[k]) ** delta
    return M


def psi(m, h, mu, delta) -> float:
    return spectral_radius(build_m_delta(m, h, mu, delta))[0]


def solve_delta(m: FractalModel, h: HarmonicStructure, mu: GDMeasure) -> float:
    """The unique delta with spectral radius of M_delta equal to one (bisection)."""
    lo, hi = DELTA_BRACKET
    grid = np.linspace(lo, hi, 20)
    vals = [psi(m, h, mu, d) for d in grid]
    if any(b >= a for a, b in zip(vals, vals[1:]) if a > 1e-300):
        raise FrgdError("Psi is not strictly decreasing on the bracket; "
                        "the harmonic structure is probably not regular")
    f_lo, f_hi = vals[0] - 1.0, vals[-1] - 1.0
    if f_lo < 0 or f_hi > 0:
        raise FrgdError(f"no sign change of Psi - 1 on [{lo}, {hi}]; "
                        f"the harmonic structure is probably not regular")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = psi(m, h, mu, mid) - 1.0
        if abs(f) < DELTA_TOL or hi - lo < 1e-15:
            return mid
        if f > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def natural_measure(m: FractalModel):
    """Weights l_e^d h_f / h_s with d solving rho(sum l_e^d) = 1 and h its Perron vector.

    Returns (GDMeasure, d). Needs a strongly connected graph.
    """
    g = m.g
    if not g.strongly_connected():
        raise ModelError("natural weights need a strongly connected graph")
    ratios = np.array([e.ratio for e in g.edges])

    def mat(d):
        A = np.zeros((g.M, g.M))
        for k, e in enumerate(g.edges):
            A[e.src, e.dst] += ratios[k] ** d
        return A

    lo, hi = DELTA_BRACKET
    if spectral_radius(mat(hi))[0] > 1:
        raise ModelError("similarity dimension above the search bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if spectral_radius(mat(mid))[0] > 1:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    d = 0.5 * (lo + hi)
    _, hv = spectral_radius(mat(d))  # right Perron vector, A h = h
    weights = np.array([ratios[k_] ** d * hv[e.dst] / hv[e.src] for k_, e in enumerate(g.edges)])
    # renormalize out-sums to kill rounding
    for s in range(g.M):
        weights[g.out_edges[s]] /= weights[g.out_edges[s]].sum()
    return GDMeasure(weights, g), d


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    level: int
    bc: str
    exponent: float | None = None
    window: tuple | None = None
    residual: float | None = None

    def counting(self, x) -> np.ndarray:
        """N(x) = number of eigenvalues <= x."""
        return np.searchsorted(self.eigenvalues, np.asarray(x, dtype=float), side="right")

    def to_csv(self) -> str:
        lines = ["index,eigenvalue"]
        lines += [f"{k},{v:.17g}" for k, v in enumerate(self.eigenvalues, start=1)]
        return "\n".join(lines) + "\n"


def mass_matrix(asm: LevelAssembly, mu: GDMeasure) -> np.ndarray:
    """Lumped mass: island measure split uniformly over its boundary-image vertices."""
    B = np.zeros(len(asm.points))
    for w, lab in zip(asm.walks, asm.labels):
        if len(lab):
            np.add.at(B, lab, mu.walk_weight(w.edges) / len(lab))
    return B


def discrete_spectrum(m: FractalModel, h: HarmonicStructure, mu: GDMeasure, n: int,
                      bc: str = "dirichlet", fit: bool = False) -> SpectrumResult:
    """Eigenvalues of -H_n u = lambda B_n u on the level-n root network."""
    bc = bc.lower()
    if bc not in ("dirichlet", "neumann"):
        raise ValueError("bc must be 'dirichlet' or 'neumann'")
    if n < 1:
        raise ValueError("level must be >= 1")
    g = m.g
    counts = np.linalg.matrix_power(g.adjacency_counts(), n)[g.root].sum()
    if counts > 50 * DIM_CAP:
        raise ResourceLimitError(f"level {n} has {counts} cells")
    asm = LevelAssembly(m, g.root, n)
    if len(asm.points) > DIM_CAP:
        raise ResourceLimitError(f"dimension {len(asm.points)} exceeds cap {DIM_CAP}")
    H = asm.H(h)
    B = mass_matrix(asm, mu)
    keep = np.arange(len(B))
    if bc == "dirichlet":
        nb = len(m.vertices(g.root, False))
        keep = np.setdiff1d(keep, asm.base_index[:nb])
    H = H[np.ix_(keep, keep)]
    B = B[keep]
    if np.any(B <= 0):
        raise ModelError("a vertex carries zero mass")
    s = 1.0 / np.sqrt(B)
    A = -(H * s[:, None]) * s[None, :]
    A = 0.5 * (A + A.T)
    lam = np.linalg.eigvalsh(A)
    lam = np.sort(lam)
    top = max(abs(lam[-1]), 1.0) if len(lam) else 1.0
    lam[np.abs(lam) < 1e-10 * top] = 0.0
    res = SpectrumResult(lam, n, bc)
    if fit:
        e, win, r = counting_exponent(res)
        res.exponent, res.window, res.residual = e, win, r
    return res


def counting_exponent(s, trim: float = 0.1):
    """Slope of log N(x) against log x over the middle of the positive spectrum.

    The window drops the lowest and highest `trim` fraction of the log range
    [log lambda_min, log lambda_max] of positive eigenvalues; N is sampled at every
    eigenvalue inside it. Returns (slope, (x_lo, x_hi), rms residual).
    """
    lam = np.asarray(s.eigenvalues if isinstance(s, SpectrumResult) else s, dtype=float)
    lam = np.sort(lam)
    top = lam[-1] if len(lam) else 0.0
    pos = lam[lam > 1e-9 * max(top, 1e-300)]
    if len(pos) < 50:
        raise ValueError(f"need at least 50 positive eigenvalues, got {len(pos)}")
    N = np.searchsorted(lam, pos, side="right").astype(float)
    L = np.log(pos)
    span = L[-1] - L[0]
    keep = (L >= L[0] + trim * span) & (L <= L[-1] - trim * span)
    if keep.sum() < 2 or span <= 0:
        raise ValueError("fit window holds fewer than two distinct eigenvalues")
    x, y = L[keep], np.log(N[keep])
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    return float(slope), (float(pos[keep][0]), float(pos[keep][-1])), resid
