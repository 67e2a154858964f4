"""Maximum principles for cooperative elliptic systems on sampled domains.

A system ``laplacian(u) = C(x) u`` is described by a :class:`MatrixField`, the
matrix ``C`` sampled at finitely many points.  The checkers return structured
:class:`Check` results carrying a witness instead of raising: counterexamples
are the product of this module.

Indices are zero-based throughout.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import linprog, nnls

__all__ = [
    "MatrixField",
    "Check",
    "MPSetup",
    "HypothesisError",
    "check_cooperative",
    "check_cdd",
    "check_fully_coupled",
    "fully_coupled_bruteforce",
    "a_weaker",
    "closed_form_lambda",
    "build_subset_graph",
    "reachable",
    "mp_verdict",
    "dai_li_gen_verdict",
]

ZERO_LAMBDA = 1e-12
FEASIBLE = 1e-10


@dataclass(frozen=True, eq=False)
class MatrixField:
    """An ``n x n`` matrix sampled at ``P`` points; ``samples`` has shape ``(P, n, n)``.

    ``points`` optionally names the samples (grid nodes); witnesses report
    these names.
    """

    samples: np.ndarray
    points: tuple | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 2:
            s = s[None]
        if s.ndim != 3 or s.shape[1] != s.shape[2]:
            raise ValueError(f"samples must have shape (P, n, n), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("matrix field has non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def constant(cls, C) -> "MatrixField":
        return cls(np.asarray(C, dtype=float)[None])

    @classmethod
    def from_grid(cls, C) -> "MatrixField":
        """From an array of shape ``(n, n, N, N)``; points are ``(i, j)`` nodes."""
        C = np.asarray(C, dtype=float)
        n, _, N, M = C.shape
        samples = C.reshape(n, n, N * M).transpose(2, 0, 1)
        points = tuple((k // M, k % M) for k in range(N * M))
        return cls(samples, points)

    def point(self, k):
        return self.points[k] if self.points is not None else int(k)

    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.samples))))


@dataclass
class Check:
    ok: bool
    witness: Any = None
    detail: str = ""

    def __bool__(self):
        return self.ok

    def to_json(self):
        w = self.witness
        if isinstance(w, tuple):
            w = [list(x) if isinstance(x, (tuple, frozenset, set)) else x for x in w]
        return {"ok": bool(self.ok), "witness": w, "detail": self.detail}


def check_cooperative(C: MatrixField, tol: float = 0.0) -> Check:
    """``c_ii >= 0`` and ``c_ij <= 0`` for ``i != j`` at every sample."""
    s = C.samples
    n = C.n
    off = ~np.eye(n, dtype=bool)
    bad = (s > tol * C.scale()) & off[None]
    bad |= (np.diagonal(s, axis1=1, axis2=2) < -tol * C.scale())[:, :, None] & np.eye(n, dtype=bool)[None]
    if not bad.any():
        return Check(True)
    k, i, j = (int(x) for x in np.argwhere(bad)[0])
    return Check(False, (C.point(k), i, j), f"c[{i},{j}] = {s[k, i, j]:.3e} has the wrong sign")


def check_cdd(C: MatrixField, tol: float = 0.0) -> Check:
    """Column sums ``sum_i c_ij >= 0`` at every sample."""
    col = C.samples.sum(axis=1)
    bad = col < -tol * C.scale()
    if not bad.any():
        return Check(True)
    k, j = (int(x) for x in np.argwhere(bad)[0])
    return Check(False, (C.point(k), j), f"column {j} sums to {col[k, j]:.3e}")


def _support(C: MatrixField, zero_tol: float):
    return np.max(np.abs(C.samples), axis=0) > zero_tol


def check_fully_coupled(C: MatrixField, zero_tol: float = 0.0) -> Check:
    """No partition ``A | B`` with ``c_ij`` identically zero for ``i in A, j in B``.

    Equivalent to strong connectivity of the digraph with an edge ``i -> j``
    whenever ``c_ij`` is not identically zero.  The witness is ``(A, B)``.
    """
    sup = _support(C, zero_tol)
    n = C.n
    for start in range(n):
        seen = {start}
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in range(n):
                if j not in seen and i != j and sup[i, j]:
                    seen.add(j)
                    queue.append(j)
        if len(seen) < n:
            A = tuple(sorted(seen))
            B = tuple(sorted(set(range(n)) - seen))
            return Check(False, (A, B), "coupling vanishes from A into B")
    return Check(True)


def fully_coupled_bruteforce(C: MatrixField, zero_tol: float = 0.0) -> bool:
    """Scan all ``2^n - 2`` partitions; exponential, intended as an oracle."""
    sup = _support(C, zero_tol)
    n = C.n
    for mask in range(1, 2**n - 1):
        A = [i for i in range(n) if mask >> i & 1]
        B = [i for i in range(n) if not mask >> i & 1]
        if not sup[np.ix_(A, B)].any():
            return False
    return True


def _max_support_solution(M, b):
    """Nonnegative solution of ``M lam = b`` with the largest possible support.

    Returns ``None`` if the system is infeasible.
    """
    k = M.shape[1]
    # first try for a strictly positive solution: maximize s with lam >= s
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_eq = np.hstack([M, np.zeros((M.shape[0], 1))])
    A_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(k), A_eq=A_eq, b_eq=b,
                  bounds=[(0, None)] * k + [(None, 1.0)], method="highs")
    if res.status != 0:
        return None
    if res.x[-1] > 0:
        return res.x[:k]
    # otherwise average the per-coordinate maximizers
    sols = []
    for i in range(k):
        ci = np.zeros(k)
        ci[i] = -1.0
        r = linprog(ci, A_eq=M, b_eq=b, bounds=[(0, 1e6)] * k, method="highs")
        if r.status == 0:
            sols.append(r.x)
    return np.mean(sols, axis=0) if sols else res.x[:k]


def a_weaker(A: MatrixField, v0, vs, tol: float = FEASIBLE, max_support: bool = False) -> dict:
    """Decide whether ``v0`` is ``A^T``-weaker than ``vs`` at every sample.

    Solves ``A(x)^T v0 = sum_i lam_i(x) (v0 - v_i)`` with ``lam >= 0`` by
    nonnegative least squares.  When the differences ``v0 - v_i`` are
    linearly dependent the solution is not unique; with ``max_support`` a
    linear program then looks for a solution with as many nonzero
    coefficients as possible, which is the right input for the minimality
    report.

    Returns
    -------
    dict with keys ``feasible``, ``lam`` (shape ``(P, k)``), ``residual``
    (per sample), ``zero`` (per coefficient, sup below 1e-12), ``minimal``
    and, when infeasible, ``witness`` and ``best_residual``.
    """
    v0 = np.asarray(v0, dtype=float)
    V = np.asarray(vs, dtype=float).reshape(-1, v0.size)
    k = V.shape[0]
    M = (v0[None, :] - V).T
    targets = np.einsum("pji,j->pi", A.samples, v0)
    lam = np.zeros((A.size, k))
    resid = np.zeros(A.size)
    unique = k == 0 or np.linalg.matrix_rank(M) == k
    for p in range(A.size):
        b = targets[p]
        if k == 0:
            resid[p] = np.linalg.norm(b)
            continue
        x, r = nnls(M, b)
        if max_support and not unique and r <= tol * max(1.0, np.linalg.norm(b)):
            y = _max_support_solution(M, b)
            if y is not None and np.linalg.norm(M @ y - b) <= tol * max(1.0, np.linalg.norm(b)):
                x = y
                r = np.linalg.norm(M @ y - b)
        lam[p] = x
        resid[p] = r
    scale = np.maximum(1.0, np.linalg.norm(targets, axis=1))
    ok = resid <= tol * scale
    zero = np.max(lam, axis=0) < ZERO_LAMBDA if A.size else np.ones(k, bool)
    out = {
        "feasible": bool(ok.all()),
        "lam": lam,
        "residual": resid,
        "zero": zero,
        "minimal": bool(ok.all() and not zero.any()),
        "unique": bool(unique),
    }
    if not ok.all():
        p = int(np.argmax(resid / scale))
        out["witness"] = A.point(p)
        out["best_residual"] = float(resid[p])
    return out


class HypothesisError(ValueError):
    """Raised when the hypotheses of a maximum principle are not met."""

    def __init__(self, report):
        self.report = report
        failed = [k for k, v in report.items() if not v]
        super().__init__(f"hypotheses failed: {', '.join(failed)}")


@dataclass
class MPSetup:
    """Vertex set, boundary, directed graph and coefficient fields.

    ``lambda_fields[v]`` has shape ``(P, len(edges[v]))`` and holds the
    coefficients of the decomposition of ``C^T S[v]`` along ``edges[v]``.
    """

    S: list
    labels: list
    boundary: set
    edges: dict
    lambda_fields: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)

    def index(self, label):
        return self.labels.index(label)


def closed_form_lambda(C: MatrixField, subset, nu=None, K=None):
    """Coefficients of the subset decomposition.

    For a proper subset ``A`` the neighbours are ``A - {i}`` (``i in A``) and
    ``A + {i}`` (``i not in A``) with ``lam_i = +-sum_{j in A} c_ji``.  For the
    full set the neighbours are ``full - {i}`` followed by ``K nu``, with
    ``lam = K nu - 1 + C^T 1`` and coefficient 1 on ``K nu``.

    Returns ``(neighbours, lam)`` where neighbours are frozensets (or the
    string ``"Knu"``) and ``lam`` has shape ``(P, k)``.
    """
    n = C.n
    A = frozenset(subset)
    colsum = C.samples[:, sorted(A), :].sum(axis=1) if A else np.zeros((C.size, n))
    if len(A) < n:
        nbrs = []
        lam = []
        for i in range(n):
            if i in A:
                nbrs.append(A - {i})
                lam.append(colsum[:, i])
            else:
                nbrs.append(A | {i})
                lam.append(-colsum[:, i])
        return nbrs, np.stack(lam, axis=1)
    nu = np.asarray(nu, dtype=float)
    nbrs = [A - {i} for i in range(n)] + ["Knu"]
    lam = K * nu[None, :] - 1.0 + colsum
    return nbrs, np.hstack([lam, np.ones((C.size, 1))])


def build_subset_graph(C: MatrixField, nu, K: float, zero_tol: float = 0.0, verify: bool = True) -> MPSetup:
    """Vertex set ``{e_A}`` plus ``K nu`` with boundary ``{0, K nu}``.

    Edges carry the closed-form coefficients; identically-zero coefficients
    are pruned.  With ``verify`` every non-boundary vertex is re-checked to be
    minimally ``C^T``-weaker than its neighbourhood, and every vertex to
    reach the boundary.

    Raises
    ------
    HypothesisError
        If ``C`` is not cooperative, column diagonally dominant and fully
        coupled, or ``K <= 1 / min(nu)``.
    """
    nu = np.asarray(nu, dtype=float)
    n = C.n
    tol = 1e-12
    report = {
        "cooperative": bool(check_cooperative(C, tol)),
        "cdd": bool(check_cdd(C, tol)),
        "fully_coupled": bool(check_fully_coupled(C, zero_tol)),
        "nu_positive": bool(nu.shape == (n,) and np.all(nu > 0)),
    }
    report["K_large"] = bool(report["nu_positive"] and K > 1.0 / nu.min())
    if not all(report.values()):
        raise HypothesisError(report)

    subsets = [frozenset(c) for r in range(n + 1) for c in itertools.combinations(range(n), r)]
    labels = subsets + ["Knu"]
    S = [np.array([1.0 if i in A else 0.0 for i in range(n)]) for A in subsets] + [K * nu]
    idx = {lab: k for k, lab in enumerate(labels)}
    boundary = {idx[frozenset()], idx["Knu"]}
    edges, lam_fields = {}, {}
    for A in subsets[1:]:
        nbrs, lam = closed_form_lambda(C, A, nu, K)
        keep = np.max(lam, axis=0) >= ZERO_LAMBDA
        edges[idx[A]] = [idx[b] for b, k in zip(nbrs, keep) if k]
        lam_fields[idx[A]] = lam[:, keep]
    for v in boundary:
        edges.setdefault(v, [])
    setup = MPSetup(S=S, labels=labels, boundary=boundary, edges=edges, lambda_fields=lam_fields, report=report)

    if verify:
        setup.report.update(verify_setup(C, setup))
        if not (setup.report["weaker"] and setup.report["reachable"]):
            raise HypothesisError(setup.report)
    return setup


def verify_setup(C: MatrixField, setup: MPSetup, tol: float = FEASIBLE) -> dict:
    """Check both graph hypotheses of the neighbourhood maximum principle."""
    worst = 0.0
    weaker = True
    for v, nbrs in setup.edges.items():
        if v in setup.boundary:
            continue
        lam = setup.lambda_fields[v]
        v0 = setup.S[v]
        diffs = np.stack([v0 - setup.S[w] for w in nbrs], axis=1) if nbrs else np.zeros((C.n, 0))
        lhs = np.einsum("pji,j->pi", C.samples, v0)
        r = np.abs(lhs - lam @ diffs.T).max() / max(1.0, np.abs(lhs).max())
        worst = max(worst, float(r))
        if r > tol or (lam < 0).any() or (np.max(lam, axis=0) < ZERO_LAMBDA).any() or not nbrs:
            weaker = False
    reach = reachable(setup)
    return {"weaker": weaker, "weaker_residual": worst, "reachable": all(reach)}


def reachable(setup: MPSetup) -> list[bool]:
    """Whether each vertex can reach the boundary along directed edges."""
    m = len(setup.S)
    rev = {i: [] for i in range(m)}
    for v, nbrs in setup.edges.items():
        for w in nbrs:
            rev[w].append(v)
    ok = [False] * m
    queue = deque(sorted(setup.boundary))
    for b in setup.boundary:
        ok[b] = True
    while queue:
        w = queue.popleft()
        for v in rev[w]:
            if not ok[v]:
                ok[v] = True
                queue.append(v)
    return ok


def _flat(u):
    u = np.asarray(u, dtype=float)
    return u.reshape(u.shape[0], -1)


def mp_verdict(u, A: MatrixField, setup: MPSetup, tol: float = 1e-9, grid=None) -> dict:
    """Compare minima of ``<v, u>`` over interior and boundary vertices.

    The neighbourhood principle asserts ``min_interior >= min_boundary``; in
    the equality case the minimizing interior function must be constant.
    ``u`` has shape ``(n, P)`` or ``(n, N, N)``.  If ``grid`` is given and
    ``u`` lives on it, the residual of ``laplacian(u) = A u`` is reported.
    """
    U = _flat(u)
    S = np.stack(setup.S)
    vals = S @ U
    mins = vals.min(axis=1)
    interior = [v for v in range(len(S)) if v not in setup.boundary]
    bnd = sorted(setup.boundary)
    lhs = float(min(mins[interior])) if interior else np.inf
    rhs = float(min(mins[bnd]))
    margin = lhs - rhs
    out = {"holds": bool(margin >= -tol), "margin": margin, "min_interior": lhs, "min_boundary": rhs}
    if interior and abs(margin) <= tol:
        v0 = interior[int(np.argmin(mins[interior]))]
        spread = float(vals[v0].max() - vals[v0].min())
        out["equality"] = True
        out["argmin"] = str(setup.labels[v0])
        out["constant"] = bool(spread <= tol)
        out["spread"] = spread
        out["holds"] = out["holds"] and out["constant"]
    else:
        out["equality"] = False
    if grid is not None:
        from .grid import laplacian

        uu = np.asarray(u, dtype=float).reshape(U.shape[0], grid.N, grid.N)
        Au = np.einsum("pij,jp->ip", A.samples, U).reshape(uu.shape)
        out["pde_residual"] = float(np.abs(laplacian(grid, uu) - Au).max())
    return out


def dai_li_gen_verdict(u, C: MatrixField, nu=None, tol: float = 1e-9, hyp_tol: float = 1e-12) -> dict:
    """Trichotomy for ``laplacian(u) = C u`` with ``sum nu_i u_i >= 0``.

    Returns a dict whose ``outcome`` is ``all_zero``, ``all_positive``,
    ``violation`` (the data contradict the principle; a numerical problem
    upstream) or ``refused`` (hypotheses fail, no conclusion is drawn).
    """
    U = _flat(u)
    n = U.shape[0]
    nu = np.ones(n) if nu is None else np.asarray(nu, dtype=float)
    hyp = {
        "cooperative": check_cooperative(C, hyp_tol).to_json(),
        "cdd": check_cdd(C, hyp_tol).to_json(),
        "fully_coupled": check_fully_coupled(C).to_json(),
    }
    weighted = nu @ U
    hyp["weighted_sum_nonnegative"] = {
        "ok": bool(weighted.min() >= -tol),
        "witness": None if weighted.min() >= -tol else C.point(int(np.argmin(weighted))) if C.size == U.shape[1] else int(np.argmin(weighted)),
        "detail": f"min sum nu_i u_i = {weighted.min():.3e}",
    }
    out = {"hypotheses": hyp, "min": float(U.min()), "max": float(U.max())}
    if not all(h["ok"] for h in hyp.values()):
        out["outcome"] = "refused"
        return out
    diag = []
    for i in range(n):
        lo, hi = U[i].min(), U[i].max()
        if lo < tol and hi > 10 * tol:
            diag.append({"component": i, "min": float(lo), "max": float(hi)})
    out["vanishing_inconsistency"] = diag
    if np.abs(U).max() <= tol:
        out["outcome"] = "all_zero"
    elif U.min() > 0:
        out["outcome"] = "all_positive"
    else:
        i, p = np.unravel_index(int(np.argmin(U)), U.shape)
        out["outcome"] = "violation"
        out["witness"] = [int(i), C.point(int(p)) if C.size == U.shape[1] else int(p)]
    return out
