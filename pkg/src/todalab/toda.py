"""Discrete affine Toda systems on the periodic grid and their Newton solver.

The unknowns are log-corrections ``u_i`` with ``w_i = t^2 G_i exp(u_i)``, where
``G_i`` is the forcing of node ``i``.  Away from divisor points the system reads

    laplacian(log w_i) = kappa + sum_j K_ij w_j

and, since ``laplacian(log G_i)`` carries the point masses of the divisor,
the smooth unknowns satisfy

    laplacian(u_i) = kappa + sum_j K_ij w_j + 4 pi deg(D_i) / area.

Four couplings are supported:

``raw``
    root-system coupling ``K = 4 nu`` and ``w_i = e_i`` (root energies).
``variant``
    ``K = 2 A`` with ``A`` an affine Cartan matrix; ``w_i = nu_ii e_i``.
``shifted``
    ``K = 2 A`` with the constant term written as ``kappa = -2 c``.
``finite``
    ``K = 4 nu`` on the simple roots only (no lowest root).  ``K`` is then
    invertible, nothing is pinned and ``kappa`` must be given.

The positive left kernel ``lam`` of ``K`` (marks for ``raw``) makes the sum
``sum_i lam_i u_i`` harmonic; the solver pins its mean to zero, so it vanishes
identically at a solution.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spsolve

from .folding import AffineSystem, extended_affine
from .grid import Divisor, Forcing, TorusGrid, forcing_from_divisor, laplacian
from .rootsys import RootSystem

__all__ = [
    "TodaProblem",
    "TodaSolution",
    "IncompatibleData",
    "NewtonFailure",
    "ContinuationFailure",
    "assemble",
    "newton_solve",
    "continuation_sweep",
    "derived_fields",
    "scale_node",
    "residual",
]

log = logging.getLogger(__name__)

MODES = ("raw", "variant", "shifted", "finite")


class IncompatibleData(ValueError):
    """The integral compatibility condition fails; ``deficit`` is its value."""

    def __init__(self, msg, deficit):
        super().__init__(msg)
        self.deficit = deficit


class NewtonFailure(RuntimeError):
    def __init__(self, msg, best, history):
        super().__init__(msg)
        self.best = best
        self.history = history


class ContinuationFailure(RuntimeError):
    def __init__(self, msg, t, cause):
        super().__init__(msg)
        self.t = t
        self.cause = cause


@dataclass(frozen=True, eq=False)
class TodaProblem:
    """Assembled discrete system.

    ``K[i, j]`` multiplies ``w_j`` in the equation of node ``i``; ``lam`` is the
    positive left kernel of ``K``; ``gram`` is the symmetric form used for the
    curvature quadratic (squared lengths on its diagonal).
    """

    grid: TorusGrid
    coupling: object
    mode: str
    K: np.ndarray
    lam: np.ndarray
    gram: np.ndarray
    labels: tuple
    forcings: tuple
    kappa: np.ndarray
    t: float = 1.0
    c: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([f.divisor.degree for f in self.forcings], dtype=float)

    @property
    def source(self) -> np.ndarray:
        """Constant terms ``4 pi deg(D_i) / area``."""
        return 4 * np.pi * self.degrees / self.grid.area

    @property
    def log_G(self) -> np.ndarray:
        return np.stack([f.log_G for f in self.forcings])

    def masks(self, tau: float = 1e-6) -> np.ndarray:
        return np.stack([f.mask(tau) for f in self.forcings])

    def compatibility_deficit(self) -> float:
        """``sum_i lam_i (integral(kappa) + 4 pi deg D_i)``; zero when solvable."""
        if self.lam is None:
            return 0.0
        return float(self.lam @ (self.grid.integrate(self.kappa) + 4 * np.pi * self.degrees))

    def with_t(self, t: float) -> "TodaProblem":
        return replace(self, t=float(t))


def _coupling_data(coupling, mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode in ("raw", "finite"):
        if not isinstance(coupling, RootSystem):
            raise TypeError(f"{mode} mode needs a RootSystem coupling")
        if mode == "finite":
            nu = np.array([[float(x) for x in row] for row in coupling.gram])
            return 4 * nu, None, nu, coupling.ext_labels[1:]
        nu = np.array([[float(x) for x in row] for row in coupling.gram_ext])
        return 4 * nu, np.array(coupling.ext_marks, float), nu, coupling.ext_labels
    aff = extended_affine(coupling) if isinstance(coupling, RootSystem) else coupling
    if not isinstance(aff, AffineSystem):
        raise TypeError("coupling must be a RootSystem or an AffineSystem")
    A = np.array(aff.A, dtype=float)
    lam = np.array([float(x) for x in aff.left_kernel])
    if isinstance(coupling, RootSystem):
        gram = np.array([[float(x) for x in row] for row in coupling.gram_ext])
    else:
        gram = np.array([[float(x) for x in row] for row in aff.gram()])
    return 2 * A, lam, gram, aff.node_labels


def assemble(coupling, divisors, kappa=None, t: float = 1.0, mode: str = "raw",
             grid: TorusGrid | None = None, amplitudes=None, c: float | None = None,
             tol: float = 1e-10) -> TodaProblem:
    """Build a :class:`TodaProblem`.

    Parameters
    ----------
    coupling : RootSystem or AffineSystem
    divisors : sequence of Divisor (or lists accepted by ``Divisor.from_list``)
        One per node, in node order.
    kappa : None, float or array
        Curvature datum.  ``None`` picks the compatible constant.  Ignored in
        ``shifted`` mode, where ``kappa = -2 c``.
    amplitudes : sequence of float, optional
        Positive multipliers of the forcings (default 1).
    c : float, optional
        Constant term for ``shifted`` mode; default from the weighted degree
        identity.  Must be positive.

    Raises
    ------
    IncompatibleData
        If the weighted integral of the right-hand side does not vanish.
    """
    grid = grid or TorusGrid()
    K, lam, gram, labels = _coupling_data(coupling, mode)
    m = len(labels)
    divisors = [d if isinstance(d, Divisor) else Divisor.from_list(d) for d in divisors]
    if len(divisors) != m:
        raise ValueError(f"expected {m} divisors, got {len(divisors)}")
    amps = np.ones(m) if amplitudes is None else np.asarray(amplitudes, dtype=float)
    if amps.shape != (m,) or np.any(amps <= 0):
        raise ValueError("amplitudes must be one positive number per node")
    forcings = tuple(forcing_from_divisor(grid, d, float(np.log(a))) for d, a in zip(divisors, amps))
    deg = np.array([d.degree for d in divisors], dtype=float)
    if mode == "finite" and kappa is None:
        raise ValueError("finite mode needs an explicit kappa")
    weighted = float(lam @ deg) if lam is not None else 0.0

    meta = {}
    if mode == "shifted":
        c_default = 2 * np.pi * weighted / (grid.area * lam.sum())
        if c is None:
            c = c_default
        if not c > 0:
            raise IncompatibleData(
                "shifted mode needs a positive constant term; zero-degree data give c = 0", 0.0
            )
        kfield = np.full((grid.N, grid.N), -2.0 * c)
        meta["c_rule"] = "weighted degree identity"
    elif kappa is None:
        kfield = np.full((grid.N, grid.N), -4 * np.pi * weighted / (lam.sum() * grid.area))
    else:
        kfield = np.broadcast_to(np.asarray(kappa, dtype=float), (grid.N, grid.N)).copy()
    kfield.setflags(write=False)

    prob = TodaProblem(grid=grid, coupling=coupling, mode=mode, K=K, lam=lam, gram=gram,
                       labels=tuple(labels), forcings=forcings, kappa=kfield, t=float(t),
                       c=None if c is None else float(c), metadata=meta)
    deficit = prob.compatibility_deficit()
    scale = (1.0 if lam is None else lam.sum()) * (grid.area * np.abs(kfield).max() + 4 * np.pi * max(1.0, deg.max()))
    if abs(deficit) > tol * scale:
        raise IncompatibleData(f"weighted integral of the right-hand side is {deficit:.6e}, not 0", deficit)
    return prob


def scale_node(problem: TodaProblem, i: int, factor: float) -> TodaProblem:
    """Multiply the forcing of node ``i`` by ``factor``."""
    f = list(problem.forcings)
    f[i] = f[i].scaled(factor)
    return replace(problem, forcings=tuple(f))


def _w(problem, u):
    return problem.t**2 * np.exp(np.minimum(problem.log_G + u, 700.0))


def residual(problem: TodaProblem, u: np.ndarray) -> np.ndarray:
    """Residual fields of the discrete system at ``u`` (shape ``(m, N, N)``)."""
    w = _w(problem, u)
    return (
        laplacian(problem.grid, u)
        - problem.kappa[None]
        - np.einsum("ij,jxy->ixy", problem.K, w)
        - problem.source[:, None, None]
    )


@dataclass(frozen=True, eq=False)
class TodaSolution:
    """Converged fields.

    ``w`` is the unknown of the equations (root energies in ``raw`` mode,
    rescaled energies otherwise); ``e`` holds the root energies ``w_i / nu_ii``
    outside ``raw`` mode.
    """

    problem: TodaProblem
    u: np.ndarray
    w: np.ndarray
    residual_norm: float
    residual_by_node: tuple
    iterations: int
    history: tuple
    t: float

    @property
    def e(self) -> np.ndarray:
        if self.problem.mode == "raw":
            return self.w
        return self.w / np.diag(self.problem.gram)[:, None, None]


class _Linearization:
    """Jacobian at ``w`` plus a rank-one term pinning ``mean(sum lam_i u_i)``.

    The full Jacobian has a one-dimensional kernel (the harmonic mode of
    ``sum lam_i u_i``) and its range is the set of fields with vanishing
    weighted mean.  Adding ``beta * lam (mean of lam . du)`` makes it
    invertible while leaving solutions of compatible systems unchanged.
    """

    def __init__(self, problem, w):
        self.p = problem
        self.w = w
        g = problem.grid
        self.m, self.N = problem.m, g.N
        wbar = w.mean(axis=(1, 2))
        if problem.lam is None:
            self.lam, self.beta = np.zeros(self.m), 0.0
        else:
            self.lam = problem.lam
            self.beta = max(1.0, float(np.abs(problem.K).max() * wbar.max())) / float(self.lam @ self.lam)
        M = problem.K * wbar[None, :]
        sym = g.symbol
        blocks = sym[..., None, None] * np.eye(self.m) - M
        blocks[0, 0] += self.beta * np.outer(self.lam, self.lam)
        self.pinv = np.linalg.inv(blocks)

    def matvec(self, x):
        d = x.reshape(self.m, self.N, self.N)
        out = laplacian(self.p.grid, d) - np.einsum("ij,jxy->ixy", self.p.K, self.w * d)
        out += self.beta * self.lam[:, None, None] * np.mean(np.tensordot(self.lam, d, axes=1))
        return out.ravel()

    def precond(self, x):
        r = x.reshape(self.m, self.N, self.N)
        rh = np.fft.rfft2(r)
        zh = np.einsum("xyij,jxy->ixy", self.pinv, rh)
        return np.fft.irfft2(zh, s=(self.N, self.N)).ravel()

    def sparse_bordered(self, bordered=True):
        """Sparse bordered matrix for a direct fallback solve."""
        g, m, N = self.p.grid, self.m, self.N
        n = N * N
        e = np.ones(N)
        D1 = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], shape=(N, N), format="lil")
        D1[0, N - 1] = D1[N - 1, 0] = 1
        D1 = D1.tocsr()
        I = sp.identity(N, format="csr")
        L = (sp.kron(D1, I) + sp.kron(I, D1)) / g.h**2
        blocks = [[None] * m for _ in range(m)]
        for i in range(m):
            for j in range(m):
                B = -sp.diags(self.p.K[i, j] * self.w[j].ravel())
                if i == j:
                    B = B + L
                blocks[i][j] = B
        J = sp.bmat(blocks, format="csr")
        if not bordered:
            return J.tocsc()
        col = np.concatenate([np.full(n, lam_i) for lam_i in self.lam])[:, None]
        row = col.T / n
        return sp.bmat([[J, sp.csr_matrix(col)], [sp.csr_matrix(row), None]], format="csc")

    def solve(self, rhs, target, rtol):
        """Solve ``J du = rhs`` with ``mean(lam . du) = target``."""
        size = self.m * self.N * self.N
        A = LinearOperator((size, size), matvec=self.matvec, dtype=float)
        P = LinearOperator((size, size), matvec=self.precond, dtype=float)
        b = rhs + self.beta * self.lam[:, None, None] * target
        x, info = gmres(A, b.ravel(), M=P, rtol=rtol, atol=0.0, restart=60, maxiter=20)
        if info != 0 and self.beta == 0.0:
            log.info("gmres did not converge (info=%s); using direct solve", info)
            x = spsolve(self.sparse_bordered(bordered=False), rhs.ravel())
        elif info != 0:
            log.info("gmres did not converge (info=%s); using direct solve", info)
            x = spsolve(self.sparse_bordered(), np.concatenate([rhs.ravel(), [target]]))[:size]
        return x.reshape(self.m, self.N, self.N)


def newton_solve(problem: TodaProblem, init=None, tol: float = 1e-10, max_iter: int = 30,
                 max_halvings: int = 20) -> TodaSolution:
    """Damped Newton iteration with a spectrally preconditioned GMRES inner solve.

    Converged when the sup-norm residual over all nodes is at most ``tol``.
    ``iterations`` counts Newton steps taken (0 if ``init`` already solves).

    Raises
    ------
    NewtonFailure
        Carrying the best iterate and the residual history.
    """
    g = problem.grid
    m = problem.m
    u = np.zeros((m, g.N, g.N)) if init is None else np.array(init, dtype=float, copy=True)
    if u.shape != (m, g.N, g.N):
        raise ValueError(f"init has shape {u.shape}, expected {(m, g.N, g.N)}")
    lam = problem.lam if problem.lam is not None else np.zeros(m)
    history = []
    best = (np.inf, u)

    def pinned_residual(u):
        F = residual(problem, u)
        drift = float(np.mean(np.tensordot(lam, u, axes=1)))
        return F, drift

    F, drift = pinned_residual(u)
    merit = np.sqrt(np.mean(F**2) + drift**2)
    for it in range(max_iter + 1):
        res = float(np.abs(F).max())
        history.append(res)
        if res < best[0]:
            best = (res, u)
        if res <= tol and abs(drift) <= tol:
            w = _w(problem, u)
            return TodaSolution(problem, u, w, res, tuple(float(x) for x in np.abs(F).max(axis=(1, 2))),
                                it, tuple(history), problem.t)
        if it == max_iter:
            break
        lin = _Linearization(problem, _w(problem, u))
        rtol = min(1e-3, max(1e-13, 0.01 * res))
        du = lin.solve(-F, -drift, rtol)
        step = 1.0
        for _ in range(max_halvings + 1):
            trial = u + step * du
            Ft, dt = pinned_residual(trial)
            mt = np.sqrt(np.mean(Ft**2) + dt**2)
            if np.isfinite(mt) and mt <= (1 - 1e-4 * step) * merit:
                break
            step *= 0.5
        else:
            raise NewtonFailure(f"line search failed at iteration {it} (residual {res:.3e})", best[1], history)
        u, F, drift, merit = trial, Ft, dt, mt
    raise NewtonFailure(f"no convergence in {max_iter} iterations (residual {history[-1]:.3e})", best[1], history)


def continuation_sweep(problem: TodaProblem, t_values, init=None, tol: float = 1e-10,
                       max_iter: int = 30, max_refine: int = 4) -> list[TodaSolution]:
    """Solve along an ascending ladder of ``t``, warm-starting each rung.

    If a warm start fails, intermediate values of ``t`` (geometric midpoints)
    are inserted, up to ``max_refine`` levels.
    """
    ts = [float(t) for t in t_values]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("t_values must be sorted ascending")
    if any(t <= 0 for t in ts):
        raise ValueError("t values must be positive")
    out = []
    prev = init
    prev_t = None
    for t in ts:
        sol = _reach(problem, prev, prev_t, t, tol, max_iter, max_refine)
        out.append(sol)
        prev, prev_t = sol.u, t
    return out


def _reach(problem, init, t0, t, tol, max_iter, depth):
    try:
        return newton_solve(problem.with_t(t), init, tol, max_iter)
    except NewtonFailure as exc:
        if t0 is None or depth == 0:
            raise ContinuationFailure(f"continuation broke at t={t}: {exc}", t, exc) from exc
        mid = float(np.sqrt(t0 * t))
        half = _reach(problem, init, t0, mid, tol, max_iter, depth - 1)
        return _reach(problem, half.u, mid, t, tol, max_iter, depth - 1)


def derived_fields(sol: TodaSolution) -> dict:
    """Total energy, rescaled energies and the curvature quadratic.

    ``Q = 4 sum_ab e_a e_b nu(a, b)`` is nonnegative and vanishes exactly on
    the multiples of the marks.
    """
    p = sol.problem
    e = sol.e
    nu_diag = np.diag(p.gram)
    return {
        "energy": e.sum(axis=0),
        "e": e,
        "e_tilde": e * nu_diag[:, None, None],
        "Q": 4 * np.einsum("axy,ab,bxy->xy", e, p.gram, e),
    }
