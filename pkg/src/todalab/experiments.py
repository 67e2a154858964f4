"""Numerical experiments on solver output, each producing a :class:`Verdict`.

Every experiment re-evaluates the residual of each solution it uses before
asserting anything else.  Inequalities are asserted on masks derived from the
forcings, ``{G_i >= tau * max G_i}``, never from the solution itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import maxprin
from .folding import AffineSystem, extended_affine, fold, sigma0
from .grid import Divisor, TorusGrid, laplacian
from .rootsys import RootSystem, degree_inequalities
from .toda import (
    assemble,
    continuation_sweep,
    derived_fields,
    newton_solve,
    residual,
    scale_node,
)

__all__ = [
    "Verdict",
    "HypothesisViolation",
    "monotonicity_experiment",
    "ordering_experiment",
    "curvature_experiment",
    "folding_consistency_experiment",
    "limit_experiment",
    "log_mean",
    "ordering_matrix",
]


class HypothesisViolation(ValueError):
    """Input data do not satisfy the hypotheses an experiment relies on."""


@dataclass
class Verdict:
    name: str
    passed: bool
    margin: float
    mask: str
    metadata: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "margin": _num(self.margin),
            "mask": self.mask,
            "artifacts": list(self.artifacts),
            "metadata": _clean(self.metadata),
            "details": _clean(self.details),
        }


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else str(x)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    return obj


def _divs(divisors):
    return [d if isinstance(d, Divisor) else Divisor.from_list(d) for d in divisors]


def _certify(sol, tol):
    """Recompute the residual of a solution independently of the solver."""
    r = float(np.abs(residual(sol.problem, sol.u)).max())
    return {"t": sol.t, "residual": r, "iterations": sol.iterations, "ok": r <= tol}


def _coupling_name(coupling):
    return coupling.name if isinstance(coupling, (RootSystem, AffineSystem)) else str(coupling)


def log_mean(a, b):
    """``(b - a) / (log b - log a)``, continuous across ``a == b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    la, lb = np.log(a), np.log(b)
    d = lb - la
    small = np.abs(d) < 1e-8
    safe = np.where(small, 1.0, d)
    return np.where(small, np.sqrt(a * b) * (1 + d**2 / 24), (b - a) / safe)


def monotonicity_experiment(coupling, divisors, t_values, grid=None, mode="raw", tau=1e-6,
                            tol=1e-10, max_iter=30, amplitudes=None) -> Verdict:
    """Energies increase pointwise with ``t``.

    For consecutive ``t < t'`` the margin is the minimum over node ``i``'s mask
    of ``w_i(t') - w_i(t)``.  The ratio fields ``lam_i log(w_i(t') / w_i(t))``
    are handed to the generalized Dai-Li verdict and to the subset-graph
    maximum principle as two further routes to the same conclusion.
    """
    grid = grid or TorusGrid()
    ts = sorted(float(t) for t in t_values)
    divisors = _divs(divisors)
    problem = assemble(coupling, divisors, t=ts[0], mode=mode, grid=grid, amplitudes=amplitudes)
    sols = continuation_sweep(problem, ts, tol=tol, max_iter=max_iter)
    certs = [_certify(s, tol) for s in sols]
    masks = problem.masks(tau)
    lam = problem.lam
    K = problem.K

    steps = []
    margin = np.inf
    passed = all(c["ok"] for c in certs)
    for s0, s1 in zip(sols, sols[1:]):
        diff = s1.w - s0.w
        per_node = [float(diff[i][masks[i]].min()) for i in range(problem.m)]
        outside = int(sum(((diff[i] <= 0) & ~masks[i]).sum() for i in range(problem.m)))
        step = {"t": s0.t, "t_next": s1.t, "margin_by_node": per_node, "nonpositive_outside_mask": outside}
        if s1.t == s0.t:
            step["equality_case"] = True
            step["ok"] = bool(np.abs(diff).max() <= 1e-9)
            margin = min(margin, 0.0)
        else:
            m_step = min(per_node)
            margin = min(margin, m_step)
            # ratio system and its maximum principles
            v = lam[:, None, None] * (np.log(s1.w) - np.log(s0.w))
            D = log_mean(s0.w, s1.w)
            Cg = (lam[:, None] * K / lam[None, :])[:, :, None, None] * D[None, :, :, :]
            Cf = maxprin.MatrixField.from_grid(Cg)
            dl = maxprin.dai_li_gen_verdict(v, Cf)
            setup = maxprin.build_subset_graph(Cf, np.ones(problem.m), 2.0)
            mp = maxprin.mp_verdict(v, Cf, setup, grid=grid)
            ident = np.tensordot(lam, s1.u - s0.u, axes=1)
            ratio_sum = v.sum(axis=0)
            step.update(
                dai_li=dl["outcome"],
                subset_graph={k: mp[k] for k in ("holds", "margin", "equality", "pde_residual")},
                product_identity={
                    "spread": float(ident.max() - ident.min()),
                    "value": float(ident.mean()),
                    "log_ratio_sum": float(ratio_sum.mean()),
                    "expected_2r_log": float(2 * lam.sum() * np.log(s1.t / s0.t)),
                },
            )
            step["ok"] = bool(
                m_step > 0
                and dl["outcome"] == "all_positive"
                and mp["holds"]
                and not mp["equality"]
                and step["product_identity"]["spread"] <= 1e-8
                and abs(step["product_identity"]["value"]) <= 1e-8
            )
        passed = passed and step["ok"]
        steps.append(step)

    if len(sols) < 2:
        margin = 0.0
    return Verdict(
        name="monotonicity",
        passed=bool(passed),
        margin=float(margin),
        mask=f"G_i >= {tau:g} * max G_i per node",
        metadata={"coupling": _coupling_name(coupling), "mode": mode, "t_values": ts,
                  "divisors": [d.to_list() for d in divisors], "grid": [grid.L, grid.N]},
        details={"certificates": certs, "steps": steps},
        fields={f"w_t{i}": s.w for i, s in enumerate(sols)},
    )


def ordering_matrix(A, u):
    """Coefficient matrix of the ratio system along a path.

    With ``B_ij = A_ij u_j``, ``U_i = -B_{i,i+1}`` and ``L_i = -B_{i,i-1}``, the
    ``(n-1) x (n-1)`` matrix has diagonal ``L_{i+1} + U_i``, superdiagonal
    ``-U_{i+1}`` and subdiagonal ``-L_i``.
    """
    A = np.asarray(A, dtype=float)
    u = np.asarray(u, dtype=float)
    B = A * u[None, :]
    n = len(u)
    U = [-B[i, i + 1] for i in range(n - 1)]
    L = [None] + [-B[i, i - 1] for i in range(1, n)]
    C = np.zeros((n - 1, n - 1))
    for i in range(n - 1):
        C[i, i] = L[i + 1] + U[i]
        if i + 1 < n - 1:
            C[i, i + 1] = -U[i + 1]
        if i >= 1:
            C[i, i - 1] = -L[i]
    return C


def _chain_ok(mult, strict_first=True):
    """``D_0 > D_1 >= ... >= D_last = 0`` as divisor functions."""
    for i in range(len(mult) - 1):
        if np.any(mult[i] < mult[i + 1]):
            return False, f"D{i} does not dominate D{i + 1}"
    if strict_first and np.array_equal(mult[0], mult[1]):
        return False, "D0 must strictly dominate D1"
    if np.any(mult[-1] != 0):
        return False, "the last divisor must be zero"
    return True, ""


def ordering_experiment(affine: AffineSystem, divisors, t=1.0, grid=None, tau=1e-6, tol=1e-10,
                        max_iter=30) -> Verdict:
    """Ratios ``w_i / u_i`` increase along a path.

    ``affine`` must be a path with node 0 at one end; divisors are given in
    its node order and must form a chain ``D_0 > D_1 >= ... >= D_last = 0``.
    Link ``i`` is asserted strict on the mask of node ``i + 1``.
    """
    grid = grid or TorusGrid()
    if affine.shape != "path":
        raise HypothesisViolation(f"ordering needs a path diagram, got {affine.shape}")
    order = affine.path_order()
    aff = affine.permuted(order)
    divisors = _divs(divisors)
    divisors = [divisors[i] for i in order]
    mult = np.stack([d.multiplicity_field(grid) for d in divisors])
    ok, why = _chain_ok(mult)
    if not ok:
        raise HypothesisViolation(why)
    problem = assemble(aff, divisors, t=t, mode="shifted", grid=grid)
    sol = newton_solve(problem, tol=tol, max_iter=max_iter)
    cert = _certify(sol, tol)
    u = np.array([float(x) for x in aff.right_kernel])
    f = sol.w / u[:, None, None]
    masks = problem.masks(tau)
    links = []
    margin = np.inf
    for i in range(aff.size - 1):
        d = f[i + 1] - f[i]
        mi = float(d[masks[i + 1]].min())
        links.append({
            "link": [aff.node_labels[i], aff.node_labels[i + 1]],
            "margin": mi,
            "min_everywhere": float(d.min()),
            "nonpositive_outside_mask": int(((d <= 0) & ~masks[i + 1]).sum()),
        })
        margin = min(margin, mi)

    # the ratio system and its sign hypotheses
    C = ordering_matrix(aff.A, u)
    v = np.log(f[1:]) - np.log(f[:-1])
    D = log_mean(f[:-1], f[1:])
    CD = 2 * C[:, :, None, None] * D[None, :, :, :]
    Cf = maxprin.MatrixField.from_grid(CD)
    off_points = mult.sum(axis=0) == 0
    lhs = laplacian(grid, v)
    rhs = np.einsum("ijxy,jxy->ixy", CD, v)
    colsum = C.sum(axis=0)
    details = {
        "certificate": cert,
        "links": links,
        "kernel_u": [str(x) for x in aff.right_kernel],
        "ratio_matrix": C,
        "ratio_matrix_column_sums": colsum,
        "cooperative": maxprin.check_cooperative(Cf, 1e-12).to_json(),
        "cdd": maxprin.check_cdd(Cf, 1e-12).to_json(),
        "fully_coupled": maxprin.check_fully_coupled(Cf).to_json(),
        "ratio_system_residual_off_divisor": float(np.abs(lhs - rhs)[:, off_points].max()),
        "c": problem.c,
    }
    passed = cert["ok"] and margin > 0 and details["cooperative"]["ok"] and details["cdd"]["ok"]
    return Verdict(
        name="ordering",
        passed=bool(passed),
        margin=float(margin),
        mask=f"G_(i+1) >= {tau:g} * max G_(i+1) for link i",
        metadata={"coupling": aff.name, "node_order": list(aff.node_labels), "t": t,
                  "divisors": [d.to_list() for d in divisors], "grid": [grid.L, grid.N]},
        details=details,
        fields={"w": sol.w, "ratios": f},
    )


def _prong_pairs(A):
    """Leaves sharing node 0's neighbour through an identical bond."""
    n = len(A)
    nb0 = [j for j in range(1, n) if A[0][j] != 0]
    b = nb0[0]
    pairs = []
    for a in range(1, n):
        if a == b or A[a][b] == 0:
            continue
        if sum(1 for j in range(n) if j != a and A[a][j] != 0) == 1 and (A[a][b], A[b][a]) == (A[0][b], A[b][0]):
            pairs.append((a, b))
    return pairs


def curvature_experiment(coupling, divisors, t=1.0, grid=None, mode=None, tau=1e-6, tol=1e-10,
                         max_iter=30) -> Verdict:
    """Lowest-root energy is smallest, and the curvature quadratic is positive.

    For path diagrams the asserted inequality is ``e~_0 < e~_a / n_a`` on the
    mask of node ``a``, with ``e~ = nu_aa e`` and ``n`` the marks (for folded
    systems, the identified marks, halved on halved nodes).  The weaker
    ``e_0 < e_a / n_a`` is reported alongside.  For prong diagrams
    ``e_a > e_0`` is asserted for the leaves paired with node 0.  ``Q > 0`` is
    asserted everywhere.  Other shapes only report the sign of ``Q``.
    """
    grid = grid or TorusGrid()
    divisors = _divs(divisors)
    if isinstance(coupling, RootSystem):
        aff = extended_affine(coupling)
        mode = mode or "raw"
        marks = np.array(coupling.ext_marks, dtype=float)
    else:
        aff = coupling
        mode = mode or "variant"
        u = np.array([float(x) for x in aff.right_kernel])
        marks = u / u[0]
    shape = aff.shape
    mult = np.stack([d.multiplicity_field(grid) for d in divisors])
    if not mult[0].any():
        raise HypothesisViolation("the lowest root's divisor must be nonzero")
    if shape == "path":
        order = aff.path_order()
        ok, why = _chain_ok(mult[list(order)])
        if not ok:
            raise HypothesisViolation(why)
    elif shape == "prong":
        for a, _ in _prong_pairs(aff.A):
            if np.any(mult[a] > mult[0]) or np.array_equal(mult[a], mult[0]):
                raise HypothesisViolation(f"divisor of node {a} must be strictly contained in that of node 0")

    problem = assemble(coupling, divisors, t=t, mode=mode, grid=grid)
    sol = newton_solve(problem, tol=tol, max_iter=max_iter)
    cert = _certify(sol, tol)
    df = derived_fields(sol)
    e, et, Q = df["e"], df["e_tilde"], df["Q"]
    masks = problem.masks(tau)
    details = {"certificate": cert, "shape": shape, "Q_min": float(Q.min()), "Q_max": float(Q.max())}
    checks = [cert["ok"]]
    margin = np.inf
    if shape == "path":
        lit, weighted = [], []
        for a in range(1, aff.size):
            d_lit = et[a] / marks[a] - et[0]
            d_w = e[a] / marks[a] - e[0]
            lit.append({"node": aff.node_labels[a], "margin": float(d_lit[masks[a]].min())})
            weighted.append({"node": aff.node_labels[a], "margin": float(d_w[masks[a]].min())})
        details["rescaled_over_marks"] = lit
        details["energy_over_marks"] = weighted
        m_lit = min(x["margin"] for x in lit)
        margin = m_lit
        checks.append(m_lit > 0)
        details["energy_over_marks_ok"] = bool(min(x["margin"] for x in weighted) > 0)
    elif shape == "prong":
        pr = []
        for a, _ in _prong_pairs(aff.A):
            d = e[a] - e[0]
            pr.append({"node": aff.node_labels[a], "margin": float(d[masks[a]].min())})
        details["prong"] = pr
        margin = min(x["margin"] for x in pr)
        checks.append(margin > 0)
    else:
        details["note"] = "shape outside the proven regime; Q sign reported only"
        margin = float(Q.min())
    details["Q_positive"] = bool(Q.min() > 0)
    checks.append(Q.min() > 0)
    return Verdict(
        name="curvature",
        passed=bool(all(checks)),
        margin=float(margin),
        mask=f"G_a >= {tau:g} * max G_a for node a; Q asserted everywhere",
        metadata={"coupling": _coupling_name(coupling), "mode": mode, "t": t,
                  "divisors": [d.to_list() for d in divisors], "grid": [grid.L, grid.N]},
        details=details,
        fields={"e": e, "Q": Q},
    )


def folding_consistency_experiment(lie_type, rank, divisors, t=1.0, grid=None, tol=1e-10,
                                   max_iter=30) -> Verdict:
    """Symmetric solutions of an unfolded diagram match the folded system.

    ``divisors`` are given per node of the extended diagram and must be
    invariant under the diagram involution.  Halved nodes of the fold get
    half the forcing amplitude, so their log-corrections agree with the
    parent's.
    """
    from .rootsys import build_root_system

    grid = grid or TorusGrid()
    rs = build_root_system(lie_type, rank)
    ext = extended_affine(rs)
    inv = sigma0(lie_type, rank)
    divisors = _divs(divisors)
    for i, j in enumerate(inv.perm):
        if divisors[i] != divisors[j] and sorted(divisors[i].points) != sorted(divisors[j].points):
            raise HypothesisViolation(f"divisors of nodes {i} and {j} differ; data are not symmetric")
    folded = fold(ext, inv)

    unf = assemble(rs, divisors, t=t, mode="variant", grid=grid)
    s_unf = newton_solve(unf, tol=tol, max_iter=max_iter)
    fdivs = [divisors[o[0]] for o in folded.orbits]
    amps = [0.5 if h else 1.0 for h in folded.halved]
    fp = assemble(folded, fdivs, t=t, mode="variant", grid=grid, amplitudes=amps)
    s_f = newton_solve(fp, tol=tol, max_iter=max_iter)
    certs = [_certify(s_unf, tol), _certify(s_f, tol)]

    sym = max(float(np.abs(s_unf.u[i] - s_unf.u[j]).max()) for i, j in enumerate(inv.perm))
    dev_u = 0.0
    dev_w = 0.0
    for k, orb in enumerate(folded.orbits):
        for i in orb:
            dev_u = max(dev_u, float(np.abs(s_f.u[k] - s_unf.u[i]).max()))
            scale = 0.5 if folded.halved[k] else 1.0
            dev_w = max(dev_w, float(np.abs(s_f.w[k] - scale * s_unf.w[i]).max()))
    passed = all(c["ok"] for c in certs) and dev_u <= 1e-8 and dev_w <= 1e-8 and sym <= 1e-9
    return Verdict(
        name="fold",
        passed=bool(passed),
        margin=float(1e-8 - max(dev_u, dev_w)),
        mask="none (sup over the whole grid)",
        metadata={"type": f"{lie_type}{rank}", "folded": folded.name, "orbits": folded.orbits,
                  "halved": folded.halved, "t": t, "grid": [grid.L, grid.N]},
        details={"certificates": certs, "deviation_u": dev_u, "deviation_w": dev_w,
                 "symmetry_deviation": sym, "folded_matrix": folded.A},
        fields={"u_unfolded": s_unf.u, "u_folded": s_f.u},
    )


def limit_experiment(rs: RootSystem, divisors, eps_values, grid=None, tau=1e-6, tol=1e-10,
                     max_iter=30, cauchy_tol=1e-4) -> Verdict:
    """Scale the lowest root's forcing by ``eps^2`` and let ``eps`` decrease.

    Asserts that the total energy decreases pointwise on the common mask at
    every rung and records the sup-norm distance between consecutive rungs.
    The limit profile is computed directly from the system on the simple
    roots alone and compared with the last rung.

    The degree gate uses ``d_i = deg D_i + kappa A / (4 pi)``, the torus
    counterpart of ``deg D_i + 2 - 2g``, and requires ``(R d)_i < 0``.
    """
    grid = grid or TorusGrid()
    eps = [float(x) for x in eps_values]
    if any(b > a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps values must be descending")
    divisors = _divs(divisors)
    base = assemble(rs, divisors, mode="raw", grid=grid)
    kappa = float(base.kappa[0, 0])
    shift = Fraction(kappa * grid.area / (4 * np.pi)).limit_denominator(10**6)
    d_eff = [Fraction(d.degree) + shift for d in divisors[1:]]
    ok, rd = degree_inequalities(rs, d_eff, shift)
    gate = {"effective_degrees": d_eff, "R_d": list(rd), "ok": ok}
    if not ok:
        raise HypothesisViolation(f"degree inequalities fail: R d = {[str(x) for x in rd]}")

    sols = []
    prev = None
    for e_ in eps:
        p = scale_node(base, 0, e_**2)
        s = newton_solve(p, init=prev, tol=tol, max_iter=max_iter)
        sols.append(s)
        prev = s.u
    certs = [_certify(s, tol) for s in sols]
    mask = base.masks(tau).all(axis=0)
    energies = [s.w.sum(axis=0) for s in sols]
    steps = []
    margin = np.inf if len(sols) > 1 else 0.0
    for k in range(len(sols) - 1):
        d = energies[k] - energies[k + 1]
        steps.append({"eps": eps[k], "eps_next": eps[k + 1], "margin": float(d[mask].min()),
                      "sup_change": float(np.abs(d).max())})
        if eps[k + 1] < eps[k]:
            margin = min(margin, steps[-1]["margin"])

    # the limit: the same system on the simple roots, with the same kappa
    lim = assemble(rs, divisors[1:], kappa=kappa, mode="finite", grid=grid)
    s_lim = newton_solve(lim, init=sols[-1].u[1:], tol=tol, max_iter=max_iter)
    e_lim = s_lim.w.sum(axis=0)
    dist = [float(np.abs(E - e_lim).max()) for E in energies]
    tail = steps[-1]["sup_change"] if steps else 0.0
    # scaling one node by eps^2 equals t = eps^(1/r); energies move like t^2
    rate = None
    if len(dist) > 1 and eps[-1] < eps[-2]:
        rate = float(np.log(dist[-2] / dist[-1]) / np.log(eps[-2] / eps[-1]))
    details = {
        "degree_gate": gate,
        "certificates": certs,
        "limit_certificate": _certify(s_lim, tol),
        "steps": steps,
        "distance_to_limit": dist,
        "cauchy_tail": tail,
        "cauchy_tol": cauchy_tol,
        "cauchy_ok": bool(tail <= cauchy_tol),
        "observed_rate": rate,
        "expected_rate": 2.0 / rs.coxeter,
    }
    passed = all(c["ok"] for c in certs) and details["limit_certificate"]["ok"] and (margin > 0 or not steps)
    if len(dist) > 1:
        passed = passed and all(b < a for a, b in zip(dist, dist[1:]))
    return Verdict(
        name="limit",
        passed=bool(passed),
        margin=float(margin),
        mask=f"G_i >= {tau:g} * max G_i for every node",
        metadata={"coupling": rs.name, "eps_values": eps, "divisors": [d.to_list() for d in divisors],
                  "grid": [grid.L, grid.N]},
        details=details,
        fields={"energy_last": energies[-1], "energy_limit": e_lim},
    )
