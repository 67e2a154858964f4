"""Affine generalized Cartan matrices, diagram involutions and foldings.

Convention: ``A[i][j]`` is the coefficient of the unknown attached to node j in
the equation of node i, i.e. ``A[i][j] = 2 nu(i, j) / nu(j, j)`` for an
extended diagram.  With this convention the left kernel of an extended matrix
is the vector of marks and the right kernel is ``marks * nu(i, i)``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .rootsys import RootSystem

__all__ = [
    "AffineSystem",
    "Involution",
    "extended_affine",
    "sigma0",
    "fold",
    "affine_kernels",
    "nullspace",
    "classify_shape",
]

Matrix = tuple[tuple[int, ...], ...]


def nullspace(m) -> list[list[Fraction]]:
    """Basis of the right nullspace of a rational matrix (reduced row echelon)."""
    rows = [list(map(Fraction, r)) for r in m]
    ncols = len(rows[0]) if rows else 0
    pivots = []
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(rows)) if rows[i][c] != 0), None)
        if piv is None:
            continue
        rows[r], rows[piv] = rows[piv], rows[r]
        p = rows[r][c]
        rows[r] = [x / p for x in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [x - f * y for x, y in zip(rows[i], rows[r])]
        pivots.append(c)
        r += 1
        if r == len(rows):
            break
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * ncols
        v[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            v[pc] = -rows[i][fc]
        basis.append(v)
    return basis


def _positive_normalized(v, what):
    if all(x < 0 for x in v):
        v = [-x for x in v]
    if not all(x > 0 for x in v):
        raise ValueError(f"{what} kernel is not strictly positive: input is not of affine type")
    m = min(v)
    return tuple(x / m for x in v)


def affine_kernels(A) -> tuple[tuple[Fraction, ...], tuple[Fraction, ...]]:
    """Exact positive kernels ``(u, lam)`` with ``A u = 0`` and ``lam^T A = 0``.

    Both are scaled so the smallest entry is 1.

    Raises
    ------
    ValueError
        If either kernel is not one-dimensional or not strictly positive.
    """
    n = len(A)
    right = nullspace(A)
    left = nullspace([[A[i][j] for i in range(n)] for j in range(n)])
    if len(right) != 1 or len(left) != 1:
        raise ValueError(
            f"kernel dimensions (right {len(right)}, left {len(left)}) are not 1: "
            "input is not of affine type"
        )
    return _positive_normalized(right[0], "right"), _positive_normalized(left[0], "left")


def _adjacency(A):
    n = len(A)
    return [[j for j in range(n) if j != i and A[i][j] != 0] for i in range(n)]


def classify_shape(A) -> str:
    """``path``, ``prong``, ``cycle`` or ``other`` for the underlying graph.

    ``prong`` means the node at index 0 is a leaf whose neighbour carries a
    second leaf joined by an identical bond, as in the B and D families.
    """
    n = len(A)
    adj = _adjacency(A)
    edges = sum(len(a) for a in adj) // 2
    if edges >= n:
        return "cycle"
    if max((len(a) for a in adj), default=0) <= 2:
        return "path"
    if len(adj[0]) == 1:
        b = adj[0][0]
        for a in adj[b]:
            if a != 0 and len(adj[a]) == 1 and (A[a][b], A[b][a]) == (A[0][b], A[b][0]):
                return "prong"
    return "other"


@dataclass(frozen=True)
class AffineSystem:
    """Generalized Cartan matrix of affine type with its kernels.

    Attributes
    ----------
    size : int
    A : tuple of tuple of int
    right_kernel : tuple of Fraction
        Positive ``u`` with ``A u = 0``.
    left_kernel : tuple of Fraction
        Positive ``lam`` with ``lam^T A = 0``.
    shape : str
    node_labels : tuple of str
        For folded systems, the merged nodes; a trailing ``/2`` marks a node
        whose unknown was halved.
    name : str
    orbits : tuple of tuple of int
        Indices of the parent diagram's nodes represented by each node.
    halved : tuple of bool
        Nodes whose unknown is half the parent's.
    """

    size: int
    A: Matrix
    right_kernel: tuple[Fraction, ...]
    left_kernel: tuple[Fraction, ...]
    shape: str
    node_labels: tuple[str, ...]
    name: str = ""
    orbits: tuple[tuple[int, ...], ...] = field(default=())
    halved: tuple[bool, ...] = field(default=())

    def symmetrizer(self) -> tuple[Fraction, ...]:
        """Positive ``d`` with ``A[i][j] d[j] = A[j][i] d[i]``, ``d[0] = 1``.

        ``A diag(d)`` is then a symmetric form proportional to the inner
        products of the nodes.
        """
        d = [None] * self.size
        d[0] = Fraction(1)
        adj = _adjacency(self.A)
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in adj[i]:
                val = d[i] * Fraction(self.A[j][i], self.A[i][j])
                if d[j] is None:
                    d[j] = val
                    queue.append(j)
                elif d[j] != val:
                    raise ValueError("matrix is not symmetrizable")
        return tuple(d)

    def gram(self) -> tuple[tuple[Fraction, ...], ...]:
        """Symmetric form ``A diag(d)``, scaled so node 0 has length 2."""
        d = self.symmetrizer()
        return tuple(tuple(self.A[i][j] * d[j] for j in range(self.size)) for i in range(self.size))

    def path_order(self) -> tuple[int, ...]:
        """Node indices along the path starting at node 0."""
        if self.shape != "path":
            raise ValueError(f"shape is {self.shape}, not path")
        adj = _adjacency(self.A)
        if len(adj[0]) > 1:
            raise ValueError("node 0 is not an end of the path")
        order, prev = [0], None
        while len(order) < self.size:
            nxt = [j for j in adj[order[-1]] if j != prev]
            prev = order[-1]
            order.append(nxt[0])
        return tuple(order)

    def permuted(self, order) -> "AffineSystem":
        """The same system with nodes listed in ``order``."""
        order = tuple(order)
        if sorted(order) != list(range(self.size)):
            raise ValueError("order is not a permutation")
        A = tuple(tuple(self.A[i][j] for j in order) for i in order)
        pick = lambda seq: tuple(seq[i] for i in order) if seq else seq
        return AffineSystem(
            size=self.size,
            A=A,
            right_kernel=pick(self.right_kernel),
            left_kernel=pick(self.left_kernel),
            shape=classify_shape(A),
            node_labels=pick(self.node_labels),
            name=self.name,
            orbits=pick(self.orbits),
            halved=pick(self.halved),
        )

    def in_path_order(self) -> "AffineSystem":
        return self.permuted(self.path_order())


def _make(A, labels, name, orbits=(), halved=()):
    A = tuple(tuple(int(x) for x in row) for row in A)
    n = len(A)
    for i in range(n):
        if A[i][i] != 2:
            raise ValueError(f"diagonal entry A[{i}][{i}] = {A[i][i]} is not 2")
        for j in range(n):
            if i != j and (A[i][j] > 0 or (A[i][j] == 0) != (A[j][i] == 0)):
                raise ValueError(f"entries ({i},{j}) violate the Cartan sign pattern")
    u, lam = affine_kernels(A)
    return AffineSystem(
        size=n,
        A=A,
        right_kernel=u,
        left_kernel=lam,
        shape=classify_shape(A),
        node_labels=tuple(labels),
        name=name,
        orbits=tuple(orbits) or tuple((i,) for i in range(n)),
        halved=tuple(halved) or (False,) * n,
    )


def extended_affine(rs: RootSystem) -> AffineSystem:
    """Extended diagram of a root system as an affine Cartan matrix.

    Node 0 is ``-delta``.  The left kernel is checked against the marks.
    """
    g = rs.gram_ext
    n = rs.rank + 1
    A = []
    for i in range(n):
        row = []
        for j in range(n):
            a = 2 * g[i][j] / g[j][j]
            if a.denominator != 1:
                raise ArithmeticError("non-integral extended Cartan entry")
            row.append(int(a))
        A.append(row)
    aff = _make(A, rs.ext_labels, f"{rs.lie_type}{rs.rank}~")
    marks = tuple(Fraction(m) for m in rs.ext_marks)
    if aff.left_kernel != marks:
        raise ArithmeticError(f"left kernel {aff.left_kernel} differs from marks {marks}")
    weighted = [m * g[i][i] for i, m in enumerate(marks)]
    scale = min(weighted)
    if aff.right_kernel != tuple(w / scale for w in weighted):
        raise ArithmeticError("right kernel differs from marks times squared lengths")
    return aff


@dataclass(frozen=True)
class Involution:
    """Permutation of the nodes of an extended diagram fixing node 0."""

    perm: tuple[int, ...]
    name: str = ""

    def __post_init__(self):
        p = self.perm
        if sorted(p) != list(range(len(p))):
            raise ValueError("not a permutation")
        if p[0] != 0:
            raise ValueError("involution must fix node 0 (-delta)")
        if any(p[p[i]] != i for i in range(len(p))):
            raise ValueError("permutation is not an involution")

    @property
    def is_identity(self) -> bool:
        return all(i == j for i, j in enumerate(self.perm))

    def orbits(self) -> list[tuple[int, ...]]:
        seen, out = set(), []
        for i in range(len(self.perm)):
            if i not in seen:
                o = tuple(sorted({i, self.perm[i]}))
                seen.update(o)
                out.append(o)
        return out


def sigma0(lie_type: str, rank: int) -> Involution:
    """Diagram involution used for folding.

    Non-trivial for ``A_n`` (n >= 2), reversing the chain, and for ``E_6``,
    swapping 1 <-> 6 and 3 <-> 5.  The non-trivial involution of
    ``D_{2k+1}`` is not a supported fold and raises ``ValueError``.
    """
    from .rootsys import _valid

    _valid(lie_type, rank)
    ident = tuple(range(rank + 1))
    if lie_type == "A" and rank >= 2:
        return Involution((0,) + tuple(rank + 1 - i for i in range(1, rank + 1)), f"A{rank}")
    if lie_type == "E" and rank == 6:
        return Involution((0, 6, 2, 5, 4, 3, 1), "E6")
    if lie_type == "D" and rank % 2 == 1:
        raise ValueError(f"the involution of D{rank} is not a supported fold")
    return Involution(ident, f"{lie_type}{rank}")


def fold(ext: AffineSystem, inv: Involution) -> AffineSystem:
    """Merge the orbits of ``inv`` into a smaller affine system.

    The folded entry for orbits ``O, P`` is ``sum(A[i][j] for j in P)`` for
    any ``i`` in ``O``.  When an orbit's two nodes are adjacent (even A), its
    diagonal sum is 1; the unknown of that node is then halved, which doubles
    its column.  Nodes are listed in breadth-first order from node 0, so a
    folded path comes out in path order.

    Raises
    ------
    ValueError
        If ``inv`` is not an automorphism of ``ext``.
    """
    A, p, n = ext.A, inv.perm, ext.size
    if len(p) != n:
        raise ValueError(f"involution acts on {len(p)} nodes, diagram has {n}")
    for i in range(n):
        for j in range(n):
            if A[p[i]][p[j]] != A[i][j]:
                raise ValueError(f"involution is not an automorphism: A[{i}][{j}] != A[{p[i]}][{p[j]}]")
    if inv.is_identity:
        return ext

    orbits = inv.orbits()
    m = len(orbits)
    F = [[sum(A[o[0]][j] for j in q) for q in orbits] for o in orbits]
    halved = [False] * m
    for k in range(m):
        if F[k][k] == 1:
            halved[k] = True
            for i in range(m):
                F[i][k] *= 2
        elif F[k][k] != 2:
            raise ValueError(f"orbit {orbits[k]} folds to diagonal {F[k][k]}; unsupported fold")

    # breadth-first order from the orbit of node 0
    adj = _adjacency(F)
    order, queue = [0], deque([0])
    while queue:
        i = queue.popleft()
        for j in sorted(adj[i]):
            if j not in order:
                order.append(j)
                queue.append(j)
    order += [k for k in range(m) if k not in order]

    parent = ext.node_labels
    labels = []
    for k in order:
        name = parent[orbits[k][0]] if len(orbits[k]) == 1 else "{" + ",".join(parent[i] for i in orbits[k]) + "}"
        labels.append(name + ("/2" if halved[k] else ""))
    Fo = [[F[i][j] for j in order] for i in order]
    out = _make(
        Fo,
        labels,
        f"{ext.name}/{inv.name or 'sigma'}",
        orbits=[tuple(ext.orbits[i][0] for i in orbits[k]) if ext.orbits else orbits[k] for k in order],
        halved=[halved[k] for k in order],
    )

    # cross-check the kernels against the parent data
    u_exp = [ext.right_kernel[orbits[k][0]] / (2 if halved[k] else 1) for k in order]
    lam_exp = [sum(ext.left_kernel[i] for i in orbits[k]) for k in order]
    for got, exp, what in ((out.right_kernel, u_exp, "right"), (out.left_kernel, lam_exp, "left")):
        s = min(exp)
        if tuple(x / s for x in exp) != got:
            raise ArithmeticError(f"folded {what} kernel {got} disagrees with orbit data {exp}")
    return out
