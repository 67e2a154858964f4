"""Finite root systems in simple-root coordinates.

Every quantity in this module is exact: roots are integer tuples in the basis
of simple roots and inner products are :class:`fractions.Fraction` values,
normalized so that long roots have squared length 2.

Simple roots follow the Bourbaki labeling, numbered from 1:

* ``A_n``: the chain 1-2-...-n.
* ``B_n``: the chain 1-...-n, roots 1..n-1 long, root n short.
* ``C_n``: the chain 1-...-n, roots 1..n-1 short, root n long.
* ``D_n``: the chain 1-...-(n-2), with node n-2 joined to both n-1 and n.
* ``E_n``: the chain 1-3-4-5-...-n, with node 2 attached to node 4.
* ``F_4``: 1-2=>3-4, roots 1, 2 long.
* ``G_2``: root 1 short, root 2 long.

The extended set of simple roots carries the lowest root ``-delta`` at index 0,
followed by the simple roots in the order above.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "RootSystem",
    "DegreeData",
    "build_root_system",
    "simple_gram",
    "coxeter_number",
    "height",
    "height_grading_check",
    "extended_simple_sums_check",
    "polystability_degree_check",
    "degree_inequalities",
    "all_simple_types",
    "to_json",
]

Root = tuple[int, ...]


def _valid(lie_type, rank):
    if lie_type not in "ABCDEFG" or len(lie_type) != 1:
        raise ValueError(f"unknown Lie type {lie_type!r}; expected one of A-G")
    if not isinstance(rank, int) or rank < 1:
        raise ValueError(f"rank must be a positive integer, got {rank!r}")
    bounds = {
        "A": (rank >= 1, "A_n requires n >= 1"),
        "B": (rank >= 2, "B_n requires n >= 2"),
        "C": (rank >= 2, "C_n requires n >= 2"),
        "D": (rank >= 4, "D_n requires n >= 4"),
        "E": (rank in (6, 7, 8), "E_n requires n in {6, 7, 8}"),
        "F": (rank == 4, "F_n exists only for n = 4"),
        "G": (rank == 2, "G_n exists only for n = 2"),
    }
    ok, msg = bounds[lie_type]
    if not ok:
        raise ValueError(f"invalid type {lie_type}{rank}: {msg}")


def simple_gram(lie_type: str, rank: int) -> tuple[tuple[Fraction, ...], ...]:
    """Inner products of the simple roots, long roots normalized to length 2."""
    _valid(lie_type, rank)
    n = rank
    g = [[Fraction(0)] * n for _ in range(n)]

    def bond(i, j, value):
        g[i - 1][j - 1] = g[j - 1][i - 1] = Fraction(value)

    if lie_type == "A":
        for i in range(1, n + 1):
            g[i - 1][i - 1] = Fraction(2)
        for i in range(1, n):
            bond(i, i + 1, -1)
    elif lie_type == "B":
        for i in range(1, n):
            g[i - 1][i - 1] = Fraction(2)
        g[n - 1][n - 1] = Fraction(1)
        for i in range(1, n):
            bond(i, i + 1, -1)
    elif lie_type == "C":
        for i in range(1, n):
            g[i - 1][i - 1] = Fraction(1)
        g[n - 1][n - 1] = Fraction(2)
        for i in range(1, n - 1):
            bond(i, i + 1, Fraction(-1, 2))
        bond(n - 1, n, -1)
    elif lie_type == "D":
        for i in range(1, n + 1):
            g[i - 1][i - 1] = Fraction(2)
        for i in range(1, n - 1):
            bond(i, i + 1, -1)
        bond(n - 2, n, -1)
    elif lie_type == "E":
        for i in range(1, n + 1):
            g[i - 1][i - 1] = Fraction(2)
        bond(1, 3, -1)
        bond(2, 4, -1)
        for i in range(3, n):
            bond(i, i + 1, -1)
    elif lie_type == "F":
        g[0][0] = g[1][1] = Fraction(2)
        g[2][2] = g[3][3] = Fraction(1)
        bond(1, 2, -1)
        bond(2, 3, -1)
        bond(3, 4, Fraction(-1, 2))
    elif lie_type == "G":
        g[0][0] = Fraction(2, 3)
        g[1][1] = Fraction(2)
        bond(1, 2, -1)
    return tuple(tuple(row) for row in g)


def _form(gram, a, b):
    """Bilinear form of two vectors in simple-root coordinates."""
    return sum(
        (a[i] * b[j] * gram[i][j] for i in range(len(a)) if a[i] for j in range(len(b)) if b[j]),
        Fraction(0),
    )


def height(root: Root) -> int:
    return sum(root)


@dataclass(frozen=True)
class RootSystem:
    """A finite root system with its extended simple-root data.

    Attributes
    ----------
    lie_type, rank : str, int
        Cartan type label and rank.
    cartan : tuple of tuple of int
        ``cartan[i][j] = 2 nu(a_i, a_j) / nu(a_j, a_j)`` on the simple roots.
    roots, positive_roots : tuple of Root
        Integer coordinate vectors, sorted lexicographically.
    delta : Root
        The highest root.
    marks : tuple of int
        Coefficients of ``delta``; the lowest root carries the implicit mark 1.
    coxeter : int
        Coxeter number, the sum of all marks including the implicit 1.
    gram_ext : tuple of tuple of Fraction
        Inner products on the extended simple roots, ``-delta`` first.
    """

    lie_type: str
    rank: int
    cartan: tuple[tuple[int, ...], ...]
    roots: tuple[Root, ...]
    positive_roots: tuple[Root, ...]
    delta: Root
    marks: tuple[int, ...]
    coxeter: int
    gram_ext: tuple[tuple[Fraction, ...], ...]

    @property
    def name(self) -> str:
        return f"{self.lie_type}{self.rank}"

    @property
    def gram(self):
        """Inner products on the simple roots only."""
        return tuple(row[1:] for row in self.gram_ext[1:])

    @property
    def ext_marks(self) -> tuple[int, ...]:
        """Marks over the extended simple roots, ``-delta`` first."""
        return (1,) + self.marks

    @property
    def ext_labels(self) -> tuple[str, ...]:
        return ("-delta",) + tuple(f"a{i}" for i in range(1, self.rank + 1))

    def extended_roots(self) -> tuple[Root, ...]:
        simple = [tuple(int(i == j) for j in range(self.rank)) for i in range(self.rank)]
        return (tuple(-c for c in self.delta),) + tuple(simple)

    def form(self, a: Root, b: Root) -> Fraction:
        return _form(self.gram, a, b)


def _closure(cartan, rank):
    """Close the simple roots under simple reflections (breadth first)."""
    simple = [tuple(int(i == j) for j in range(rank)) for i in range(rank)]
    seen = set(simple) | {tuple(-c for c in s) for s in simple}
    queue = deque(seen)
    while queue:
        beta = queue.popleft()
        for i in range(rank):
            # <beta, a_i^vee> = sum_j beta_j cartan[j][i]
            pairing = sum(beta[j] * cartan[j][i] for j in range(rank))
            if pairing:
                image = list(beta)
                image[i] -= pairing
                image = tuple(image)
                if image not in seen:
                    seen.add(image)
                    queue.append(image)
    return seen


def build_root_system(lie_type: str, rank: int) -> RootSystem:
    """Construct the root system of a simple type by reflection closure.

    Raises
    ------
    ValueError
        If ``(lie_type, rank)`` is not a simple type; the message names the
        violated constraint.
    """
    gram = simple_gram(lie_type, rank)
    cartan = []
    for i in range(rank):
        row = []
        for j in range(rank):
            a = 2 * gram[i][j] / gram[j][j]
            if a.denominator != 1:
                raise ArithmeticError("non-integral Cartan entry")
            row.append(int(a))
        cartan.append(tuple(row))
    cartan = tuple(cartan)

    roots = sorted(_closure(cartan, rank))
    positive = [r for r in roots if all(c >= 0 for c in r)]
    if 2 * len(positive) != len(roots):
        raise ArithmeticError("closure produced roots of mixed sign")
    delta = max(positive, key=height)
    # the highest root is unique; make sure the max is not a tie
    if sum(1 for r in positive if height(r) == height(delta)) != 1:
        raise ArithmeticError("highest root is not unique")
    marks = tuple(delta)
    coxeter = 1 + sum(marks)

    ext = [tuple(-c for c in delta)] + [tuple(int(i == j) for j in range(rank)) for i in range(rank)]
    gram_ext = tuple(tuple(_form(gram, a, b) for b in ext) for a in ext)
    return RootSystem(
        lie_type=lie_type,
        rank=rank,
        cartan=cartan,
        roots=tuple(roots),
        positive_roots=tuple(positive),
        delta=delta,
        marks=marks,
        coxeter=coxeter,
        gram_ext=gram_ext,
    )


def coxeter_number(rs: RootSystem) -> int:
    """Sum of the marks over the extended simple roots."""
    return sum(rs.ext_marks)


def height_grading_check(rs: RootSystem) -> bool:
    """Roots of height 1 modulo r are exactly the extended simple roots."""
    r = coxeter_number(rs)
    grade_one = {b for b in rs.roots if height(b) % r == 1 % r}
    return grade_one == set(rs.extended_roots())


def extended_simple_sums_check(rs: RootSystem) -> bool:
    """Differences of extended simple roots are never roots.

    For distinct simple roots ``a, b`` the difference ``a - b`` is not a root,
    and for every positive root ``a`` the sum ``a + delta`` is not a root.
    Together these cover every pair of distinct extended simple roots.
    """
    roots = set(rs.roots)
    ext = rs.extended_roots()
    for i, a in enumerate(ext):
        for j, b in enumerate(ext):
            if i != j and tuple(x - y for x, y in zip(a, b)) in roots:
                return False
    for a in rs.positive_roots:
        if tuple(x + y for x, y in zip(a, rs.delta)) in roots:
            return False
    return True


@dataclass(frozen=True)
class DegreeData:
    """Degrees of the line bundles attached to the simple roots, and a genus."""

    degrees: tuple[int, ...]
    genus: int

    def __post_init__(self):
        if self.genus < 2:
            raise ValueError("genus must be at least 2")


def _inverse(m):
    """Exact inverse of a square Fraction matrix by Gauss-Jordan elimination."""
    n = len(m)
    a = [list(map(Fraction, row)) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(m)]
    for col in range(n):
        piv = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        p = a[col][col]
        a[col] = [x / p for x in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    return [row[n:] for row in a]


def polystability_degree_check(rs: RootSystem, deg: DegreeData):
    """Degree inequalities for a polystable fixed point.

    Checks ``2 - 2g <= d_i`` and ``(R d)_i < 0`` for every simple root, where
    ``R`` is the inverse of the Gram matrix on the simple roots.

    Returns
    -------
    ok : bool
    rd : tuple of Fraction
        The vector ``R d``.
    """
    return degree_inequalities(rs, deg.degrees, 2 - 2 * deg.genus)


def degree_inequalities(rs: RootSystem, degrees, lower):
    """``lower <= d_i`` and ``(R d)_i < 0`` for rational ``degrees`` and ``lower``."""
    if len(degrees) != rs.rank:
        raise ValueError(f"expected {rs.rank} degrees, got {len(degrees)}")
    d = [Fraction(x) for x in degrees]
    R = _inverse(rs.gram)
    rd = tuple(sum((R[i][j] * d[j] for j in range(rs.rank)), Fraction(0)) for i in range(rs.rank))
    ok = all(Fraction(lower) <= x for x in d) and all(x < 0 for x in rd)
    return ok, rd


def all_simple_types(max_rank: int = 8):
    """Every valid ``(type, rank)`` pair with rank at most ``max_rank``."""
    out = []
    for t in "ABCDEFG":
        for n in range(1, max_rank + 1):
            try:
                _valid(t, n)
            except ValueError:
                continue
            out.append((t, n))
    return out


def _frac(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def to_json(rs: RootSystem) -> dict:
    """JSON-ready dictionary; fractions are written as ``"p/q"`` strings."""
    return {
        "type": rs.lie_type,
        "rank": rs.rank,
        "cartan": [list(r) for r in rs.cartan],
        "roots": [list(r) for r in rs.roots],
        "delta": list(rs.delta),
        "marks": list(rs.marks),
        "coxeter": rs.coxeter,
        "gram_ext": [[_frac(x) for x in row] for row in rs.gram_ext],
    }
