from fractions import Fraction as Fr

import pytest
import sympy
from hypothesis import given, settings, strategies as st

from todalab.folding import (
    AffineSystem,
    Involution,
    affine_kernels,
    classify_shape,
    extended_affine,
    fold,
    nullspace,
    sigma0,
)
from todalab.rootsys import all_simple_types, build_root_system

TYPES = all_simple_types(8)

# folded matrices, node order: path from the lowest root
FOLDED = {
    ("A", 5): ((2, -2, 0, 0), (-1, 2, -1, 0), (0, -1, 2, -1), (0, 0, -2, 2)),
    ("A", 4): ((2, -2, 0), (-1, 2, -2), (0, -1, 2)),
    ("E", 6): ((2, -1, 0, 0, 0), (-1, 2, -1, 0, 0), (0, -1, 2, -2, 0), (0, 0, -1, 2, -1), (0, 0, 0, -1, 2)),
    ("A", 2): ((2, -4), (-1, 2)),
}


def sympy_kernel(A, left=False):
    M = sympy.Matrix(A)
    if left:
        M = M.T
    (v,) = M.nullspace()
    v = v / min(v)
    return tuple(Fr(int(x.p), int(x.q)) for x in v)


def orbit_sum(marks, orbits):
    return [sum(marks[i] for i in o) for o in orbits]


def normalized(v):
    m = min(v)
    return tuple(Fr(x) / m for x in v)


@pytest.mark.parametrize("t,n", TYPES)
def test_extended_kernels_against_sympy(t, n):
    rs = build_root_system(t, n)
    aff = extended_affine(rs)
    assert aff.left_kernel == sympy_kernel(aff.A, left=True) == tuple(Fr(m) for m in rs.ext_marks)
    nu = [rs.gram_ext[i][i] for i in range(n + 1)]
    assert aff.right_kernel == sympy_kernel(aff.A) == normalized([m * v for m, v in zip(rs.ext_marks, nu)])


@pytest.mark.parametrize("tn", sorted(FOLDED))
def test_fold_reference_matrices(tn):
    t, n = tn
    rs = build_root_system(t, n)
    ext = extended_affine(rs)
    f = fold(ext, sigma0(t, n))
    assert f.A == FOLDED[tn]
    assert f.shape == "path"
    assert f.right_kernel == sympy_kernel(f.A)
    assert f.left_kernel == sympy_kernel(f.A, left=True)
    # left kernel: orbit sums of the marks; right kernel: marks identified along orbits, halved where split
    assert f.left_kernel == normalized(orbit_sum(rs.ext_marks, f.orbits))
    ident = [Fr(rs.ext_marks[o[0]]) / (2 if h else 1) for o, h in zip(f.orbits, f.halved)]
    assert f.right_kernel == normalized(ident)


def test_fold_labels_and_halving():
    f = fold(extended_affine(build_root_system("A", 4)), sigma0("A", 4))
    assert f.node_labels == ("-delta", "{a1,a4}", "{a2,a3}/2")
    assert f.halved == (False, False, True)
    e6 = fold(extended_affine(build_root_system("E", 6)), sigma0("E", 6))
    assert e6.node_labels == ("-delta", "a2", "a4", "{a3,a5}", "{a1,a6}")


def test_folded_odd_a_equals_extended_c():
    for n in (2, 3, 4):
        f = fold(extended_affine(build_root_system("A", 2 * n - 1)), sigma0("A", 2 * n - 1))
        assert f.A == extended_affine(build_root_system("C", n)).A


def test_extended_f4_is_folded_e6():
    f4 = extended_affine(build_root_system("F", 4))
    e6 = fold(extended_affine(build_root_system("E", 6)), sigma0("E", 6))
    assert f4.A == e6.A


@pytest.mark.parametrize("t,n,shape", [
    ("A", 1, "path"), ("A", 3, "cycle"), ("B", 2, "path"), ("B", 3, "prong"), ("B", 5, "prong"),
    ("C", 4, "path"), ("D", 4, "prong"), ("D", 6, "prong"), ("E", 6, "other"), ("E", 7, "other"),
    ("E", 8, "other"), ("F", 4, "path"), ("G", 2, "path"),
])
def test_shapes(t, n, shape):
    assert extended_affine(build_root_system(t, n)).shape == shape


def test_identity_fold_is_noop():
    ext = extended_affine(build_root_system("G", 2))
    f = fold(ext, sigma0("G", 2))
    assert f.A == ext.A and f.right_kernel == ext.right_kernel


def test_bad_involutions():
    with pytest.raises(ValueError):
        sigma0("D", 5)
    with pytest.raises(ValueError):
        Involution((1, 0, 2))
    with pytest.raises(ValueError):
        Involution((0, 2, 3, 1))
    ext = extended_affine(build_root_system("A", 5))
    with pytest.raises(ValueError):
        fold(ext, Involution((0, 2, 1, 3, 4, 5)))  # not a diagram automorphism
    with pytest.raises(ValueError):
        fold(ext, Involution((0, 1, 2)))


def test_affine_kernels_reject_non_affine():
    with pytest.raises(ValueError):
        affine_kernels(((2, -1), (-1, 2)))  # finite type, trivial kernel
    with pytest.raises(ValueError):
        affine_kernels(((2, -2, 0, 0), (-2, 2, 0, 0), (0, 0, 2, -2), (0, 0, -2, 2)))  # two components


def test_path_order_and_permutation():
    ext = extended_affine(build_root_system("C", 3))
    assert ext.path_order() == (0, 1, 2, 3)
    p = ext.permuted((3, 2, 1, 0))
    assert p.A[0] == ext.A[3][::-1]
    assert p.right_kernel == ext.right_kernel[::-1]


def test_gram_symmetric():
    for t, n in [("G", 2), ("F", 4), ("C", 3), ("B", 4)]:
        aff = extended_affine(build_root_system(t, n))
        g = aff.gram()
        assert all(g[i][j] == g[j][i] for i in range(aff.size) for j in range(aff.size))
        assert g[0][0] == 2


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(-5, 5), min_size=5, max_size=5), min_size=4, max_size=4))
def test_nullspace_matches_sympy(rows):
    ns = nullspace(rows)
    assert len(ns) == len(sympy.Matrix(rows).nullspace())
    for v in ns:
        assert all(sum(Fr(a) * x for a, x in zip(r, v)) == 0 for r in rows)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(TYPES))
def test_kernels_positive_and_annihilating(tn):
    aff = extended_affine(build_root_system(*tn))
    A, u, lam = aff.A, aff.right_kernel, aff.left_kernel
    n = aff.size
    assert min(u) == 1 and min(lam) == 1
    assert all(sum(A[i][j] * u[j] for j in range(n)) == 0 for i in range(n))
    assert all(sum(lam[i] * A[i][j] for i in range(n)) == 0 for j in range(n))
    assert classify_shape(A) == aff.shape
    assert isinstance(aff, AffineSystem)
