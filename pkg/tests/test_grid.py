import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from todalab.grid import (
    Divisor,
    TorusGrid,
    discrete_green,
    forcing_from_divisor,
    laplacian,
    poisson_solve,
    read_tgrd,
    write_csv,
    write_tgrd,
)


def dense_laplacian(grid):
    N = grid.N
    M = np.zeros((N * N, N * N))
    for i in range(N):
        for j in range(N):
            k = i * N + j
            M[k, k] = -4
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                M[k, ((i + di) % N) * N + (j + dj) % N] += 1
    return M / grid.h**2


def dense_green(grid, p):
    """Mean-zero solve of the bordered dense system."""
    N = grid.N
    M = dense_laplacian(grid)
    f = np.full(N * N, -4 * np.pi / grid.area)
    f[p[0] * N + p[1]] += 4 * np.pi / grid.h**2
    B = np.zeros((N * N + 1, N * N + 1))
    B[:-1, :-1] = M
    B[-1, :-1] = 1.0
    B[:-1, -1] = 1.0
    sol = np.linalg.solve(B, np.append(f, 0.0))
    return sol[:-1].reshape(N, N)


@pytest.mark.parametrize("p", [(0, 0), (3, 7), (15, 2)])
def test_green_matches_dense_oracle(p):
    g = TorusGrid(N=16)
    assert np.abs(discrete_green(g, p) - dense_green(g, p)).max() <= 1e-10


def test_laplacian_matches_dense():
    g = TorusGrid(L=3.0, N=16)
    f = np.random.default_rng(0).standard_normal((16, 16))
    assert np.allclose(laplacian(g, f).ravel(), dense_laplacian(g) @ f.ravel(), atol=1e-10)


@pytest.mark.parametrize("N", [16, 64])
def test_green_equation(N):
    g = TorusGrid(N=N)
    G = discrete_green(g, (5, 9))
    rhs = np.full((N, N), -4 * np.pi / g.area)
    rhs[5, 9] += 4 * np.pi / g.h**2
    assert np.abs(laplacian(g, G) - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())
    assert abs(G.mean()) < 1e-12


def test_green_self_value_tracks_log_h():
    vals = {N: discrete_green(TorusGrid(N=N), (0, 0))[0, 0] - 2 * np.log(TorusGrid(N=N).h) for N in (32, 64, 128)}
    assert abs(vals[64] - vals[128]) < abs(vals[32] - vals[64]) < 0.05


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([8, 16, 32]), st.floats(0.5, 10.0))
def test_poisson_round_trip(seed, N, L):
    g = TorusGrid(L=L, N=N)
    u = np.random.default_rng(seed).standard_normal((N, N))
    u -= u.mean()
    assert np.abs(poisson_solve(g, laplacian(g, u)) - u).max() <= 1e-11 * max(1.0, np.abs(u).max())


def test_poisson_batched_and_incompatible():
    g = TorusGrid(N=16)
    u = np.random.default_rng(1).standard_normal((3, 16, 16))
    u -= u.mean(axis=(1, 2), keepdims=True)
    assert np.allclose(poisson_solve(g, laplacian(g, u)), u, atol=1e-11)
    with pytest.raises(ValueError):
        poisson_solve(g, np.ones((16, 16)))
    out = poisson_solve(g, np.ones((16, 16)), project=True)
    assert np.abs(out).max() < 1e-12


def test_grid_validation():
    for bad in (dict(N=7), dict(N=6), dict(L=0.0)):
        with pytest.raises(ValueError):
            TorusGrid(**bad)
    with pytest.raises(ValueError):
        discrete_green(TorusGrid(N=8), (8, 0))


def test_divisor_and_forcing():
    g = TorusGrid(N=32)
    d = Divisor.from_list([[4, 4, 2], [10, 20, 1]])
    assert d.degree == 3
    assert d.to_list() == [[4, 4, 2], [10, 20, 1]]
    assert d.multiplicity_field(g).sum() == 3
    F = forcing_from_divisor(g, d, c=0.3)
    assert np.allclose(laplacian(g, F.log_G), F.rho, atol=1e-9)
    assert abs(g.integrate(F.rho)) < 1e-9
    assert np.isclose(F.log_G.mean(), 0.3)
    assert F.G.argmin() in (4 * 32 + 4,)
    assert not F.mask(1e-3)[4, 4] and F.mask(1e-3)[20, 20]
    S = F.scaled(2.0)
    assert np.allclose(S.G, 2 * F.G)
    with pytest.raises(ValueError):
        Divisor.from_list([[0, 0, 0]])


def test_tgrd_round_trip(tmp_path):
    arr = np.random.default_rng(2).standard_normal((3, 8, 8))
    write_tgrd(tmp_path / "a.tgrd", arr)
    raw = (tmp_path / "a.tgrd").read_bytes()
    assert raw[:4] == b"TGRD" and len(raw) == 16 + arr.size * 8
    assert np.array_equal(read_tgrd(tmp_path / "a.tgrd"), arr)
    write_tgrd(tmp_path / "b.tgrd", arr[0])
    assert read_tgrd(tmp_path / "b.tgrd").shape == (1, 8, 8)
    (tmp_path / "c.tgrd").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_tgrd(tmp_path / "c.tgrd")
    (tmp_path / "d.tgrd").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_tgrd(tmp_path / "d.tgrd")


def test_csv(tmp_path):
    g = TorusGrid(N=8)
    f = np.arange(64.0).reshape(8, 8)
    write_csv(tmp_path / "f.csv", g, [f, -f], ["a", "b"])
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x,y,a,b" and len(lines) == 65
    data = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 2], f.ravel()) and np.isclose(data[9, 0], g.h)
