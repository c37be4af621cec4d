import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dense_count, tridiag
from wegnerlab.field_sampler import LatticeSpec, zero_field
from wegnerlab.hamiltonian import (DenseLimitError, assemble, assemble_from_values,
                                   block_inertia_count, count_below, eigenvalues,
                                   free_dirichlet_eigenvalues_1d, free_neumann_eigenvalues_1d,
                                   sturm_counts)


def _lat(n, h=0.5, d=1):
    return LatticeSpec(d, n * h / 2, h)


def test_free_dirichlet_closed_form():
    lat = _lat(40, 0.25)
    ev = eigenvalues(assemble(lat, zero_field(lat), "dirichlet"))
    assert np.allclose(ev, free_dirichlet_eigenvalues_1d(40, 0.25), rtol=1e-12)


def test_free_neumann_closed_form():
    lat = _lat(30, 0.5)
    ev = eigenvalues(assemble(lat, zero_field(lat), "neumann"))
    assert np.allclose(ev, free_neumann_eigenvalues_1d(30, 0.5), rtol=1e-10, atol=1e-12)
    assert abs(ev[0]) < 1e-12


def test_neumann_constant_vector_in_kernel():
    lat = _lat(8, 0.5, d=2)
    H = assemble(lat, zero_field(lat), "neumann").to_dense()
    assert np.allclose(H @ np.ones(H.shape[0]), 0)


def test_matrix_against_explicit_stencil():
    lat = _lat(6, 0.5)
    V = np.arange(6.0)
    H = assemble_from_values(lat, V, "dirichlet").to_dense()
    assert np.array_equal(H, tridiag(8.0 + V, -4.0))
    N = assemble_from_values(lat, V, "neumann").to_dense()
    assert N[0, 0] == 4.0 and N[-1, -1] == 4.0 + 5.0


def test_two_dimensional_tensor_sum():
    n, h = 6, 0.5
    lat = _lat(n, h, d=2)
    ev = eigenvalues(assemble(lat, zero_field(lat), "dirichlet"))
    one = free_dirichlet_eigenvalues_1d(n, h)
    assert np.allclose(ev, np.sort(np.add.outer(one, one).ravel()))
    ev = eigenvalues(assemble(lat, zero_field(lat), "neumann"))
    one = free_neumann_eigenvalues_1d(n, h)
    assert np.allclose(ev, np.sort(np.add.outer(one, one).ravel()), atol=1e-12)


def test_constant_shift():
    lat = _lat(20)
    H0 = assemble(lat, zero_field(lat), "dirichlet")
    H1 = assemble_from_values(lat, np.full(20, 3.5), "dirichlet")
    assert np.allclose(eigenvalues(H1), eigenvalues(H0) + 3.5)


def test_gershgorin_contains_spectrum():
    rng = np.random.default_rng(0)
    for d in (1, 2):
        lat = _lat(8, 0.5, d)
        H = assemble_from_values(lat, rng.normal(size=lat.size), "neumann")
        lo, hi = H.gershgorin()
        ev = eigenvalues(H)
        assert lo <= ev[0] and ev[-1] <= hi


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.sampled_from([0.1, 0.5, 1.0]), st.integers(0, 2 ** 32 - 1),
       st.sampled_from(["dirichlet", "neumann"]))
def test_sturm_matches_dense(n, h, seed, bc):
    rng = np.random.default_rng(seed)
    H = assemble_from_values(_lat(n, h), rng.normal(scale=5, size=n), bc)
    dense = H.to_dense()
    ev = np.linalg.eigvalsh(dense)
    Es = np.concatenate([rng.uniform(ev[0] - 1, ev[-1] + 1, 10), [ev[0] - 1, ev[-1] + 1]])
    got = count_below(H, Es)
    assert [int(g) for g in got] == [dense_count(dense, E) for E in Es]


@pytest.mark.parametrize("n", [4, 7, 12])
def test_block_count_matches_dense(n):
    rng = np.random.default_rng(n)
    lat = _lat(n, 0.5, d=2)
    for bc in ("dirichlet", "neumann"):
        H = assemble_from_values(lat, rng.normal(scale=3, size=lat.size), bc)
        dense = H.to_dense()
        ev = np.linalg.eigvalsh(dense)
        for E in rng.uniform(ev[0] - 1, ev[-1] + 1, 15):
            assert count_below(H, E) == dense_count(dense, E)


def test_count_monotone_in_energy():
    rng = np.random.default_rng(3)
    H = assemble_from_values(_lat(100, 0.25), rng.normal(size=100), "dirichlet")
    Es = np.linspace(-5, 70, 300)
    c = count_below(H, Es)
    assert np.all(np.diff(c) >= 0) and c[0] == 0 and c[-1] == 100


def test_dirichlet_below_neumann():
    rng = np.random.default_rng(4)
    for d, n in ((1, 50), (2, 8)):
        V = rng.normal(scale=2, size=n ** d)
        lat = _lat(n, 0.5, d)
        Es = np.linspace(-8, 20, 40)
        D = count_below(assemble_from_values(lat, V, "dirichlet"), Es)
        N = count_below(assemble_from_values(lat, V, "neumann"), Es)
        assert np.all(D <= N)


def test_tie_takes_shift():
    lat = _lat(5, 1.0)
    H = assemble(lat, zero_field(lat), "dirichlet")
    E = 2.0          # the middle eigenvalue 2(1 - cos(pi/2)) exactly, so a pivot vanishes
    count, shift = count_below(H, E, return_shift=True)
    assert shift > 0 and count == 3


def test_smallest_lattice():
    H = assemble_from_values(_lat(2, 1.0), [0.0, 0.0], "neumann")
    assert np.allclose(eigenvalues(H), [0.0, 2.0])
    assert count_below(H, 1.0) == 1


def test_sturm_batch_shape():
    diags = np.ones((3, 4, 10))
    counts, zero = sturm_counts(diags, 0.25, np.array([0.0, 1.0, 3.0]))
    assert counts.shape == (3, 4, 3) and zero.shape == counts.shape
    assert np.all(counts[..., 0] == 0) and np.all(counts[..., 2] == 10)


def test_dense_limit():
    lat = _lat(100)
    H = assemble(lat, zero_field(lat), "dirichlet")
    with pytest.raises(DenseLimitError):
        eigenvalues(H, dense_limit=50)


def test_block_inertia_reports_breakdown():
    lat = _lat(2, 1.0, d=2)
    H = assemble(lat, zero_field(lat), "neumann")
    _, broke = block_inertia_count(H, 0.0)
    assert broke
    assert count_below(H, 0.0) == 1


def test_field_lattice_mismatch():
    with pytest.raises(ValueError):
        assemble(_lat(10), zero_field(_lat(12)))
    with pytest.raises(ValueError):
        count_below(assemble(_lat(4), zero_field(_lat(4))), math.nan)
