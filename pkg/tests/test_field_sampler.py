import numpy as np
import pytest
from scipy import fft as sfft

from wegnerlab.covariance import GaussHermiteCovariance, example_5b_model, triangular_model
from wegnerlab.field_sampler import (EmbeddingError, FieldRealization, LatticeSpec,
                                     build_embedding, empirical_covariance, load_field,
                                     mean_estimate, sample, sample_many, save_field, zero_field)


def _implied(emb):
    """Torus covariance of the sampled field: inverse DFT of the multipliers."""
    return np.real(sfft.ifftn(emb.multipliers))


def test_lattice_nodes():
    lat = LatticeSpec(1, 2.0, 0.5)
    assert lat.n_per_axis == 8
    assert np.allclose(lat.nodes(), -2 + 0.5 * (np.arange(8) + 0.5))
    assert LatticeSpec(2, 1.0, 0.25).shape == (8, 8)
    with pytest.raises(ValueError):
        LatticeSpec(1, 1.0, 0.3)
    with pytest.raises(ValueError):
        LatticeSpec(3, 1.0, 0.5)


@pytest.mark.parametrize("model,L,h", [(triangular_model(), 8.0, 0.125),
                                       (example_5b_model(), 16.0, 0.25),
                                       (example_5b_model(), 4.0, 0.5)])
def test_implied_covariance_exact(model, L, h):
    lat = LatticeSpec(1, L, h)
    emb = build_embedding(model, lat)
    assert emb.clip_mass <= 1e-8 * model.C0
    n = lat.n_per_axis
    c = _implied(emb)[:n]
    assert np.allclose(c, model(h * np.arange(n)), atol=1e-12 * model.C0)


def test_dense_oracle_matches():
    # the box covariance matrix is positive semidefinite and equals the
    # torus covariance restricted to the box
    model = example_5b_model()
    lat = LatticeSpec(1, 16.0, 0.25)
    n = lat.n_per_axis
    x = lat.nodes()
    Sigma = model(x[:, None] - x[None, :])
    assert np.linalg.eigvalsh(Sigma).min() > -1e-10
    c = _implied(build_embedding(model, lat))
    idx = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    assert np.allclose(c[idx], Sigma, atol=1e-12)


def test_implied_covariance_2d():
    model = triangular_model(2)
    lat = LatticeSpec(2, 2.0, 0.25)
    emb = build_embedding(model, lat)
    c = _implied(emb)
    k = np.arange(lat.n_per_axis) * lat.h
    grid = np.stack(np.meshgrid(k, k, indexing="ij"), axis=-1)
    n = lat.n_per_axis
    assert np.allclose(c[:n, :n], model(grid), atol=1e-12)


def test_determinism_and_streams():
    emb = build_embedding(triangular_model(), LatticeSpec(1, 4.0, 0.125))
    a = sample(emb, 11, 3).values
    assert np.array_equal(a, sample(emb, 11, 3).values)
    assert not np.array_equal(a, sample(emb, 11, 4).values)
    assert not np.array_equal(a, sample(emb, 12, 3).values)
    many = sample_many(emb, 11, [3, 4, 5])
    assert np.array_equal(many[0], a)
    assert np.array_equal(many, sample_many(emb, 11, [3, 4, 5], workers=3))


def test_linearity_in_scale():
    lat = LatticeSpec(1, 8.0, 0.25)
    base = sample(build_embedding(example_5b_model(), lat), 5, 0).values
    scaled = sample(build_embedding(example_5b_model().scaled(4.0), lat), 5, 0).values
    assert np.allclose(scaled, 2.0 * base, rtol=1e-12, atol=1e-12)


def test_lag_statistics():
    model = triangular_model()
    lat = LatticeSpec(1, 8.0, 0.125)
    V = sample_many(build_embedding(model, lat), 3, range(4000))
    lags = [0, 1, 4, 8, 16]
    for lag, est in zip(lags, empirical_covariance(V, lags)):
        assert abs(est.mean - model(lag * lat.h)) <= 4 * est.stderr
    # beyond the support the field values are independent
    assert abs(empirical_covariance(V, [20])[0].mean) <= 4 * empirical_covariance(V, [20])[0].stderr
    m, se = mean_estimate(V)
    assert abs(m) <= 4 * se


def test_stationarity_halves():
    model = example_5b_model()
    lat = LatticeSpec(1, 16.0, 0.25)
    V = sample_many(build_embedding(model, lat), 9, range(3000))
    n = lat.n_per_axis
    left = empirical_covariance(V[:, : n // 2], [0, 4])
    right = empirical_covariance(V[:, n // 2:], [0, 4])
    for a, b in zip(left, right):
        assert abs(a.mean - b.mean) <= 4 * np.hypot(a.stderr, b.stderr)


def test_zero_field():
    f = zero_field(LatticeSpec(2, 1.0, 0.25))
    assert f.values.shape == (8, 8) and not f.values.any()


def test_pad_smaller_than_support():
    with pytest.raises(EmbeddingError):
        build_embedding(example_5b_model(), LatticeSpec(1, 8.0, 0.25), pad=3.0)
    with pytest.raises(EmbeddingError):
        build_embedding(GaussHermiteCovariance(), LatticeSpec(1, 8.0, 0.25))
    emb = build_embedding(GaussHermiteCovariance(), LatticeSpec(1, 8.0, 0.25), pad=12.0)
    assert emb.multipliers.min() >= 0


def test_dimension_mismatch():
    with pytest.raises(EmbeddingError):
        build_embedding(triangular_model(2), LatticeSpec(1, 4.0, 0.5))


def test_save_load_round_trip(tmp_path):
    emb = build_embedding(example_5b_model(), LatticeSpec(1, 8.0, 0.25))
    f = sample(emb, 17, 2)
    path, sidecar = save_field(f, tmp_path / "v.bin")
    assert path.stat().st_size == 8 * f.values.size
    g = load_field(path)
    assert np.array_equal(g.values, f.values)
    assert (g.seed, g.stream, g.model_id) == (17, 2, example_5b_model().model_id)
    assert g.lattice.same_grid(f.lattice)
    assert sidecar.exists()


def test_mismatched_realizations():
    a = zero_field(LatticeSpec(1, 2.0, 0.5))
    b = zero_field(LatticeSpec(1, 2.0, 0.25))
    with pytest.raises(ValueError):
        empirical_covariance([a, b], [0])
    with pytest.raises(ValueError):
        empirical_covariance([a], [0])
    with pytest.raises(ValueError):
        FieldRealization(a.lattice, np.zeros(3), 0)
