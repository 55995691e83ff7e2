import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridhmc.errors import NumericalError, ValidationError
from gridhmc.models import (
    BananaModel,
    CountingModel,
    GaussianConjugateModel,
    GpHyperModel,
    LogisticModel,
    build_model,
    generate_synthetic,
    read_dataset_csv,
    write_dataset_csv,
)


def fd_force(model, q, h=1e-5):
    out = np.empty(model.dim)
    for k in range(model.dim):
        e = np.zeros(model.dim)
        e[k] = h
        out[k] = -(model.potential(q + e) - model.potential(q - e)) / (2 * h)
    return out


def assert_force_matches_fd(model, points):
    for q in points:
        f = model.force(q)
        fd = fd_force(model, q)
        # relative tolerance 1e-5, with an absolute floor for near-zero components
        assert np.all(np.abs(f - fd) <= 1e-5 * np.maximum(1.0, np.abs(f))), (q, f, fd)


# --- potentials -------------------------------------------------------------


def test_gaussian_potential_zero_at_data_mean():
    ybar = np.array([0.3, -1.2])
    m = GaussianConjugateModel(ybar, 50, np.eye(2), 2 * np.eye(2), ybar)
    assert m.potential(ybar) == 0.0
    np.testing.assert_array_equal(m.force(ybar), 0.0)


def test_logistic_potential_at_origin_is_n_log2(logistic_model):
    assert logistic_model.potential([0.0, 0.0]) == pytest.approx(100 * np.log(2), rel=1e-14)


def test_logistic_force_at_origin(logistic_model):
    X, y = logistic_model.X, logistic_model.y
    np.testing.assert_allclose(logistic_model.force([0.0, 0.0]), X.T @ (y - 0.5), rtol=1e-14, atol=1e-12)


def test_banana_potential_direct_sum(banana_model):
    y = banana_model.y
    expected = np.sum((y - 1.0) ** 2) / 8 + 0.5
    assert banana_model.potential([1.0, 0.0]) == pytest.approx(expected, rel=1e-13)


def test_gp_potential_matches_eigen_logdet(gp_model):
    q = np.array([0.1, 0.4, -0.7])
    cov = gp_model.covariance(q)
    lam, vec = np.linalg.eigh(cov)
    proj = vec.T @ gp_model.y
    quad = np.sum(proj**2 / lam)
    prior = 0.5 * np.sum((q + 1.0) ** 2)
    expected = 0.5 * np.sum(np.log(lam)) + 0.5 * quad + prior
    assert gp_model.potential(q) == pytest.approx(expected, rel=1e-10)


def test_gp_non_pd_covariance_is_numerical_error():
    x = np.zeros((3, 2))  # identical sites: kernel block is rank one
    m = GpHyperModel(x, np.ones(3))
    with pytest.raises(NumericalError):
        m.potential([0.0, 0.0, -800.0])


@pytest.mark.parametrize("name", ["logistic", "banana", "gaussian"])
def test_potential_batch_matches_scalar(name, rng):
    m = build_model(generate_synthetic(name, 60, 4))
    qs = rng.normal(size=(25, m.dim))
    np.testing.assert_allclose(m.potential_batch(qs), [m.potential(q) for q in qs], rtol=1e-12)


# --- forces against central differences ------------------------------------


def test_logistic_force_fd(logistic_model, rng):
    pts = np.column_stack([rng.uniform(-3, 0.5, 100), rng.uniform(-0.5, 3, 100)])
    assert_force_matches_fd(logistic_model, pts)


def test_banana_force_fd(banana_model, rng):
    assert_force_matches_fd(banana_model, rng.uniform(-4, 4, size=(100, 2)))


def test_gp_force_fd(gp_model, rng):
    pts = np.column_stack([rng.uniform(-1.6, 1.6, 100), rng.uniform(-1.6, 1.6, 100), rng.uniform(-1.2, 0.4, 100)])
    assert_force_matches_fd(gp_model, pts)


def test_gaussian_force_fd(rng):
    m = build_model(generate_synthetic("gaussian", 30, 2))
    assert_force_matches_fd(m, rng.normal(size=(100, 2)))


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_banana_force_fd_property(b1, b2):
    m = BananaModel(np.array([0.5, 1.5, -0.3, 2.2]))
    q = np.array([b1, b2])
    f = m.force(q)
    assert np.all(np.abs(f - fd_force(m, q)) <= 1e-5 * np.maximum(1.0, np.abs(f)))


# --- validation and counting -----------------------------------------------


def test_wrong_dimension_rejected(logistic_model):
    with pytest.raises(ValidationError):
        logistic_model.potential([0.0, 0.0, 0.0])


def test_logistic_rejects_non_binary_response():
    with pytest.raises(ValidationError):
        LogisticModel(np.ones((3, 2)), [0, 1, 2])


def test_counting_model_counts(banana_model):
    c = CountingModel(banana_model)
    c.potential([0.0, 0.0])
    c.force([0.0, 0.0])
    c.force([1.0, 0.0])
    assert (c.potential_calls, c.force_calls, c.evaluations) == (1, 2, 3)
    assert c.fingerprint() == banana_model.fingerprint()


# --- synthetic data ---------------------------------------------------------


def test_synthetic_is_deterministic():
    a = generate_synthetic("logistic", 50, 9)
    b = generate_synthetic("logistic", 50, 9)
    assert a.digest() == b.digest()
    np.testing.assert_array_equal(a.columns["x1"], b.columns["x1"])
    assert generate_synthetic("logistic", 50, 10).digest() != a.digest()


def test_banana_sample_mean_band():
    y = generate_synthetic("banana", 100, 5, beta=[1.0, 0.0]).columns["y"]
    assert abs(y.mean() - 1.0) <= 4 * 2 / np.sqrt(100)


def test_logistic_response_fraction():
    ds = generate_synthetic("logistic", 10_000, 3, beta=[-1.0, 1.0])
    z = np.random.default_rng(0).standard_normal(1_000_000)
    expected = np.mean(1 / (1 + np.exp(-(-1.0 + z))))
    assert abs(ds.columns["y"].mean() - expected) <= 0.02


def test_unknown_model_rejected():
    with pytest.raises(ValidationError):
        generate_synthetic("poisson", 10, 0)


def test_dataset_csv_roundtrip(tmp_path):
    ds = generate_synthetic("gp", 20, 1)
    path = tmp_path / "gp.csv"
    write_dataset_csv(ds, path)
    back = read_dataset_csv("gp", path)
    assert back.digest() == ds.digest()


def test_dataset_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValidationError, match="header"):
        read_dataset_csv("logistic", path)
