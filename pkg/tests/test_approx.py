import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridhmc.approx import (
    MultilinearEnergy,
    SparseEnergy,
    kl_bound_check,
    kl_divergence_quadrature,
    trapezoid_weights,
)
from gridhmc.domain import DomainBox
from gridhmc.errors import ValidationError
from gridhmc.grid import build_force_map, cells_for
from gridhmc.models import CountingModel, GaussianConjugateModel
from gridhmc.sparse import build_model_interpolant

LOGISTIC_BOX = DomainBox([-3.0, -0.5], [0.5, 3.0])


class Fn:
    """Scalar function with a batch method, for the KL checker."""

    def __init__(self, f):
        self.f = f

    def batch(self, qs):
        return self.f(np.asarray(qs)[:, 0])


def test_trapezoid_weights_integrate_linear():
    axes = [np.linspace(0, 2, 5), np.linspace(-1, 1, 3)]
    w = trapezoid_weights(axes)
    assert w.sum() == pytest.approx(4.0)
    mesh = np.meshgrid(*axes, indexing="ij")
    assert np.sum(w * mesh[0].ravel()) == pytest.approx(4.0)


def test_kl_of_identical_is_zero():
    u = np.random.default_rng(0).random(50)
    assert kl_divergence_quadrature(u, u, np.ones(50)) == pytest.approx(0.0, abs=1e-14)


def test_constant_shift():
    box = DomainBox([-6.0], [6.0])
    rep = kl_bound_check(Fn(lambda q: q**2 / 2), Fn(lambda q: q**2 / 2 + 0.3), box)
    assert abs(rep.kl_estimate) < 1e-8
    assert rep.bound == pytest.approx(0.6)
    assert rep.holds


def test_sine_perturbation_1d():
    box = DomainBox([-6.0], [6.0])
    rep = kl_bound_check(Fn(lambda q: q**2 / 2), Fn(lambda q: q**2 / 2 + 0.1 * np.sin(q)), box)
    assert 0 <= rep.kl_estimate <= 0.2
    assert rep.sup_abs_diff == pytest.approx(0.1, abs=1e-4)
    assert rep.holds


@given(st.floats(0.01, 2.0), st.floats(0.2, 5.0))
def test_bound_holds_for_random_perturbations(amp, freq):
    box = DomainBox([-5.0], [5.0])
    rep = kl_bound_check(
        Fn(lambda q: q**2 / 2),
        Fn(lambda q: q**2 / 2 + amp * np.cos(freq * q)),
        box,
        quadrature_resolution=401,
        n_random=500,
    )
    assert rep.kl_estimate >= -1e-12
    assert rep.holds


def test_logistic_grid_bound(logistic_model):
    g = build_force_map(logistic_model, LOGISTIC_BOX, cells_for(LOGISTIC_BOX, 0.1), with_vertex_potential=True)
    energy = MultilinearEnergy(g, logistic_model)
    rep = kl_bound_check(logistic_model, energy, LOGISTIC_BOX, model=logistic_model)
    assert rep.kl_estimate <= 2 * rep.sup_abs_diff
    assert rep.quadrature_points == 201 * 201
    assert rep.to_dict()["holds"] is True


def test_mass_check_reports_small_box():
    m = GaussianConjugateModel(np.zeros(2), 1, np.eye(2), np.eye(2) * 1e6, np.zeros(2))
    wide = kl_bound_check(m, m, DomainBox([-8.0, -8.0], [8.0, 8.0]), quadrature_resolution=21, n_random=10, model=m)
    narrow = kl_bound_check(m, m, DomainBox([-1.0, -1.0], [1.0, 1.0]), quadrature_resolution=21, n_random=10, model=m)
    assert wide.mass_check is True
    assert narrow.mass_check is False


def test_kl_rejects_high_dimension():
    with pytest.raises(ValidationError):
        kl_bound_check(Fn(np.sin), Fn(np.sin), DomainBox(np.zeros(4), np.ones(4)))


def test_multilinear_energy_scalar_matches_batch(logistic_model, rng):
    g = build_force_map(logistic_model, LOGISTIC_BOX, cells_for(LOGISTIC_BOX, 0.2), with_vertex_potential=True)
    energy = MultilinearEnergy(g, logistic_model)
    pts = LOGISTIC_BOX.from_unit(rng.random((200, 2)))
    np.testing.assert_allclose([energy(q) for q in pts], energy.batch(pts), rtol=1e-12)
    for v in g.vertices()[::17]:
        assert energy(v) == pytest.approx(logistic_model.potential(v), abs=1e-12)


def test_energies_fall_back_outside(logistic_model):
    g = build_force_map(logistic_model, LOGISTIC_BOX, cells_for(LOGISTIC_BOX, 0.5), with_vertex_potential=True)
    counting = CountingModel(logistic_model)
    energy = MultilinearEnergy(g, counting)
    q = np.array([2.0, 2.0])
    assert energy(q) == logistic_model.potential(q)
    assert counting.potential_calls == 1


def test_multilinear_energy_needs_vertex_table(logistic_model):
    g = build_force_map(logistic_model, LOGISTIC_BOX, 4)
    with pytest.raises(ValidationError):
        MultilinearEnergy(g, logistic_model)


def test_sparse_energy(banana_model):
    box = DomainBox([-4.0, -4.0], [4.0, 4.0])
    interp = build_model_interpolant(banana_model, box, 5)
    energy = SparseEnergy(interp, banana_model)
    for node in interp.nodes()[::7]:
        assert energy(node) == pytest.approx(banana_model.potential(node), abs=1e-9)
    assert energy(np.array([5.0, 0.0])) == banana_model.potential([5.0, 0.0])
    with pytest.raises(ValidationError):
        SparseEnergy(build_model_interpolant(banana_model, box, 2, mode="force"), banana_model)
