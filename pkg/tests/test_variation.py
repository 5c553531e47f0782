import json
import math
import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from minstab.errors import DegenerateInputError, NonMinimalWarning, StateError
from minstab.functions import linear
from minstab.grid import (
    build_grid,
    frame_field,
    induced_metric,
    sample_function,
    second_fundamental_form,
    tangent_matrix,
)
from minstab.variation import (
    INCONCLUSIVE,
    STABLE,
    EigenConfig,
    NormalField,
    VariationPath,
    assemble,
    b_form,
    bilinear_form,
    grad_normal_energy,
    min_rayleigh,
    project_normal,
    pullback_constancy,
    pullback_integral,
    quadratic_form,
    random_normal_field,
    volume,
    volume_second_derivative,
)

from conftest import graph, unit_square

TWO_PI2 = 2 * math.pi**2


def flat(res=17, m=2):
    return graph(unit_square(res), m, lambda x: np.zeros((len(x), m)))


def curved(res=17):
    return graph(unit_square(res), 2, lambda x: 0.2 * np.stack(
        [np.sin(2 * x[:, 0]) * x[:, 1], np.cos(x[:, 0] + x[:, 1] ** 2)], 1))


def vertical(sample, w):
    amb = np.zeros(sample.domain.shape + (sample.n + sample.m,))
    amb[..., sample.n:] = w
    return project_normal(amb, sample)


def bump(domain):
    x = domain.coordinates()
    return np.prod(np.sin(np.pi * x), axis=-1)


def test_project_normal_vertical_over_flat():
    s = flat(9)
    w = np.random.default_rng(0).normal(size=s.domain.shape + (2,))
    field = vertical(s, w)
    inner = s.domain.interior
    assert np.array_equal(field.V[inner][..., 2:], w[inner])
    assert not field.V[~field.support].any()


def test_project_normal_kills_tangents():
    s = curved(9)
    u = np.random.default_rng(1).normal(size=s.domain.shape + (2,))
    amb = np.einsum("...pi,...i->...p", tangent_matrix(s.df), u)
    assert np.abs(project_normal(amb, s).V).max() < 1e-12


def test_project_normal_idempotent_and_normal():
    s = curved(9)
    amb = np.random.default_rng(2).normal(size=s.domain.shape + (4,))
    field = project_normal(amb, s)
    again = project_normal(field.V, s)
    assert np.abs(again.V - field.V).max() < 1e-12
    assert np.abs(np.einsum("...pi,...p->...i", tangent_matrix(s.df), field.V)).max() < 1e-12


def test_projection_requires_jet():
    d = unit_square(7)
    with pytest.raises(StateError):
        project_normal(np.zeros(d.shape + (3,)), sample_function(d, 1, lambda x: x[:, :1]))


def test_b_form_examples():
    s = graph(unit_square(9), 2, linear([[0.3, 0.1], [-0.2, 0.5]]))
    field = random_normal_field(s, np.random.default_rng(0))
    assert np.abs(b_form(field, s)).max() < 1e-18

    para = graph(build_grid(1, [(-1, 1)], [5]), 1, lambda x: x**2 / 2)
    V = np.zeros((5, 2))
    V[2] = [0.0, 1.0]
    assert b_form(V, para)[2] == pytest.approx(1.0, abs=1e-12)


def test_b_form_frame_oracle():
    s = curved(9)
    field = random_normal_field(s, np.random.default_rng(3))
    b = b_form(field, s)
    frames = frame_field(s)
    sff = second_fundamental_form(s, frames=frames)
    e_normal = np.stack([frames.at(idx).e_normal for idx in np.ndindex(s.domain.shape)])
    e_normal = e_normal.reshape(s.domain.shape + e_normal.shape[1:])
    comp = np.einsum("...ap,...p->...a", e_normal, field.V)
    expected = np.sum(np.einsum("...a,...aij->...ij", comp, sff.h) ** 2, axis=(-2, -1))
    inner = s.domain.interior
    assert np.abs(b[inner] - expected[inner]).max() <= 1e-8 * max(1.0, np.abs(expected).max())


def test_grad_energy_flat():
    s = flat(9)
    const = vertical(s, np.ones(s.domain.shape + (2,)))
    const.V[...] = 0.0
    const.V[..., 2:] = 1.0  # constant vertical, support ignored
    assert np.abs(grad_normal_energy(const, s)).max() < 1e-24

    d = s.domain
    x = d.coordinates()
    w = np.stack([x[..., 0], 2 * x[..., 1]], -1)  # linear, exact differences
    amb = np.zeros(d.shape + (4,))
    amb[..., 2:] = w
    energy = grad_normal_energy(amb, s)
    assert np.allclose(energy, 1.0 + 4.0)


def test_gradient_energy_converges():
    def energy(res):
        s = graph(unit_square(res), 1, lambda x: 0.2 * np.sin(x[:, 0] + 2 * x[:, 1])[:, None])
        amb = np.zeros(s.domain.shape + (3,))
        amb[..., 2] = bump(s.domain)
        return quadratic_form(project_normal(amb, s), s).gradient_energy

    e = [energy(r) for r in (17, 33, 65, 129)]
    ratio = (e[1] - e[2]) / (e[2] - e[3])
    assert 3.0 < ratio < 5.0


def test_quadratic_form_flat_closed_form():
    s = flat(33, m=1)
    field = vertical(s, bump(s.domain)[..., None])
    rep = quadratic_form(field, s)
    assert rep.b_energy == 0.0
    assert rep.q_value == rep.gradient_energy - rep.b_energy
    assert rep.rayleigh == pytest.approx(rep.q_value / rep.l2_norm)
    # int |grad w|^2 = pi^2 / 2 and int w^2 = 1 / 4 for the sine bump
    assert rep.q_value == pytest.approx(math.pi**2 / 2, rel=5e-3)
    assert rep.l2_norm == pytest.approx(0.25, rel=1e-12)


def test_quadratic_form_zero_field():
    s = flat(9)
    with pytest.raises(DegenerateInputError) as exc:
        quadratic_form(np.zeros(s.domain.shape + (4,)), s)
    assert exc.value.report.q_value == 0.0


def test_quadratic_form_scaling_and_symmetry():
    s = curved(13)
    rng = np.random.default_rng(4)
    V = random_normal_field(s, rng)
    W = random_normal_field(s, rng)
    q = quadratic_form(V, s).q_value
    assert quadratic_form(V.scaled(2.5), s).q_value == pytest.approx(6.25 * q, rel=1e-12)
    assert bilinear_form(V, W, s) == pytest.approx(bilinear_form(W, V, s), rel=1e-12)
    assert bilinear_form(V, V, s) == pytest.approx(q, rel=1e-12)


def test_report_json():
    s = flat(9)
    rep = min_rayleigh(s)
    data = json.loads(rep.to_json())
    assert "eigenfield" not in data and data["verdict"] == STABLE


def test_assembled_form_matches_quadratic_form():
    s = curved(11)
    form = assemble(s)
    rng = np.random.default_rng(5)
    for _ in range(3):
        field = random_normal_field(s, rng)
        x = form.from_field(field, s)
        back = form.to_field(x, s)
        assert np.abs(back.V - field.V).max() < 1e-12
        rep = quadratic_form(field, s)
        assert x @ (form.stiffness @ x) == pytest.approx(rep.q_value, rel=1e-10)
        assert x @ (form.mass @ x) == pytest.approx(rep.l2_norm, rel=1e-12)


def test_min_rayleigh_matches_dense_oracle():
    s = curved(9)
    form = assemble(s)
    dense = sla.eigh(form.stiffness.toarray(), form.mass.toarray(), eigvals_only=True)
    rep = min_rayleigh(s)
    assert rep.min_eig_estimate == pytest.approx(dense[0], rel=1e-10)
    assert rep.rayleigh == pytest.approx(dense[0], rel=1e-8)
    assert rep.residual < 1e-8


@pytest.mark.parametrize("res,tol", [(33, 0.02)])
def test_flat_spectrum(res, tol):
    rep = min_rayleigh(flat(res))
    assert abs(rep.min_eig_estimate - TWO_PI2) / TWO_PI2 < tol
    assert rep.verdict == STABLE


def test_linear_graph_spectrum():
    a, b = 0.4, 0.7
    s = graph(unit_square(33), 2, linear([[a, 0.0], [0.0, b]]))
    rep = min_rayleigh(s)
    # flat parallelogram with side lengths sqrt(1+a^2), sqrt(1+b^2)
    exact = math.pi**2 * (1 / (1 + a**2) + 1 / (1 + b**2))
    assert rep.min_eig_estimate > 0
    assert abs(rep.min_eig_estimate - exact) / exact < 0.01


def test_min_rayleigh_inconclusive_on_bad_residual_tolerance():
    rep = min_rayleigh(flat(9), EigenConfig(residual_tol=0.0))
    assert rep.verdict == INCONCLUSIVE


def test_volume_second_derivative_flat():
    s = flat(33, m=1)
    field = vertical(s, bump(s.domain)[..., None])
    path = VariationPath(s, field, s0=1e-3)
    grad = quadratic_form(field, s).gradient_energy
    assert volume_second_derivative(path) == pytest.approx(grad, rel=1e-3)
    assert volume(path, 0.0) == pytest.approx(1.0, rel=1e-14)
    assert volume_second_derivative(VariationPath(s, field.scaled(0.0))) == 0.0


def test_volume_second_derivative_warns_when_not_minimal():
    s = graph(unit_square(17), 1, lambda x: (0.3 * x[:, 0] ** 2)[:, None])
    field = random_normal_field(s, np.random.default_rng(0))
    with pytest.warns(NonMinimalWarning):
        volume_second_derivative(VariationPath(s, field))


def test_volume_second_derivative_details():
    s = flat(17, m=1)
    field = vertical(s, bump(s.domain)[..., None])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        d2, info = volume_second_derivative(VariationPath(s, field), return_details=True)
    assert info["richardson_gap"] < 1e-5 * abs(d2)
    assert abs(info["first_derivative"]) < 1e-10


def test_pullback_vertical_is_exact_zero():
    s = curved(17)
    amb = np.zeros(s.domain.shape + (4,))
    amb[..., 2:] = np.random.default_rng(6).normal(size=s.domain.shape + (2,))
    amb[~s.domain.interior_mask()] = 0.0
    field = NormalField(V=amb, support=s.domain.interior_mask())
    path = VariationPath(s, field)
    assert pullback_integral(path, 0.3) == pullback_integral(path, 0.0)
    assert pullback_constancy(path) == 0.0


def test_pullback_one_dimensional():
    d = build_grid(1, [(0.0, 1.0)], [33])
    s = graph(d, 1, lambda x: np.sin(3 * x))
    field = random_normal_field(s, np.random.default_rng(7))
    path = VariationPath(s, field)
    norm2 = quadratic_form(field, s).l2_norm
    assert abs(pullback_constancy(path)) <= 1e-9 * norm2


def test_pullback_two_dimensional():
    s = curved(33)
    rng = np.random.default_rng(8)
    for _ in range(5):
        field = random_normal_field(s, rng)
        norm2 = quadratic_form(field, s).l2_norm
        assert abs(pullback_constancy(VariationPath(s, field))) <= 1e-6 * norm2


def test_metric_argument_is_reused():
    s = curved(9)
    metric = induced_metric(s)
    field = random_normal_field(s, np.random.default_rng(9))
    assert quadratic_form(field, s, metric).q_value == quadratic_form(field, s).q_value
