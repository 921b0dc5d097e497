import numpy as np
import pytest
import torch

from pded.data import ObservationSet
from pded.equation import parse_equation
from pded.errors import DimensionMismatch, UnsupportedVariable
from pded.expr import FunctionTerm
from pded.surrogate import LossWeights, SurrogateModel, TrainConfig, physics_residual, train
from pded.term_eval import PdeCandidate


def obs(points, values):
    return ObservationSet(np.asarray(points), np.asarray(values), np.arange(len(points)))


def grid(nx=21, nt=11, lo=(-1.0, 0.0), hi=(1.0, 1.0)):
    X, T = np.meshgrid(np.linspace(lo[0], hi[0], nx), np.linspace(lo[1], hi[1], nt), indexing="ij")
    return np.column_stack([X.ravel(), T.ravel()])


def pde(text, lib):
    _, terms = parse_equation(text, lib)
    return PdeCandidate([FunctionTerm(t) for _, t in terms], np.array([c for c, _ in terms]), 0.0, 0.0)


def test_zero_weights_give_bias():
    m = SurrogateModel(hidden=(8, 8))
    with torch.no_grad():
        for lin in m.layers:
            lin.weight.zero_()
        m.layers[-1].bias.fill_(0.37)
    out = m.predict(np.random.default_rng(0).uniform(-1, 1, (5, 2)))
    np.testing.assert_allclose(out, 0.37)


def test_shape_and_order():
    m = SurrogateModel(hidden=(8,))
    P = np.random.default_rng(0).uniform(-1, 1, (17, 2))
    full = m.predict(P)
    assert full.shape == (17, 1)
    np.testing.assert_array_equal(m.predict(P[::-1]), full[::-1])
    with pytest.raises(DimensionMismatch):
        m.predict(np.zeros((3, 3)))
    with pytest.raises(UnsupportedVariable):
        m.grad(P, "y")


def test_autodiff_vs_finite_differences_inputs():
    m = SurrogateModel(hidden=(20, 20), lower=[-2, 0], upper=[2, 3], seed=1)
    P = np.random.default_rng(1).uniform([-1.5, 0.5], [1.5, 2.5], (30, 2))
    h = 1e-5
    for j, name in enumerate(m.inputs):
        e = np.zeros(2)
        e[j] = h
        fd = (m.predict(P + e) - m.predict(P - e))[:, 0] / (2 * h)
        ad = m.grad(P, name)
        assert np.max(np.abs(fd - ad)) / np.max(np.abs(ad)) < 1e-4
    fd2 = (m.predict(P + [h * 100, 0]) - 2 * m.predict(P) + m.predict(P - [h * 100, 0]))[:, 0] / (h * 100) ** 2
    ad2 = m.grad(P, "x", 2)
    assert np.max(np.abs(fd2 - ad2)) / np.max(np.abs(ad2)) < 1e-4


def test_autodiff_vs_finite_differences_parameters():
    m = SurrogateModel(hidden=(6, 6), seed=2)
    P = torch.as_tensor(np.random.default_rng(2).uniform(-1, 1, (10, 2)))

    def loss():
        return torch.sum(m(P) ** 2)

    m.zero_grad()
    loss().backward()
    rng = np.random.default_rng(3)
    for p in m.parameters():
        g = p.grad.detach().clone()
        flat = p.data.view(-1)
        for idx in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
            old = float(flat[idx])
            h = 1e-6
            with torch.no_grad():
                flat[idx] = old + h
                up = float(loss())
                flat[idx] = old - h
                dn = float(loss())
                flat[idx] = old
            fd = (up - dn) / (2 * h)
            ad = float(g.view(-1)[idx])
            assert abs(fd - ad) <= 1e-4 * max(abs(ad), 1e-3)


def test_constant_model_derivatives_zero():
    m = SurrogateModel(hidden=(4,))
    with torch.no_grad():
        m.layers[-1].weight.zero_()
    P = np.random.default_rng(0).uniform(-1, 1, (6, 2))
    for order in (1, 2):
        np.testing.assert_allclose(m.grad(P, "x", order), 0.0)
    np.testing.assert_allclose(m.grad(P, "t"), 0.0)


def test_checkpoint_roundtrip(tmp_path):
    m = SurrogateModel(hidden=(7, 5), lower=[-3, 0], upper=[3, 2], seed=9)
    m.set_output_scaling(np.array([1.0, 2.0, 4.0]))
    path = tmp_path / "m.json"
    m.save(path)
    m2 = SurrogateModel.load(path)
    P = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    np.testing.assert_array_equal(m.predict(P), m2.predict(P))
    np.testing.assert_array_equal(m.grad(P, "x", 2), m2.grad(P, "x", 2))


@pytest.fixture(scope="module")
def fitted_x():
    P = grid()
    m = SurrogateModel(hidden=(20, 20), seed=0)
    m.set_output_scaling(P[:, 0])
    train(m, obs(P, P[:, 0]), obs(P[::7], P[::7, 0]), cfg=TrainConfig(lr=3e-3, max_epochs=1500, patience=1500))
    return m


def test_fit_linear_field(fitted_x):
    assert fitted_x.predict([[0.5, 0.3]])[0, 0] == pytest.approx(0.5, abs=1e-2)


def test_fit_quadratic_second_derivative():
    P = grid(31, 6)
    y = P[:, 0] ** 2
    m = SurrogateModel(hidden=(20, 20, 20), seed=1)
    m.set_output_scaling(y)
    train(m, obs(P, y), obs(P[::5], y[::5]), cfg=TrainConfig(lr=2e-3, max_epochs=4000, patience=4000))
    Q = np.column_stack([np.linspace(-0.6, 0.6, 7), np.full(7, 0.5)])
    assert np.max(np.abs(m.grad(Q, "x", 2) - 2.0)) < 0.1


def test_fit_analytic_field_validation_mse():
    P = grid(41, 11, (-3.0, 0.0), (3.0, 1.0))
    y = np.sin(P[:, 0]) * np.exp(-P[:, 1])
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(P))
    tr, va = perm[:360], perm[360:]
    m = SurrogateModel(hidden=(30, 30), lower=[-3, 0], upper=[3, 1], seed=0)
    m.set_output_scaling(y[tr])
    rep = train(m, obs(P[tr], y[tr]), obs(P[va], y[va]), cfg=TrainConfig(lr=3e-3, max_epochs=3000, patience=500))
    assert rep.best_val_loss < 1e-4


def test_residual_examples(fitted_x, lib):
    P = np.random.default_rng(0).uniform(-0.8, 0.8, (10, 2))
    r0 = physics_residual(fitted_x, pde("u_t = 0*u_xx", lib), P)
    np.testing.assert_allclose(r0, fitted_x.grad(P, "t"))
    # u = x: u_t = 0 and u_x = 1, so u_t - 1*u_x is about -1
    r1 = physics_residual(fitted_x, pde("u_t = u_x", lib), P)
    np.testing.assert_allclose(r1, -1.0, atol=0.1)


def test_zero_physics_weight_is_plain_regression(lib):
    P = grid(11, 6)
    y = np.sin(P[:, 0])
    runs = []
    for with_pde in (False, True):
        m = SurrogateModel(hidden=(8,), seed=4)
        kw = {}
        if with_pde:
            kw = dict(pde=pde("u_t = u_xx", lib), colloc=P, weights=LossWeights(0.0, 0.0))
        train(m, obs(P, y), obs(P[::3], y[::3]), cfg=TrainConfig(max_epochs=50, patience=50), **kw)
        runs.append(m.predict(P))
    np.testing.assert_array_equal(runs[0], runs[1])


def test_embedding_reduces_residual(lib):
    # data from u = exp(-t) sin(x), which solves u_t = u_xx
    P = grid(21, 11, (-3.0, 0.0), (3.0, 1.0))
    y = np.sin(P[:, 0]) * np.exp(-P[:, 1]) + 0.05 * np.random.default_rng(0).standard_normal(len(P))
    m = SurrogateModel(hidden=(20, 20), lower=[-3, 0], upper=[3, 1], seed=0)
    m.set_output_scaling(y)
    train(m, obs(P, y), obs(P[::4], y[::4]), cfg=TrainConfig(lr=3e-3, max_epochs=600, patience=600))
    heat = pde("u_t = u_xx", lib)
    C = np.random.default_rng(1).uniform([-2.5, 0.05], [2.5, 0.95], (500, 2))
    before = np.mean(np.abs(physics_residual(m, heat, C)))
    train(m, obs(P, y), obs(P[::4], y[::4]), pde=heat, colloc=C, weights=LossWeights(1.0), cfg=TrainConfig(lr=1e-3, max_epochs=300, patience=300, keep_initial=False))
    after = np.mean(np.abs(physics_residual(m, heat, C)))
    assert after < before
