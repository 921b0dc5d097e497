import numpy as np
import pytest
import torch

from pded.equation import parse_equation
from pded.errors import DerivativeOrderExceeded, NonFiniteColumn
from pded.expr import parse_traversal
from pded.surrogate import SurrogateModel, physics_residual
from pded.term_eval import PdeCandidate
from pded.expr import FunctionTerm
from pded.treeeval import FieldSnapshot, evaluate_tree, required_order, torch_tree

from conftest import random_traversal


@pytest.fixture(scope="module")
def model():
    return SurrogateModel(hidden=(16, 16), lower=[-2, 0], upper=[2, 1], seed=3)


@pytest.fixture(scope="module")
def pts():
    rng = np.random.default_rng(0)
    return np.column_stack([rng.uniform(-2, 2, 64), rng.uniform(0, 1, 64)])


def analytic_snapshot(pts):
    # u = sin(x) exp(-t)
    f = {
        ("u", (0,)): lambda x, t: np.sin(x) * np.exp(-t),
        ("u", (1,)): lambda x, t: np.cos(x) * np.exp(-t),
        ("u", (2,)): lambda x, t: -np.sin(x) * np.exp(-t),
        ("u", (3,)): lambda x, t: -np.cos(x) * np.exp(-t),
        ("u", (4,)): lambda x, t: np.sin(x) * np.exp(-t),
    }
    return FieldSnapshot.from_functions(pts, f, {"u": lambda x, t: -np.sin(x) * np.exp(-t)})


def test_leibniz_against_closed_form(lib, pts):
    snap = analytic_snapshot(pts)
    x, t = pts[:, 0], pts[:, 1]
    u, ux, uxx = np.sin(x) * np.exp(-t), np.cos(x) * np.exp(-t), -np.sin(x) * np.exp(-t)
    cases = {
        "∂ ^2 u x": 2 * u * ux,
        "∂² * u x x": x * uxx + 2 * ux,
        "∂ ^3 u x": 3 * u**2 * ux,
        "∂² ^2 u x": 2 * ux**2 + 2 * u * uxx,
        "∂ / u x x": ux / x - u / x**2,
    }
    for text, want in cases.items():
        got = evaluate_tree(parse_traversal(text, lib).tree(), snap)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12, err_msg=text)


def test_guarded_division(lib, pts):
    snap = analytic_snapshot(pts)
    with pytest.raises(NonFiniteColumn):
        evaluate_tree(parse_traversal("/ u - u u", lib).tree(), snap)


def test_order_exceeded(lib, pts):
    snap = analytic_snapshot(pts)
    tree = parse_traversal("∂² ∂² ∂ u x x x", lib).tree()
    assert required_order(tree) == 5
    with pytest.raises(DerivativeOrderExceeded):
        evaluate_tree(tree, snap)


def test_jet_matches_autograd(lib, limits, model, pts):
    snap = model.snapshot(pts, max_order=4)
    X = torch.as_tensor(pts).requires_grad_(True)
    Y = model(X)
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 60:
        tree = random_traversal(rng, lib, limits).tree()
        if required_order(tree) > 4:
            continue
        try:
            jet = evaluate_tree(tree, snap)
        except NonFiniteColumn:
            continue
        ref = torch_tree(tree, X, Y, model.inputs, model.outputs).detach().numpy()
        if ref.ndim == 0:
            ref = np.full(len(pts), float(ref))
        scale = max(1.0, float(np.max(np.abs(ref))))
        np.testing.assert_allclose(jet, ref, rtol=1e-8, atol=1e-9 * scale, err_msg=str(tree))
        checked += 1


def test_burgers_residual_hand_coded(lib, model, pts):
    _, terms = parse_equation("u_t = -1*u*u_x + 0.1*u_xx", lib)
    pde = PdeCandidate([FunctionTerm(t) for _, t in terms], np.array([c for c, _ in terms]), 0.0, 0.0)
    res = physics_residual(model, pde, pts)
    u = model.predict(pts)[:, 0]
    ut = model.grad(pts, "t")
    ux = model.grad(pts, "x")
    uxx = model.grad(pts, "x", 2)
    np.testing.assert_allclose(res, ut + u * ux - 0.1 * uxx, rtol=1e-10, atol=1e-12)
