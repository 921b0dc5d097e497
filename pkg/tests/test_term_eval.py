import numpy as np
import pytest

from pded.data import generate, sample_observations
from pded.equation import parse_equation
from pded.errors import AllTermsEliminated, NonFiniteColumn
from pded.expr import FunctionTerm, parse_traversal
from pded.surrogate import SurrogateModel, TrainConfig, train
from pded.term_eval import Evaluator, RewardConfig, StridgeConfig, reward, stridge
from pded.treeeval import FieldSnapshot


def linear_snapshot(n=200, seed=0):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(0.5, 2, n), rng.uniform(0, 1, n)])
    f = {("u", (k,)): (lambda k: (lambda x, t: x if k == 0 else (np.ones_like(x) if k == 1 else np.zeros_like(x))))(k) for k in range(5)}
    return FieldSnapshot.from_functions(pts, f, {"u": lambda x, t: 3 * x - 0.5 * x**2})


def test_reward_values():
    assert reward(0.0, 0, 0) == 1.0
    assert reward(1.0, 2, 3, zeta_terms=0.01, zeta_depth=1e-4) == pytest.approx(0.48985, abs=1e-12)
    assert reward(0.1, 2, 3) > reward(0.2, 2, 3)


def test_stridge_reduces_to_least_squares():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, k = int(rng.integers(20, 80)), int(rng.integers(1, 7))
        A = rng.standard_normal((n, k)) * rng.uniform(0.1, 10, k)
        y = rng.standard_normal(n)
        ref = np.linalg.lstsq(A, y, rcond=None)[0]
        got = stridge(A, y, kappa=0.0, tol=0.0)
        assert np.linalg.norm(got - ref) <= 1e-8 * np.linalg.norm(ref)


def test_stridge_exact_recovery():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((100, 2))
    y = 2 * A[:, 0] - 3 * A[:, 1]
    np.testing.assert_allclose(stridge(A, y, kappa=1e-6, tol=0.01), [2, -3], rtol=1e-6)


def test_stridge_prunes_tiny_share():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((100, 2))
    y = A[:, 0] + 1e-6 * A[:, 1]
    w = stridge(A, y, kappa=1e-6, tol=0.01)
    assert w[1] == 0 and w[0] == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(AllTermsEliminated):
        stridge(A[:, 1:], A[:, 0], tol=0.5)


def test_column_of_u_is_x(lib):
    ev = Evaluator(linear_snapshot())
    col = ev.column(parse_traversal("u", lib).tree())
    np.testing.assert_allclose(col, ev.snapshot.coords["x"])


def test_cache_transparent(lib):
    snap = linear_snapshot()
    cached = Evaluator(snap)
    plain = Evaluator(snap, use_cache=False)
    trav = parse_traversal("+ u ^2 u", lib)
    a = cached.evaluate(trav)
    n_cols = cached.column_evaluations
    b = cached.evaluate(trav)
    assert cached.column_evaluations == n_cols
    theta1, _ = cached.build_theta(a.terms)
    theta2, _ = cached.build_theta(a.terms)
    assert cached.column_evaluations == n_cols
    np.testing.assert_array_equal(theta1, theta2)
    c = plain.evaluate(trav)
    assert a.reward == b.reward == c.reward
    np.testing.assert_array_equal(a.coefficients, c.coefficients)
    np.testing.assert_allclose(sorted(a.coefficients), [-0.5, 3.0], rtol=1e-2)


def test_invalid_division(lib):
    ev = Evaluator(linear_snapshot())
    with pytest.raises(NonFiniteColumn):
        ev.column(parse_traversal("/ u - u u", lib).tree())
    cand = ev.evaluate(parse_traversal("+ u / u - u u", lib))
    assert not cand.valid and cand.reward == -1.0


def test_normalized_rmse_scale(lib):
    snap = linear_snapshot()
    raw = Evaluator(snap).evaluate(parse_traversal("u", lib))
    nrm = Evaluator(snap, reward_cfg=RewardConfig(normalize=True)).evaluate(parse_traversal("u", lib))
    assert nrm.rmse == pytest.approx(raw.rmse)
    assert nrm.reward < raw.reward


@pytest.fixture(scope="module")
def burgers_surrogate():
    clean = generate("burgers")
    o = sample_observations(clean, 5000, seed=0)
    tr, va = o.split(0.8, seed=0)
    m = SurrogateModel(lower=clean.lower, upper=clean.upper, seed=0)
    m.set_output_scaling(tr.values)
    train(m, tr, va, cfg=TrainConfig(lr=2e-3, max_epochs=3000, patience=500))
    return m, clean


def test_burgers_coefficients_on_clean_surrogate(lib, burgers_surrogate):
    m, clean = burgers_surrogate
    lo, hi = np.array(clean.lower), np.array(clean.upper)
    span = hi - lo
    pts = np.random.default_rng(0).uniform(lo + 0.05 * span, hi - 0.05 * span, (5000, 2))
    ev = Evaluator(m.snapshot(pts), stridge_cfg=StridgeConfig(tol=0.0))
    _, terms = parse_equation("u_t = u*u_x + u_xx", lib)
    cand = ev.fit_terms([FunctionTerm(t) for _, t in terms])
    coef = {str(t): c for t, c in zip(cand.terms, cand.coefficients)}
    assert coef["u*u_x"] == pytest.approx(-1.0, rel=0.1)
    assert coef["u_xx"] == pytest.approx(0.1, rel=0.1)
