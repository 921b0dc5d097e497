import numpy as np
import pytest
import torch
from scipy import stats

from pded.grammar import GenLimits, legal_token_mask, sequence_is_legal
from pded.policy import PolicyNetwork, log_likelihood, policy_gradient_step, risk_quantile, sample_batch


def test_quantile_examples():
    r = np.arange(1, 101, dtype=float)
    q = risk_quantile(r, 0.1)
    assert q == 91 and np.sum(r >= q) == 10
    assert risk_quantile([0.3] * 7, 0.1) == 0.3
    assert risk_quantile([5, 1, 3], 1.0) == 1
    with pytest.raises(ValueError):
        risk_quantile([1.0], 0.0)


def test_batch_valid_and_deterministic(lib, limits):
    pol = PolicyNetwork(lib, seed=0)
    a = sample_batch(pol, 1000, limits, rng=5)
    assert len(a.traversals) == 1000
    assert all(sequence_is_legal(t.tokens, lib, limits) for t in a.traversals)
    b = sample_batch(pol, 1000, limits, rng=5)
    assert [t.tokens for t in a.traversals] == [t.tokens for t in b.traversals]
    np.testing.assert_array_equal(a.log_probs, b.log_probs)


def test_uniform_policy_root_frequencies(lib, limits):
    pol = PolicyNetwork(lib, seed=0).zero_output_()
    n = 4000
    batch = sample_batch(pol, n, limits, rng=11)
    legal = np.flatnonzero(legal_token_mask([], lib, limits))
    counts = np.array([sum(t.tokens[0] == i for t in batch.traversals) for i in legal])
    assert counts.sum() == n
    p = stats.chisquare(counts).pvalue
    assert p > 1e-3


def test_log_likelihood_matches_sampler(lib, limits):
    pol = PolicyNetwork(lib, seed=1)
    batch = sample_batch(pol, 50, limits, rng=2)
    with torch.no_grad():
        lp = log_likelihood(pol, batch.traversals, limits).numpy()
    np.testing.assert_allclose(lp, batch.log_probs, rtol=1e-10, atol=1e-10)


def test_zero_advantage_is_noop(lib, limits):
    pol = PolicyNetwork(lib, seed=2)
    opt = torch.optim.Adam(pol.parameters(), lr=0.1)
    before = [p.detach().clone() for p in pol.parameters()]
    batch = sample_batch(pol, 20, limits, rng=0)
    st = policy_gradient_step(pol, opt, batch.traversals, [0.7] * 20, limits, epsilon=0.1)
    assert not st.stepped
    for a, b in zip(before, pol.parameters()):
        assert torch.equal(a, b)


def test_bandit_converges(lib):
    lim = GenLimits(max_length=1)
    pol = PolicyNetwork(lib, hidden=8, seed=0)
    opt = torch.optim.Adam(pol.parameters(), lr=0.05)
    u = lib.resolve("u")
    rng = np.random.default_rng(0)
    for _ in range(200):
        batch = sample_batch(pol, 32, lim, rng)
        rewards = [1.0 if t.tokens[0] == u else 0.0 for t in batch.traversals]
        policy_gradient_step(pol, opt, batch.traversals, rewards, lim, epsilon=1.0)
    final = sample_batch(pol, 2000, lim, rng)
    assert np.mean([t.tokens[0] == u for t in final.traversals]) > 0.95


def test_log_likelihood_gradient_fd(lib, limits):
    pol = PolicyNetwork(lib, hidden=6, seed=3)
    travs = sample_batch(pol, 5, limits, rng=1).traversals

    def total():
        return log_likelihood(pol, travs, limits).sum()

    pol.zero_grad()
    total().backward()
    rng = np.random.default_rng(0)
    for p in pol.parameters():
        flat = p.data.view(-1)
        g = p.grad.view(-1).clone()
        for i in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
            old = float(flat[i])
            h = 1e-6
            with torch.no_grad():
                flat[i] = old + h
                up = float(total())
                flat[i] = old - h
                dn = float(total())
                flat[i] = old
            fd = (up - dn) / (2 * h)
            assert abs(fd - float(g[i])) <= 1e-4 * max(abs(float(g[i])), 1e-2)
