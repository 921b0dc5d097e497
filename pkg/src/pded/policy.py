"""Recurrent token policy and risk-seeking policy gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import kernels
from .expr import ExprTraversal, TokenLibrary
from .grammar import GenLimits, PrefixState, tables


class PolicyNetwork(nn.Module):
    """GRU over (parent, sibling) one-hots emitting logits over the library.

    Index ``len(lib)`` in each one-hot block means "no parent/sibling".
    """

    def __init__(self, lib: TokenLibrary, hidden: int = 64, seed: int = 0):
        super().__init__()
        self.lib = lib
        self.n_tokens = len(lib)
        self.hidden = hidden
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.cell = nn.GRUCell(2 * (self.n_tokens + 1), hidden, dtype=torch.float64)
            self.head = nn.Linear(hidden, self.n_tokens, dtype=torch.float64)

    def zero_output_(self) -> "PolicyNetwork":
        """Make every logit zero, i.e. a uniform distribution over legal tokens."""
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()
        return self

    def encode(self, parent: torch.Tensor, sibling: torch.Tensor) -> torch.Tensor:
        V = self.n_tokens
        p = torch.where(parent < 0, torch.full_like(parent, V), parent)
        s = torch.where(sibling < 0, torch.full_like(sibling, V), sibling)
        x = torch.zeros(len(parent), 2 * (V + 1), dtype=torch.float64)
        rows = torch.arange(len(parent))
        x[rows, p] = 1.0
        x[rows, V + 1 + s] = 1.0
        return x

    def step(self, parent, sibling, h):
        h = self.cell(self.encode(parent, sibling), h)
        return self.head(h), h

    def initial_state(self, n: int) -> torch.Tensor:
        return torch.zeros(n, self.hidden, dtype=torch.float64)


def _masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return torch.log_softmax(logits.masked_fill(~mask, -math.inf), dim=-1)


@dataclass
class SampledBatch:
    traversals: list[ExprTraversal]
    log_probs: np.ndarray
    rewards: np.ndarray | None = None
    entropies: list[float] = field(default_factory=list)


def sample_batch(policy: PolicyNetwork, n: int, limits: GenLimits, rng: np.random.Generator | int = 0) -> SampledBatch:
    """Draw ``n`` traversals token by token from the masked policy."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    lib = policy.lib
    states = [PrefixState(lib, limits) for _ in range(n)]
    tokens: list[list[int]] = [[] for _ in range(n)]
    logp = np.zeros(n)
    active = np.arange(n)
    h = policy.initial_state(n)
    with torch.no_grad():
        while active.size:
            ctx = np.array([states[i].context() for i in active], dtype=np.int64)
            mask = np.stack([states[i].mask() for i in active])
            logits, h = policy.step(torch.from_numpy(ctx[:, 0]), torch.from_numpy(ctx[:, 1]), h)
            lp = _masked_log_softmax(logits, torch.from_numpy(mask)).numpy()
            probs = np.exp(lp)
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(len(active)) * cdf[:, -1]
            choice = np.minimum((cdf <= u[:, None]).sum(axis=1), probs.shape[1] - 1)
            # guard against float round-off landing on a masked token
            bad = ~mask[np.arange(len(active)), choice]
            if bad.any():
                choice[bad] = np.argmax(np.where(mask[bad], probs[bad], -1), axis=1)
            keep = []
            for j, i in enumerate(active):
                c = int(choice[j])
                tokens[i].append(c)
                logp[i] += lp[j, c]
                states[i].push(c)
                if not states[i].done:
                    keep.append(j)
            keep = np.asarray(keep, dtype=np.int64)
            active = active[keep]
            h = h[torch.from_numpy(keep)]
    travs = [ExprTraversal(tuple(t), lib) for t in tokens]
    return SampledBatch(travs, logp)


def log_likelihood(policy: PolicyNetwork, traversals: Sequence[ExprTraversal], limits: GenLimits) -> torch.Tensor:
    """Differentiable ``log p(tau)`` for each traversal (``-inf`` if any token is masked)."""
    n = len(traversals)
    L = max(len(t) for t in traversals)
    tok = np.zeros((n, L), dtype=np.int64)
    lens = np.array([len(t) for t in traversals], dtype=np.int64)
    for r, t in enumerate(traversals):
        tok[r, : len(t)] = t.tokens
    tab = tables(policy.lib)
    parents, siblings, masks, _ = kernels.scan_prefixes(
        tok, lens, tab.arity, tab.spatial, tab.spine, tab.derivative, limits.max_length, limits.max_depth
    )
    parents_t = torch.from_numpy(parents)
    siblings_t = torch.from_numpy(siblings)
    masks_t = torch.from_numpy(masks.astype(bool))
    tok_t = torch.from_numpy(tok)
    h = policy.initial_state(n)
    total = torch.zeros(n, dtype=torch.float64)
    for p in range(L):
        live = torch.from_numpy(lens > p)
        logits, h_new = policy.step(parents_t[:, p], siblings_t[:, p], h)
        m = masks_t[:, p]
        m = torch.where(live[:, None], m, torch.ones_like(m))
        lp = _masked_log_softmax(logits, m)
        picked = lp.gather(1, tok_t[:, p : p + 1]).squeeze(1)
        total = total + torch.where(live, picked, torch.zeros_like(picked))
        h = torch.where(live[:, None], h_new, h)
    return total


def risk_quantile(rewards: Sequence[float], epsilon: float) -> float:
    """Nearest-rank ``(1 - epsilon)`` quantile: the ``ceil(epsilon*n)``-th largest reward."""
    r = np.sort(np.asarray(rewards, dtype=np.float64))
    if r.size == 0:
        raise ValueError("no rewards")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    k = max(1, math.ceil(epsilon * r.size - 1e-9))
    return float(r[r.size - k])


@dataclass
class PGStats:
    threshold: float
    n_retained: int
    n_used: int
    loss: float
    stepped: bool


def policy_gradient_step(
    policy: PolicyNetwork,
    optimizer: torch.optim.Optimizer,
    traversals: Sequence[ExprTraversal],
    rewards: Sequence[float],
    limits: GenLimits,
    epsilon: float = 0.1,
    lambda_pg: float = 1.0,
) -> PGStats:
    """One risk-seeking update on the samples at or above the reward quantile.

    Samples with zero advantage or zero probability under the policy do not
    contribute; when nothing contributes the parameters are left untouched.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    q = risk_quantile(rewards, epsilon)
    keep = np.flatnonzero(rewards >= q)
    adv = rewards[keep] - q
    nz = adv != 0
    if not nz.any():
        return PGStats(q, len(keep), 0, 0.0, False)
    sel = keep[nz]
    logp = log_likelihood(policy, [traversals[i] for i in sel], limits)
    finite = torch.isfinite(logp)
    if not bool(finite.any()):
        return PGStats(q, len(keep), 0, 0.0, False)
    a = torch.from_numpy(adv[nz])[finite]
    loss = -(lambda_pg / (epsilon * len(rewards))) * torch.sum(a * logp[finite])
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return PGStats(q, len(keep), int(finite.sum()), float(loss.detach()), True)
