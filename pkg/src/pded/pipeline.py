"""End-to-end discovery run: pretrain, alternate search/selection/embedding, refit, report."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import NonFiniteResidual
from .data import (
    TRUTH,
    GridDataset,
    add_noise,
    generate,
    read_dataset,
    sample_collocation,
    sample_local,
    sample_observations,
)
from .evolution import SubtreeBank, hybrid_generate
from .expr import TokenLibrary
from .grammar import GenLimits
from .expand import expand_terms, monomial_terms
from .metrics import field_l2, score_terms
from .policy import PolicyNetwork, policy_gradient_step, risk_quantile, sample_batch
from .selection import select_candidates
from .surrogate import LossWeights, SurrogateModel, TrainConfig, train
from .term_eval import Evaluator, PdeCandidate, RewardConfig, StridgeConfig

log = logging.getLogger("pded")


def build_library(cfg: RunConfig) -> TokenLibrary:
    lc = cfg.library
    return TokenLibrary.default(
        state_vars=lc.state_vars,
        spatial_vars=lc.spatial_vars,
        operators=lc.operators,
        derivatives=lc.derivatives,
        symmetry_pairs=[tuple(p) for p in lc.symmetry_pairs],
    )


def build_limits(cfg: RunConfig) -> GenLimits:
    s = cfg.search
    return GenLimits(
        max_length=s.max_length,
        max_depth=s.max_depth,
        population=s.population,
        bank_size=s.bank_size,
        bank_subsample=min(s.bank_subsample, s.bank_size),
        delta_low=s.delta_low,
        delta_high=s.delta_high,
        dsb_tol=s.dsb_tol,
    )


def load_data(cfg: RunConfig) -> tuple[GridDataset | None, GridDataset, str | None]:
    """(clean field if known, noisy field, truth equation if known)."""
    d = cfg.data
    if d.path:
        noisy = read_dataset(d.path)
        truth = cfg.truth or TRUTH.get(str(noisy.provenance.get("generator", "")))
        return None, noisy, truth
    clean = generate(d.equation)
    noisy = add_noise(clean, d.sigma, d.noise_seed)
    return clean, noisy, cfg.truth or TRUTH.get(d.equation)


def _train_cfg(cfg: RunConfig, epochs: int, seed: int, keep_initial: bool = True) -> TrainConfig:
    s = cfg.surrogate
    return TrainConfig(
        lr=s.lr,
        max_epochs=epochs,
        patience=s.patience,
        full_batch_limit=s.full_batch_limit,
        batch_size=s.batch_size,
        physics_batch=s.physics_batch,
        seed=seed,
        keep_initial=keep_initial,
    )


def _signal_points(model, lo, hi, n: int, rng: np.random.Generator, threshold: float, max_draws: int = 20) -> np.ndarray:
    """Uniform points in the box where the surrogate's ``|u|`` exceeds ``threshold * max|u|``.

    Falls back to whatever was found (topped up with unfiltered points) if the
    region is too small to fill ``n`` within ``max_draws`` batches.
    """
    pts = sample_collocation(lo, hi, n, int(rng.integers(2**31)))
    if threshold <= 0:
        return pts
    u = np.abs(model.predict(pts)[:, 0])
    cut = threshold * float(np.max(u))
    kept = [pts[u > cut]]
    total = len(kept[0])
    for _ in range(max_draws - 1):
        if total >= n:
            break
        more = sample_collocation(lo, hi, n, int(rng.integers(2**31)))
        sel = more[np.abs(model.predict(more)[:, 0]) > cut]
        kept.append(sel)
        total += len(sel)
    out = np.concatenate(kept)[:n]
    if len(out) < n:
        out = np.concatenate([out, pts[: n - len(out)]])
    return out


def _grid_l2(model: SurrogateModel, data: GridDataset) -> float:
    pred = model.predict(data.points())[:, 0]
    return field_l2(pred, data.values())


@dataclass
class RunResult:
    report: dict
    model: SurrogateModel
    policy: PolicyNetwork | None
    final: PdeCandidate | None


class _HallOfFame:
    """Best candidates, unique by surviving term set."""

    def __init__(self):
        self.items: dict[str, PdeCandidate] = {}
        self._supports: dict[str, frozenset] = {}

    def add(self, c: PdeCandidate) -> None:
        if not c.valid:
            return
        k = c.term_set_key
        old = self.items.get(k)
        if old is None or c.reward > old.reward:
            self.items[k] = c

    def top(self, k: int) -> list[PdeCandidate]:
        # rewards equal to 12 digits count as ties and fall back to the key order
        return sorted(self.items.values(), key=lambda c: (-round(c.reward, 12), c.term_set_key))[:k]

    def distinct_top(self, k: int, limit: int = 2000) -> list[PdeCandidate]:
        """Best ``k`` candidates whose expanded monomial supports differ.

        Forms such as ``(u^2)_x`` and ``u*u_x`` share a support and only the
        higher-ranked one is kept.
        """
        out, seen = [], set()
        for c in self.top(limit):
            supp = self._support(c)
            if supp in seen:
                continue
            seen.add(supp)
            out.append(c)
            if len(out) == k:
                break
        return out

    def _support(self, c: PdeCandidate) -> frozenset:
        key = c.term_set_key
        supp = self._supports.get(key)
        if supp is None:
            try:
                supp = frozenset(expand_terms(c.terms, c.coefficients))
            except Exception:  # noqa: BLE001 - unexpandable forms stay unique
                supp = frozenset({key})
            self._supports[key] = supp
        return supp

    def best(self) -> PdeCandidate | None:
        t = self.top(1)
        return t[0] if t else None

    def reevaluate(self, ev: Evaluator) -> None:
        old = list(self.items.values())
        self.items = {}
        for c in old:
            self.add(ev.fit_terms(c.terms, c.traversal_key))


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> RunResult:
    """Execute a full discovery run and optionally write artefacts to ``out_dir``."""
    t_start = time.perf_counter()
    seeds = np.random.SeedSequence(cfg.seed).spawn(8)
    rng_search = np.random.default_rng(seeds[0])
    rng_colloc = np.random.default_rng(seeds[1])
    rng_sel = np.random.default_rng(seeds[2])
    torch_seed = int(seeds[3].generate_state(1)[0])
    split_seed = int(seeds[4].generate_state(1)[0])
    local_seed = int(seeds[5].generate_state(1)[0])

    clean, noisy, truth = load_data(cfg)
    reference = clean if clean is not None else noisy
    obs = sample_observations(noisy, cfg.data.n_obs, cfg.data.obs_seed)
    train_obs, val_obs = obs.split(cfg.data.train_fraction, split_seed)
    lower, upper = noisy.lower, noisy.upper
    sc = cfg.surrogate
    model = SurrogateModel(noisy.axis_names, noisy.variables, sc.hidden, sc.activation, lower, upper, sc.dtype, torch_seed)
    model.set_output_scaling(train_obs.values)
    target = noisy.variables[0]

    log.info("pretraining surrogate on %d observations", len(train_obs))
    pre = train(model, train_obs, val_obs, cfg=_train_cfg(cfg, sc.pretrain_epochs, torch_seed))
    l2_pre = _grid_l2(model, reference)
    log.info("pretrain done: %d epochs, val %.3e, L2 %.4f", pre.epochs_run, pre.best_val_loss, l2_pre)

    report: dict = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "truth": truth,
        "pretrain": {**pre.to_dict(), "l2": l2_pre},
        "rounds": [],
        "rewards": [],
        "final": None,
        "score": None,
    }

    lib = build_library(cfg)
    limits = build_limits(cfg)
    s = cfg.search
    stridge_cfg = StridgeConfig(s.kappa, s.tol, s.max_iters)
    reward_cfg = RewardConfig(s.zeta_terms, s.zeta_depth, s.normalize_rmse)
    policy = PolicyNetwork(lib, s.policy_hidden, torch_seed)
    opt = torch.optim.Adam(policy.parameters(), lr=s.policy_lr)
    hof = _HallOfFame()
    winner: PdeCandidate | None = None
    l2_now = l2_pre

    # reward evaluation stays clear of the edges, where the network extrapolates
    span = np.asarray(upper) - np.asarray(lower)
    in_lo = np.asarray(lower) + s.colloc_margin * span
    in_hi = np.asarray(upper) - s.colloc_margin * span

    def snapshot(n, rng, generation):
        pts = _signal_points(model, in_lo, in_hi, n, rng, s.signal_threshold)
        return pts, model.snapshot(pts, sc.max_derivative_order, generation)

    run_searches = s.iterations > 0 and s.rounds > 0
    for rnd in range(s.rounds if run_searches else 0):
        _, snap = snapshot(s.n_colloc, rng_colloc, 2 * rnd)
        ev = Evaluator(snap, target, stridge_cfg, reward_cfg, s.use_cache)
        hof.reevaluate(ev)
        start_best = hof.best().reward if hof.best() else None
        bank = SubtreeBank(limits.bank_size)
        t_round = time.perf_counter()
        for it in range(s.iterations):
            batch = sample_batch(policy, s.population, limits, rng_search)
            res = hybrid_generate(batch.traversals, ev, bank, hof.best(), limits, rng_search, lib, s.pool_fraction, s.use_dsb)
            bank = res.bank
            travs = [t for t, _ in res.candidates]
            rewards = np.array([c.reward for _, c in res.candidates])
            pg = policy_gradient_step(policy, opt, travs, rewards, limits, s.epsilon, s.lambda_pg)
            for _, c in res.candidates:
                hof.add(c)
            top_mean = float(np.mean(rewards[rewards >= pg.threshold]))
            best = hof.best()
            report["rewards"].append(
                {
                    "round": rnd + 1,
                    "iteration": it + 1,
                    "best": best.reward if best else None,
                    "top_eps_mean": top_mean,
                    "n_candidates": len(rewards),
                    "n_valid": int(np.sum(rewards > -1)),
                    "best_equation": best.equation() if best else None,
                }
            )
            log.info("round %d it %d best %.5f top-eps %.5f %s", rnd + 1, it + 1, best.reward if best else math.nan, top_mean, best.equation() if best else "")
        round_rec: dict = {
            "round": rnd + 1,
            "start_best_reward": start_best,
            "search_seconds": time.perf_counter() - t_round,
            "bank": bank.to_list(),
            "cache": {"hits": ev.cache.hits, "misses": ev.cache.misses},
        }
        top = hof.distinct_top(cfg.selection.top_k) if cfg.selection.distinct else hof.top(cfg.selection.top_k)
        if not top:
            round_rec["winner"] = None
            report["rounds"].append(round_rec)
            continue
        if cfg.selection.redraw:
            _, sel_snap = snapshot(cfg.selection.n_colloc, rng_colloc, 2 * rnd + 1)
            sel_ev = Evaluator(sel_snap, target, stridge_cfg, reward_cfg)
        else:
            sel_ev = ev
        sel = select_candidates(top, sel_ev, cfg.selection.n_subsets, cfg.selection.n_subsamples, rng_sel)
        winner = top[sel.winner]
        round_rec.update(
            {
                "best_reward": top[0].reward,
                "top_k": [c.to_dict() for c in top],
                "selection": sel.to_dict(),
                "winner": winner.to_dict(),
            }
        )
        log.info("round %d winner %s (votes %s)", rnd + 1, winner.equation(), sel.votes.tolist())
        embedded = winner
        if cfg.selection.monomial_refit:
            # embed the simplest equivalent form; it avoids divisions and cancelling terms
            embedded = _monomial_refit(winner, ev, lib, cfg.selection.monomial_max)
            round_rec["embedded"] = embedded.to_dict()
        colloc = sample_collocation(lower, upper, s.n_colloc, int(rng_colloc.integers(2**31)))
        local = None
        if sc.lambda2 > 0:
            local = sample_local(train_obs.points, sc.local_per_obs, noisy.spacing, local_seed + rnd)
        try:
            emb = train(
                model,
                train_obs,
                val_obs,
                pde=embedded,
                colloc=colloc,
                local=local,
                weights=LossWeights(sc.lambda1, sc.lambda2, sc.normalize_residual),
                cfg=_train_cfg(cfg, sc.embed_epochs, torch_seed + rnd + 1, keep_initial=False),
                target=target,
            )
            emb_rec = emb.to_dict()
        except NonFiniteResidual as e:
            # the winner cannot be embedded; keep the restored surrogate and move on
            log.warning("round %d embedding skipped: %s", rnd + 1, e)
            emb_rec = {"error": str(e), "epochs_run": 0}
        l2_now = _grid_l2(model, reference)
        round_rec["embedding"] = {**emb_rec, "l2": l2_now}
        # best reward of the hall of fame on the embedded surrogate
        _, post_snap = snapshot(s.n_colloc, rng_colloc, 2 * rnd + 100)
        post_ev = Evaluator(post_snap, target, stridge_cfg, reward_cfg)
        hof.reevaluate(post_ev)
        round_rec["post_embedding_best_reward"] = hof.best().reward if hof.best() else None
        log.info("round %d embedding: %d epochs, L2 %.4f", rnd + 1, emb_rec["epochs_run"], l2_now)
        report["rounds"].append(round_rec)

    final = None
    if winner is not None:
        _, fsnap = snapshot(s.n_colloc, rng_colloc, 10_000)
        fev = Evaluator(fsnap, target, stridge_cfg, reward_cfg)
        final = fev.fit_terms(winner.terms, winner.traversal_key)
        if not final.valid:
            final = winner
        if cfg.selection.monomial_refit:
            report["final_tree"] = final.to_dict()
            final = _monomial_refit(final, fev, lib, cfg.selection.monomial_max)
        report["final"] = final.to_dict()
    report["l2_final"] = l2_now
    if final is not None:
        report["final_expanded"] = expand_terms(final.terms, final.coefficients)
    if truth and final is not None:
        report["score"] = score_terms(final.terms, final.coefficients, truth, lib, l2_now).to_dict()
    elif truth:
        report["score"] = None
    report["seconds"] = time.perf_counter() - t_start
    report["final_equation"] = final.equation(f"{target}_t") if final is not None else None

    if out_dir is not None:
        write_artifacts(Path(out_dir), report, model, policy)
    return RunResult(report, model, policy, final)


def _monomial_refit(cand: PdeCandidate, ev: Evaluator, lib: TokenLibrary, max_terms: int) -> PdeCandidate:
    """Best-reward fit over nonempty subsets of the candidate's expanded monomials."""
    try:
        mono = monomial_terms(expand_terms(cand.terms, cand.coefficients), lib)
    except (ValueError, TypeError, ArithmeticError):
        mono = None
    if not mono or len(mono) > max_terms:
        return cand
    best = None
    for r in range(1, len(mono) + 1):
        for sub in itertools.combinations(mono, r):
            c = ev.fit_terms(list(sub), cand.traversal_key)
            if c.valid and (best is None or c.reward > best.reward):
                best = c
    return best if best is not None else cand


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _finite(o):
    """Replace non-finite floats with None so the report stays strict JSON."""
    if isinstance(o, float):
        return o if math.isfinite(o) else None
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    return o


def write_artifacts(out: Path, report: dict, model: SurrogateModel | None = None, policy: PolicyNetwork | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(_finite(report), indent=2, default=_json_default, ensure_ascii=False))
    with open(out / "rewards.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["round", "iteration", "best", "top_eps_mean", "n_candidates", "n_valid"])
        for r in report.get("rewards", []):
            w.writerow([r["round"], r["iteration"], r["best"], r["top_eps_mean"], r["n_candidates"], r["n_valid"]])
    with open(out / "votes.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["round", "candidate", "equation", "votes", "winner"])
        for rr in report.get("rounds", []):
            sel = rr.get("selection")
            if not sel:
                continue
            for k, (lab, v) in enumerate(zip(sel["labels"], sel["votes"])):
                w.writerow([rr["round"], k, lab, v, int(k == sel["winner"])])
    if model is not None:
        model.save(out / "surrogate.json")
    if policy is not None:
        save_policy(policy, out / "policy.json")
    try:
        from .plots import render_all

        render_all(report, out, model)
    except ImportError:  # matplotlib missing
        log.warning("matplotlib unavailable; skipping plots")


def save_policy(policy: PolicyNetwork, path: Path) -> None:
    state = {k: {"shape": list(v.shape), "data": v.detach().reshape(-1).tolist()} for k, v in policy.state_dict().items()}
    rec = {"format": "pded-policy", "version": 1, "library": policy.lib.to_dict(), "hidden": policy.hidden, "state": state}
    Path(path).write_text(json.dumps(rec, ensure_ascii=False))


def load_policy(path: Path) -> PolicyNetwork:
    rec = json.loads(Path(path).read_text())
    if rec.get("format") != "pded-policy" or rec.get("version") != 1:
        raise ValueError("not a policy checkpoint")
    pol = PolicyNetwork(TokenLibrary.from_dict(rec["library"]), rec["hidden"])
    state = {k: torch.tensor(v["data"], dtype=torch.float64).reshape(v["shape"]) for k, v in rec["state"].items()}
    pol.load_state_dict(state)
    return pol
