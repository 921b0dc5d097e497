"""Differentiable field surrogate and its training loop.

The model maps physical coordinates ``(x..., t)`` to state variables.  Inputs
are affinely mapped to ``[-1, 1]`` inside :meth:`SurrogateModel.forward`, so
autograd derivatives are already expressed in physical units.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import DimensionMismatch, DivergedLoss, NonFiniteResidual, UnsupportedVariable
from .treeeval import FieldSnapshot, torch_tree

CHECKPOINT_FORMAT = "pded-surrogate"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {"tanh": torch.tanh, "sin": torch.sin}
_DTYPES = {"float64": torch.float64, "float32": torch.float32}


class SurrogateModel(nn.Module):
    """Fully connected network ``u(x..., t)`` with a smooth activation."""

    def __init__(
        self,
        inputs: Sequence[str] = ("x", "t"),
        outputs: Sequence[str] = ("u",),
        hidden: Sequence[int] = (50, 50, 50, 50),
        activation: str = "tanh",
        lower: Sequence[float] | None = None,
        upper: Sequence[float] | None = None,
        dtype: str = "float64",
        seed: int = 0,
    ):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        self.inputs = tuple(inputs)
        self.outputs = tuple(outputs)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.dtype_name = dtype
        tdtype = _DTYPES[dtype]
        sizes = [len(self.inputs), *self.hidden, len(self.outputs)]
        gen = torch.Generator().manual_seed(int(seed))
        self.layers = nn.ModuleList()
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            lin = nn.Linear(n_in, n_out, dtype=tdtype)
            std = math.sqrt(2.0 / (n_in + n_out))
            with torch.no_grad():
                lin.weight.copy_(torch.randn(n_out, n_in, generator=gen, dtype=tdtype) * std)
                lin.bias.zero_()
            self.layers.append(lin)
        d = len(self.inputs)
        lo = torch.tensor(lower if lower is not None else [-1.0] * d, dtype=tdtype)
        hi = torch.tensor(upper if upper is not None else [1.0] * d, dtype=tdtype)
        if lo.shape != (d,) or hi.shape != (d,) or bool((hi <= lo).any()):
            raise ValueError("lower/upper must give one increasing interval per input")
        self.register_buffer("lower", lo)
        self.register_buffer("upper", hi)
        self.register_buffer("out_shift", torch.zeros(len(self.outputs), dtype=tdtype))
        self.register_buffer("out_scale", torch.ones(len(self.outputs), dtype=tdtype))
        self._act = _ACTIVATIONS[activation]

    @property
    def tdtype(self) -> torch.dtype:
        return _DTYPES[self.dtype_name]

    def forward(self, X: torch.Tensor) -> torch.Tensor:
        h = 2.0 * (X - self.lower) / (self.upper - self.lower) - 1.0
        for lin in self.layers[:-1]:
            h = self._act(lin(h))
        y = self.layers[-1](h)
        return y * self.out_scale + self.out_shift

    def set_output_scaling(self, values: np.ndarray) -> None:
        """Centre and scale outputs on observed values so the net fits O(1) targets."""
        v = np.asarray(values, dtype=np.float64).reshape(len(values), -1)
        with torch.no_grad():
            self.out_shift.copy_(torch.as_tensor(v.mean(axis=0), dtype=self.tdtype))
            sd = v.std(axis=0)
            self.out_scale.copy_(torch.as_tensor(np.where(sd > 0, sd, 1.0), dtype=self.tdtype))

    # -- numpy-facing evaluation ----------------------------------------------

    def _as_tensor(self, points) -> torch.Tensor:
        P = np.ascontiguousarray(points, dtype=np.float64)
        if P.ndim == 1:
            P = P[None, :]
        if P.ndim != 2 or P.shape[1] != len(self.inputs):
            raise DimensionMismatch(f"expected points with {len(self.inputs)} columns {self.inputs}, got shape {np.shape(points)}")
        return torch.as_tensor(P, dtype=self.tdtype)

    def predict(self, points, chunk: int = 65536) -> np.ndarray:
        """Model values at ``points`` (shape ``(N, n_inputs)``) as ``(N, n_outputs)``."""
        X = self._as_tensor(points)
        with torch.no_grad():
            parts = [self(X[i : i + chunk]) for i in range(0, len(X), chunk)]
        return torch.cat(parts).cpu().numpy().astype(np.float64)

    def grad(self, points, wrt: str, order: int = 1, output: str | None = None) -> np.ndarray:
        """Exact ``order``-th derivative of one output with respect to ``wrt``."""
        if wrt not in self.inputs:
            raise UnsupportedVariable(f"{wrt!r} is not an input of the model {self.inputs}")
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2; nest calls for higher orders")
        out = self.outputs.index(output) if output else 0
        j = self.inputs.index(wrt)
        X = self._as_tensor(points).requires_grad_(True)
        y = self(X)[:, out]
        for _ in range(order):
            (g,) = torch.autograd.grad(y, X, torch.ones_like(y), create_graph=True, allow_unused=True)
            y = torch.zeros_like(y) if g is None else g[:, j]
        return y.detach().cpu().numpy().astype(np.float64)

    def snapshot(self, points, max_order: int = 4, generation: int = 0, chunk: int = 4096) -> FieldSnapshot:
        """Values and spatial derivatives up to ``max_order`` at ``points``.

        The last input is treated as time; every other input is spatial.
        """
        P = np.asarray(points, dtype=np.float64)
        spatial = self.inputs[:-1]
        nsp = len(spatial)
        alphas = [a for k in range(max_order + 1) for a in _multi_indices(nsp, k)]
        base = {(v, a): np.empty(len(P)) for v in self.outputs for a in alphas}
        tder = {v: np.empty(len(P)) for v in self.outputs}
        for s in range(0, len(P), chunk):
            X = self._as_tensor(P[s : s + chunk]).requires_grad_(True)
            Y = self(X)
            for o, v in enumerate(self.outputs):
                have = {(0,) * nsp: Y[:, o]}
                for a in alphas[1:]:
                    i = next(k for k, n in enumerate(a) if n)
                    parent = list(a)
                    parent[i] -= 1
                    prev = have[tuple(parent)]
                    keep = sum(a) < max_order
                    (g,) = torch.autograd.grad(prev, X, torch.ones_like(prev), create_graph=keep, retain_graph=True, allow_unused=True)
                    have[a] = torch.zeros_like(prev) if g is None else g[:, i]
                (gt,) = torch.autograd.grad(Y[:, o], X, torch.ones_like(Y[:, o]), retain_graph=True)
                tder[v][s : s + chunk] = gt[:, -1].detach().cpu().numpy()
                for a in alphas:
                    base[(v, a)][s : s + chunk] = have[a].detach().cpu().numpy()
        return FieldSnapshot(P, spatial, self.inputs[-1], base, tder, max_order, generation)

    # -- checkpoints ------------------------------------------------------------

    def to_dict(self) -> dict:
        layers = []
        for lin in self.layers:
            W = lin.weight.detach().cpu().numpy().astype(np.float64)
            layers.append({"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": lin.bias.detach().cpu().numpy().astype(np.float64).tolist()})
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "layer_sizes": [len(self.inputs), *self.hidden, len(self.outputs)],
            "activation": self.activation,
            "dtype": self.dtype_name,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "out_shift": self.out_shift.tolist(),
            "out_scale": self.out_scale.tolist(),
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a surrogate checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        m = cls(d["inputs"], d["outputs"], d["layer_sizes"][1:-1], d["activation"], d["lower"], d["upper"], d["dtype"])
        with torch.no_grad():
            for lin, rec in zip(m.layers, d["layers"]):
                lin.weight.copy_(torch.tensor(rec["weight"], dtype=m.tdtype).reshape(rec["shape"]))
                lin.bias.copy_(torch.tensor(rec["bias"], dtype=m.tdtype))
            m.out_shift.copy_(torch.tensor(d["out_shift"], dtype=m.tdtype))
            m.out_scale.copy_(torch.tensor(d["out_scale"], dtype=m.tdtype))
        return m

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _multi_indices(n: int, k: int) -> list[tuple[int, ...]]:
    """All length-``n`` non-negative integer tuples summing to ``k``, sorted."""
    if n == 1:
        return [(k,)]
    out = []
    for first in range(k, -1, -1):
        out += [(first, *rest) for rest in _multi_indices(n - 1, k - first)]
    return out


# ---------------------------------------------------------------------------
# physics residual


def physics_residual_tensor(model: SurrogateModel, terms, coefficients, X: torch.Tensor, target: str | None = None) -> torch.Tensor:
    """``u_t - sum_j xi_j * theta_j`` as a differentiable tensor at ``X``."""
    X = X.requires_grad_(True) if not X.requires_grad else X
    Y = model(X)
    tgt = model.outputs.index(target) if target else 0
    (g,) = torch.autograd.grad(Y[:, tgt], X, torch.ones_like(Y[:, tgt]), create_graph=True)
    res = g[:, -1]
    for term, c in zip(terms, coefficients):
        if c == 0:
            continue
        tree = getattr(term, "tree", term)
        res = res - float(c) * torch_tree(tree, X, Y, model.inputs, model.outputs)
    return res


def physics_residual(model: SurrogateModel, pde, points, target: str | None = None) -> np.ndarray:
    """Residual of candidate ``pde`` (terms + coefficients) at ``points``."""
    X = model._as_tensor(points).requires_grad_(True)
    r = physics_residual_tensor(model, pde.terms, pde.coefficients, X, target)
    out = r.detach().cpu().numpy().astype(np.float64)
    bad = ~np.isfinite(out)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteResidual("non-finite physics residual", point=np.asarray(points)[i])
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.0
    # divide residual losses by var(u_t) at the collocation points
    normalize: bool = True

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 20000
    patience: int = 500
    full_batch_limit: int = 20000
    batch_size: int = 4096
    physics_batch: int | None = None
    log_every: int = 100
    seed: int = 0
    # count the starting weights as a candidate for the best-validation restore
    keep_initial: bool = True


@dataclass
class TrainReport:
    epochs_run: int = 0
    train_loss: float = math.nan
    val_loss: float = math.nan
    best_val_loss: float = math.inf
    best_epoch: int = 0
    stopped_early: bool = False
    seconds: float = 0.0
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def train(
    model: SurrogateModel,
    train_obs,
    val_obs,
    pde=None,
    colloc: np.ndarray | None = None,
    local: np.ndarray | None = None,
    weights: LossWeights | None = None,
    cfg: TrainConfig | None = None,
    target: str | None = None,
) -> TrainReport:
    """Fit ``model`` to observations, optionally with an embedded PDE residual.

    ``train_obs`` / ``val_obs`` expose ``points`` and ``values``.  The total
    loss is ``L_d + lambda1 * L_p + lambda2 * L_l`` where ``L_p`` and ``L_l``
    are mean squared residuals at ``colloc`` and ``local`` points.  Early
    stopping watches the validation data loss; the best weights are restored.
    """
    weights = weights or LossWeights()
    cfg = cfg or TrainConfig()
    dt = model.tdtype
    gen = torch.Generator().manual_seed(int(cfg.seed))
    Xt = torch.as_tensor(np.asarray(train_obs.points), dtype=dt)
    Yt = torch.as_tensor(np.asarray(train_obs.values).reshape(len(Xt), -1), dtype=dt)
    Xv = torch.as_tensor(np.asarray(val_obs.points), dtype=dt)
    Yv = torch.as_tensor(np.asarray(val_obs.values).reshape(len(Xv), -1), dtype=dt)
    use_p = pde is not None and weights.lambda1 > 0 and colloc is not None and len(colloc) > 0
    use_l = pde is not None and weights.lambda2 > 0 and local is not None and len(local) > 0
    Xc = torch.as_tensor(np.asarray(colloc), dtype=dt) if use_p else None
    Xl = torch.as_tensor(np.asarray(local), dtype=dt) if use_l else None
    terms = list(pde.terms) if pde is not None else []
    coefs = [float(c) for c in pde.coefficients] if pde is not None else []
    res_scale = 1.0
    if (use_p or use_l) and weights.normalize:
        probe = np.asarray(colloc if use_p else local)
        ut_var = float(np.var(model.grad(probe, model.inputs[-1], 1, target)))
        res_scale = 1.0 / ut_var if ut_var > 0 and math.isfinite(ut_var) else 1.0

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    n = len(Xt)
    bs = n if n <= cfg.full_batch_limit else cfg.batch_size
    report = TrainReport()
    best_state = copy.deepcopy(model.state_dict())
    init_state = copy.deepcopy(best_state)
    report.best_val_loss = math.inf
    if cfg.keep_initial and len(Xv):
        with torch.no_grad():
            report.best_val_loss = float(torch.mean((model(Xv) - Yv) ** 2))
    bad_checks = 0
    t0 = time.perf_counter()

    def residual_loss(Xs):
        if cfg.physics_batch and len(Xs) > cfg.physics_batch:
            idx = torch.randperm(len(Xs), generator=gen)[: cfg.physics_batch]
            Xs = Xs[idx]
        r = physics_residual_tensor(model, terms, coefs, Xs.clone(), target)
        return torch.mean(r**2) * res_scale

    for epoch in range(1, cfg.max_epochs + 1):
        perm = torch.randperm(n, generator=gen) if bs < n else None
        for start in range(0, n, bs):
            idx = perm[start : start + bs] if perm is not None else slice(None)
            opt.zero_grad()
            ld = torch.mean((model(Xt[idx]) - Yt[idx]) ** 2)
            loss = ld
            lp = ll = None
            try:
                if use_p:
                    lp = residual_loss(Xc)
                    loss = loss + weights.lambda1 * lp
                if use_l:
                    ll = residual_loss(Xl)
                    loss = loss + weights.lambda2 * ll
            except NonFiniteResidual:
                # abandon the whole run: leave the model as it was handed in
                model.load_state_dict(init_state)
                raise
            if not torch.isfinite(loss):
                model.load_state_dict(best_state)
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
        with torch.no_grad():
            val = float(torch.mean((model(Xv) - Yv) ** 2)) if len(Xv) else float(ld.detach())
        report.epochs_run = epoch
        report.train_loss = float(loss.detach())
        report.val_loss = val
        if epoch == 1 or epoch % cfg.log_every == 0:
            report.history.append(
                {
                    "epoch": epoch,
                    "L_d": float(ld.detach()),
                    "L_p": float(lp.detach()) if lp is not None else None,
                    "L_l": float(ll.detach()) if ll is not None else None,
                    "val": val,
                }
            )
        if val < report.best_val_loss:
            report.best_val_loss = val
            report.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            bad_checks = 0
        else:
            bad_checks += 1
            if bad_checks >= cfg.patience:
                report.stopped_early = True
                break
    model.load_state_dict(best_state)
    report.seconds = time.perf_counter() - t0
    return report
