"""Run configuration: nested dataclasses with JSON round-trip and dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints


@dataclass
class DataConfig:
    equation: str = "burgers"
    path: str | None = None
    sigma: float = 0.1
    n_obs: int = 1000
    noise_seed: int = 0
    obs_seed: int = 0
    train_fraction: float = 0.8


@dataclass
class LibraryConfig:
    state_vars: list[str] = field(default_factory=lambda: ["u"])
    spatial_vars: list[str] = field(default_factory=lambda: ["x"])
    operators: list[str] = field(default_factory=lambda: ["+", "-", "*", "/", "^2", "^3"])
    derivatives: list[str] = field(default_factory=lambda: ["∂", "∂²"])
    symmetry_pairs: list[list[str]] = field(default_factory=list)


@dataclass
class SurrogateConfig:
    hidden: list[int] = field(default_factory=lambda: [50, 50, 50, 50])
    activation: str = "tanh"
    dtype: str = "float64"
    lr: float = 1e-3
    pretrain_epochs: int = 20000
    embed_epochs: int = 20000
    patience: int = 500
    batch_size: int = 4096
    full_batch_limit: int = 20000
    physics_batch: int | None = None
    lambda1: float = 0.1
    lambda2: float = 0.0
    normalize_residual: bool = True
    local_per_obs: int = 10
    max_derivative_order: int = 4


@dataclass
class SearchConfig:
    population: int = 1000
    iterations: int = 100
    rounds: int = 2
    max_length: int = 64
    max_depth: int = 4
    bank_size: int = 20
    bank_subsample: int = 10
    delta_low: float = 0.1
    delta_high: float = 0.5
    dsb_tol: float = 1e-3
    pool_fraction: float = 0.5
    use_dsb: bool = True
    epsilon: float = 0.1
    lambda_pg: float = 1.0
    policy_lr: float = 5e-4
    policy_hidden: int = 64
    n_colloc: int = 10000
    colloc_margin: float = 0.05
    # reward points need |u| above this fraction of the surrogate's max |u|
    signal_threshold: float = 0.1
    kappa: float = 1e-5
    tol: float = 0.05
    max_iters: int = 25
    zeta_terms: float = 0.01
    zeta_depth: float = 1e-4
    normalize_rmse: bool = False
    use_cache: bool = True


@dataclass
class SelectionConfig:
    top_k: int = 3
    n_subsets: int = 100
    n_subsamples: int = 10
    n_colloc: int = 10000
    redraw: bool = True
    # skip candidates whose expanded monomial support repeats a better one
    distinct: bool = True
    # refit the winner over subsets of its expanded monomials, keep the best reward
    monomial_refit: bool = True
    monomial_max: int = 8


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    library: LibraryConfig = field(default_factory=LibraryConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    seed: int = 0
    truth: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    def with_overrides(self, assignments: list[str]) -> "RunConfig":
        d = self.to_dict()
        for a in assignments:
            key, sep, raw = a.partition("=")
            if not sep:
                raise ValueError(f"override {a!r} is not key=value")
            _assign(d, key.strip(), raw.strip())
        return RunConfig.from_dict(d)


PRESETS: dict[str, dict] = {
    # sharper risk quantile: only the top 2% of each batch drives the update
    "eps002": {"search": {"epsilon": 0.02}},
}


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ValueError(f"{where or 'config'} must be an object")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown config key(s) {sorted(unknown)} in {where or 'config'}")
    kw = {}
    for f in dataclasses.fields(cls):
        if f.name not in d:
            continue
        t = hints[f.name]
        v = d[f.name]
        if dataclasses.is_dataclass(t):
            kw[f.name] = _build(t, v, f"{where}{f.name}.")
        else:
            kw[f.name] = v
    return cls(**kw)


def _assign(d: dict, dotted: str, raw: str) -> None:
    parts = dotted.split(".")
    node = d
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ValueError(f"unknown config section {p!r} in {dotted!r}")
        node = node[p]
    leaf = parts[-1]
    if leaf not in node:
        raise ValueError(f"unknown config key {dotted!r}")
    node[leaf] = _parse_value(raw)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        low = raw.lower()
        if low in ("true", "false"):
            return low == "true"
        if low in ("none", "null"):
            return None
        return raw
