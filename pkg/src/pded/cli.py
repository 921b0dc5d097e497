"""Command-line interface: ``pded {simulate,discover,score,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, RunConfig
from .errors import PdedError


def _threads() -> None:
    n = os.environ.get("PDED_THREADS")
    if n:
        import torch

        torch.set_num_threads(max(1, int(n)))


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    sets = []
    for name in getattr(args, "preset", None) or []:
        if name not in PRESETS:
            raise SystemExit(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        for section, vals in PRESETS[name].items():
            sets += [f"{section}.{k}={json.dumps(v)}" for k, v in vals.items()]
    if getattr(args, "data", None):
        sets.append(f"data.path={json.dumps(str(args.data))}")
    if getattr(args, "seed", None) is not None:
        sets.append(f"seed={args.seed}")
    if getattr(args, "rounds", None) is not None:
        sets.append(f"search.rounds={args.rounds}")
    sets += getattr(args, "set", None) or []
    return cfg.with_overrides(sets)


def cmd_simulate(args) -> int:
    from .data import add_noise, generate, write_dataset

    clean = generate(args.equation)
    U = clean.values()
    data = add_noise(clean, args.sigma, args.seed)
    out = Path(args.out)
    if out.suffix not in (".csv", ".bin"):
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{args.equation}_sigma{args.sigma:g}.{'bin' if args.binary else 'csv'}"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(data, out, binary=args.binary or out.suffix == ".bin")
    resid = _residual_check(clean)
    print(f"wrote {out} ({clean.size} points, sigma={args.sigma}, std(u)={np.std(U):.4g})")
    print(f"solver residual check: relative RMS {resid:.3e}")
    return 0


def _residual_check(data) -> float:
    """Relative residual of the generating PDE under grid finite differences."""
    U = data.fields["u"]
    dx, dt = data.axes[0].step, data.axes[1].step
    ut = (U[:, 2:] - U[:, :-2]) / (2 * dt)
    ux = (U[2:] - U[:-2]) / (2 * dx)
    uxx = (U[2:] - 2 * U[1:-1] + U[:-2]) / dx**2
    u = U[1:-1]
    p = data.provenance
    gen = p.get("generator")
    if gen == "burgers":
        rhs = -u * ux + p["nu"] * uxx
    elif gen == "fisher_kpp":
        rhs = p["D"] * uxx + p["r"] * u - p["r"] / p["k"] * u**2
    else:
        rhs = p["D"] * (u * uxx + ux**2) + p["r"] * u - p["r"] / p["k"] * u**2
    r = ut[1:-1] - rhs[:, 1:-1]
    return float(np.sqrt(np.mean(r**2)) / np.sqrt(np.mean(ut[1:-1] ** 2)))


def cmd_discover(args) -> int:
    from .pipeline import run

    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run(cfg, out)
    rep = res.report
    print(f"final: {rep['final_equation']}")
    if rep.get("score"):
        s = rep["score"]
        print(f"E={s['E']}  E2={s['E2']:.4f}  TPR={s['TPR']:.3f}  L2={s['L2']:.4f}")
    print(f"report: {out / 'report.json'}")
    return 0


def cmd_score(args) -> int:
    from .equation import parse_equation
    from .metrics import score_terms
    from .pipeline import build_library

    rep = json.loads(Path(args.report).read_text())
    if not rep.get("final"):
        print("report has no final equation", file=sys.stderr)
        return 1
    lib = build_library(RunConfig.from_dict(rep["config"]))
    truth = args.truth or rep.get("truth")
    if not truth:
        print("no truth equation given", file=sys.stderr)
        return 2
    trees = []
    for text in rep["final"]["terms"]:
        (_, tree), = parse_equation(f"u_t = {text}", lib)[1]
        trees.append(tree)
    s = score_terms(trees, rep["final"]["coefficients"], truth, lib, rep.get("l2_final"))
    E = "undefined (support mismatch)" if s.E is None else f"{s.E:.3f}%"
    print(f"E = {E}")
    print(f"E2 = {s.E2:.6f}")
    print(f"TPR = {s.TPR:.6f}")
    print(f"L2 = {s.L2:.6f}" if s.L2 is not None else "L2 = n/a")
    return 0


def cmd_report(args) -> int:
    from .plots import render_all
    from .surrogate import SurrogateModel

    path = Path(args.report)
    rep = json.loads(path.read_text())
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    model = None
    ckpt = path.parent / "surrogate.json"
    if ckpt.exists():
        model = SurrogateModel.load(ckpt)
    for p in render_all(rep, out, model):
        print(f"wrote {p}")
    for r in rep.get("rounds", []):
        sel = r.get("selection")
        if not sel:
            continue
        print(f"round {r['round']}: votes")
        for k, (lab, v) in enumerate(zip(sel["labels"], sel["votes"])):
            mark = "*" if k == sel["winner"] else " "
            print(f" {mark} {v:4d}  {lab}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pded", description="Discover PDEs from noisy field data.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a dataset with noise")
    sp.add_argument("--equation", choices=["burgers", "fisher_kpp", "fisher_kpp_nonlinear"], default="burgers")
    sp.add_argument("--sigma", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--binary", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    dp = sub.add_parser("discover", help="run the discovery pipeline")
    dp.add_argument("--config")
    dp.add_argument("--data")
    dp.add_argument("--out", required=True)
    dp.add_argument("--seed", type=int)
    dp.add_argument("--rounds", type=int)
    dp.add_argument("--preset", action="append", choices=sorted(PRESETS))
    dp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. search.iterations=20")
    dp.set_defaults(func=cmd_discover)

    sc = sub.add_parser("score", help="score a report against a truth equation")
    sc.add_argument("--report", required=True)
    sc.add_argument("--truth")
    sc.set_defaults(func=cmd_score)

    rp = sub.add_parser("report", help="render plots and vote tables from a report")
    rp.add_argument("--report", required=True)
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _threads()
    try:
        return args.func(args)
    except PdedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        # bad configuration or arguments
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
