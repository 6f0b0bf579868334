"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric
divergence (or a failed gradient check), 3 infeasible evaluation result.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .adversary import Generator
from .config import KEY_DOCS, REQUIRED, ConfigError, TrainConfig, load_config, parse_pairs, stream
from .evaluation import (
    EvalReport,
    attach_grid_audit,
    build_test_set,
    compare_with_baselines,
    evaluate,
    format_table,
    write_report,
)
from .hnet import NeuralRedistribution
from .neuralnet import CheckpointError, DivergenceError, load_checkpoint, random_gradient_suite
from .priors import parse_prior
from .training import contrast, train

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_INFEASIBLE = 0, 1, 2, 3

CONFIG_KEYS = [f.name for f in fields(TrainConfig)]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="key = value config file (flags override it)")
    p.add_argument("--out", help="run directory")
    group = p.add_argument_group("config keys")
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    for key in CONFIG_KEYS:
        default = defaults[key]
        shown = "" if default is dataclasses.MISSING else f" [{default}]"
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="V", help=KEY_DOCS[key] + shown)


def _config_from_args(args) -> TrainConfig:
    overrides = {k: getattr(args, f"cfg_{k}") for k in CONFIG_KEYS if getattr(args, f"cfg_{k}") is not None}
    if args.config:
        return load_config(args.config, overrides)
    values = parse_pairs(overrides)
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required config key '{key}'")
    return TrainConfig(**values)


def _run_dir(args, cfg: TrainConfig, kind: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path("runs") / f"{kind}_{cfg.objective}_n{cfg.n}_seed{cfg.seed}"


# -- commands -------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = _run_dir(args, cfg, "train")
    report = train(cfg, out)
    ev = report.final_eval
    print(f"run directory: {out}")
    print(
        f"steps={report.steps_run} alpha={ev['alpha_estimate']:.4f} "
        f"violations={ev['violation_count']} E={ev['expectation_estimate']:.4f}"
    )
    return EXIT_OK


def _load_model(path: Path):
    params, meta = load_checkpoint(path)
    if meta.get("role", "model") != "model":
        raise CheckpointError(f"{path} holds a {meta.get('role')} network, not an h-network")
    for key in ("n", "features"):
        if key not in meta:
            raise CheckpointError(f"{path}: metadata lacks '{key}'")
    h = NeuralRedistribution(params, int(meta["n"]), meta["features"], int(meta.get("top_k", 1)))
    return h, meta


def _load_generators(paths, n: int) -> list[Generator]:
    gens = []
    for p in paths:
        params, meta = load_checkpoint(p)
        if params.layer_sizes[0] != n or params.layer_sizes[-1] != n:
            raise CheckpointError(f"{p}: generator for n={params.layer_sizes[-1]} cannot audit n={n}")
        gens.append(Generator(params, n))
    return gens


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    h, meta = _load_model(ckpt)
    n = h.n
    if args.n is not None and args.n != n:
        raise ConfigError(f"--n {args.n} does not match checkpoint arity n={n}")
    if args.no_generator:
        gen_paths = []
    elif args.generator:
        gen_paths = [Path(p) for p in args.generator]
    else:
        gen_paths = sorted(ckpt.parent.glob("adversary_*.npz"))
    gens = _load_generators(gen_paths, n) or None
    priors = args.prior or [meta.get("prior", "uniform")]
    objective = meta.get("objective", "worstcase")
    out = Path(args.out) if args.out else ckpt.parent / "eval"
    infeasible = False
    for prior_text in priors:
        prior = parse_prior(prior_text)
        size = args.size
        if size is None and objective == "expectation":
            size = 20_000
        rng = stream(args.seed if args.seed is not None else int(meta.get("seed", 0)), "eval")
        test = build_test_set(n, prior, gens, size, rng)
        report = evaluate(h, test, n, args.tolerance, bins=args.bins, workers=args.workers)
        if args.grid_step:
            attach_grid_audit(report, h, args.grid_step, args.workers)
        stem = args.stem if len(priors) == 1 else f"{args.stem}_{prior_text.replace(':', '_')}"
        write_report(report, out, stem, objective)
        line = report.summary()
        if report.grid_alpha is not None:
            line += f" grid_alpha={report.grid_alpha:.4f}"
        print(f"[{prior_text}] {line}" if len(priors) > 1 else line)
        infeasible |= not report.feasible
    return EXIT_INFEASIBLE if infeasible else EXIT_OK


def _report_from_json(path) -> EvalReport:
    data = json.loads(Path(path).read_text())
    known = {f.name for f in fields(EvalReport)}
    return EvalReport(**{k: v for k, v in data.items() if k in known})


def cmd_compare(args) -> int:
    if args.reports:
        for path in args.reports:
            report = _report_from_json(path)
            print(format_table(compare_with_baselines(report, report.n, args.objective), report.n))
        return EXIT_OK
    ns = [args.n] if args.n is not None else None
    from .evaluation import EXPECTATION_BASELINES, WORST_CASE_BASELINES

    table = WORST_CASE_BASELINES if args.objective == "worstcase" else EXPECTATION_BASELINES
    for n in ns or sorted(table):
        print(format_table(compare_with_baselines(None, n, args.objective), n))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    gens = _load_generators([Path(p) for p in args.generator or []], args.n) or None
    profiles = build_test_set(args.n, parse_prior(args.prior), gens, args.size, stream(args.seed, "eval"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(f"theta_{i}" for i in range(args.n))
    np.savetxt(out, profiles, delimiter=",", header=header, comments="", fmt="%.17g")
    print(f"wrote {len(profiles)} profiles to {out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    err = random_gradient_suite(args.nets, args.inputs, args.seed)
    ok = err < args.threshold
    print(f"max relative error {err:.3e} over {args.nets} nets x {args.inputs} inputs: {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_DIVERGED


def cmd_contrast(args) -> int:
    cfg = _config_from_args(args)
    out = _run_dir(args, cfg, "contrast")
    rep = contrast(cfg, out, audit_steps=args.audit_steps, set_size=args.set_size)
    print(rep.table(), end="")
    print(f"min ratio drop A-B: {rep.drop:.4f}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="redistnet", description="Neural VCG redistribution for the public project problem.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train an h-network from a config")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="audit a saved h-network")
    e.add_argument("checkpoint")
    e.add_argument("--generator", action="append", help="adversary checkpoint (repeatable)")
    e.add_argument("--no-generator", action="store_true", help="prior samples only")
    e.add_argument("--size", type=int, help="test-set size (default: per-n table or 20000)")
    e.add_argument("--tolerance", type=float, default=1e-3, help="violation tolerance relative to n-1")
    e.add_argument("--prior", action="append", help="prior for random profiles (repeatable)")
    e.add_argument("--n", type=int, help="expected arity, checked against the checkpoint")
    e.add_argument("--seed", type=int, help="test-set seed (default: training seed)")
    e.add_argument("--bins", type=int, default=500)
    e.add_argument("--grid-step", type=float, help="also audit every sorted lattice profile")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", help="report directory (default: <checkpoint dir>/eval)")
    e.add_argument("--stem", default="eval")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="print published baselines, optionally beside saved reports")
    c.add_argument("reports", nargs="*", help="report JSON files")
    c.add_argument("--objective", choices=("worstcase", "expectation"), default="worstcase")
    c.add_argument("--n", type=int)
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gen-data", help="write a test set as CSV")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--prior", default="uniform")
    g.add_argument("--size", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--generator", action="append")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    gc = sub.add_parser("grad-check", help="compare backprop with finite differences")
    gc.add_argument("--nets", type=int, default=20)
    gc.add_argument("--inputs", type=int, default=10)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--threshold", type=float, default=1e-4)
    gc.set_defaults(func=cmd_grad_check)

    k = sub.add_parser("contrast", help="train without adversary, then audit with one")
    _add_config_flags(k)
    k.add_argument("--audit-steps", type=int, default=2000, help="Adam steps per audit generator")
    k.add_argument("--set-size", type=int, default=20_000)
    k.set_defaults(func=cmd_contrast)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except (ConfigError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, FloatingPointError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
