"""Command-line front end.

Config files are flat ``section.key = value`` lines; ``#`` starts a comment.
Every subcommand needs ``--config``; flags override the file.

    mlenkf kalman    --config ou.cfg --out ref.csv
    mlenkf enkf      --config ou.cfg --budget 5000 --out enkf.csv
    mlenkf mlenkf    --config ou.cfg --epsilon 0.01 --seed 7 --out trace.csv
    mlenkf benchmark --config ou.cfg --out rows.csv
    mlenkf rates     --config ou.cfg --out decay.csv

Exit status: 0 success, 1 usage or config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .enkf import enkf_run
from .errors import InvalidInputError
from .harness import (BenchmarkConfig, benchmark, enkf_sizes, fmt_real, gold_standard, identity,
                      indicator, initial_law, level_decay, synthesize, write_rows_csv,
                      write_trace_csv)
from .integrate import LevelGrid
from .models import ObservationModel, gbm_model, ou_model
from .multilevel import Rates, allocate, allocate_for_budget, mlenkf_run


class ConfigError(InvalidInputError):
    pass


class UsageError(Exception):
    pass


# per-model defaults for the two built-in experiments
MODEL_DEFAULTS = {
    "ou": {"model.sigma": 0.5, "obs.gamma": 0.04, "run.epochs": 100, "hierarchy.n0": 2,
           "rates.alpha": 1.0, "rates.beta": 2.0, "rates.gamma": 1.0},
    "gbm": {"model.sigma": 0.25, "obs.gamma": 1 / 16, "run.epochs": 200, "hierarchy.n0": 8,
            "rates.alpha": 1.0, "rates.beta": 1.0, "rates.gamma": 1.0},
}

KEYS = {
    "model.type": str, "model.sigma": float,
    "obs.gamma": float, "obs.h": float,
    "run.epochs": int, "run.seed": int, "run.output": str, "run.workers": int,
    "hierarchy.n0": int, "hierarchy.nhat": int,
    "rates.alpha": float, "rates.beta": float, "rates.gamma": float,
    "allocation.epsilon": float, "allocation.budget": float, "allocation.c_m": float,
    "enkf.c_ens": float, "enkf.c_steps": float, "enkf.members": int, "enkf.level": int,
    "benchmark.budget_min": float, "benchmark.budget_max": float, "benchmark.budget_count": int,
    "benchmark.replicates": int, "benchmark.methods": str,
    "decay.samples": int, "decay.max_level": int, "decay.moments": str,
    "decay.observable": str, "decay.threshold": float,
}


@dataclass
class RunConfig:
    model: str
    sigma: float
    gamma: float
    h: float = 1.0
    epochs: int = 100
    n0: int = 2
    nhat: int = 2
    alpha: float = 1.0
    beta: float = 2.0
    gamma_rate: float = 1.0
    epsilon: float | None = None
    budget: float | None = None
    c_m: float = 1.0
    c_ens: float = 1.0
    c_steps: float = 1.0
    members: int | None = None
    enkf_level: int = 0
    seed: int = 0
    output: str | None = None
    workers: int = 1
    budget_min: float = 100.0
    budget_max: float = 100000.0
    budget_count: int = 5
    replicates: int = 10
    methods: tuple = ("enkf", "mlenkf")
    decay_samples: int = 100000
    decay_max_level: int = 6
    decay_moments: tuple = (2,)
    decay_observable: str = "identity"
    decay_threshold: float = 0.1

    def build(self):
        model = ou_model(self.sigma) if self.model == "ou" else gbm_model(self.sigma)
        obs = ObservationModel.scalar(self.gamma, self.h)
        grid = LevelGrid(self.n0, self.nhat)
        rates = Rates(self.alpha, self.beta, self.gamma_rate)
        return model, obs, grid, rates


def _convert(key: str, raw: str, lineno: int):
    kind = KEYS[key]
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects {kind.__name__}, got {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a flat key/value config document."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not raw:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        values[key] = _convert(key, raw, lineno)

    if "model.type" not in values:
        raise ConfigError("missing required key 'model.type'")
    kind = values["model.type"].lower()
    if kind not in MODEL_DEFAULTS:
        raise ConfigError(f"model.type must be 'ou' or 'gbm', got {values['model.type']!r}")
    merged = {**MODEL_DEFAULTS[kind], **values}

    def get(key, default=None):
        return merged.get(key, default)

    cfg = RunConfig(
        model=kind, sigma=get("model.sigma"), gamma=get("obs.gamma"), h=get("obs.h", 1.0),
        epochs=get("run.epochs"), n0=get("hierarchy.n0"), nhat=get("hierarchy.nhat", 2),
        alpha=get("rates.alpha"), beta=get("rates.beta"), gamma_rate=get("rates.gamma"),
        epsilon=get("allocation.epsilon"), budget=get("allocation.budget"),
        c_m=get("allocation.c_m", 1.0), c_ens=get("enkf.c_ens", 1.0),
        c_steps=get("enkf.c_steps", 1.0), members=get("enkf.members"),
        enkf_level=get("enkf.level", 0), seed=get("run.seed", 0), output=get("run.output"),
        workers=get("run.workers", 1), budget_min=get("benchmark.budget_min", 100.0),
        budget_max=get("benchmark.budget_max", 100000.0),
        budget_count=get("benchmark.budget_count", 5),
        replicates=get("benchmark.replicates", 10),
        methods=tuple(m.strip() for m in get("benchmark.methods", "enkf,mlenkf").split(",")),
        decay_samples=get("decay.samples", 100000), decay_max_level=get("decay.max_level", 6),
        decay_moments=tuple(int(p) for p in str(get("decay.moments", "2")).split(",")),
        decay_observable=get("decay.observable", "identity"),
        decay_threshold=get("decay.threshold", 0.1),
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    checks = [
        ("model.sigma", cfg.sigma > 0), ("obs.gamma", cfg.gamma > 0),
        ("run.epochs", cfg.epochs >= 0), ("hierarchy.n0", cfg.n0 >= 1),
        ("hierarchy.nhat", cfg.nhat >= 2), ("rates.alpha", cfg.alpha > 0),
        ("rates.beta", cfg.beta > 0), ("rates.gamma", cfg.gamma_rate > 0),
        ("rates.alpha", cfg.alpha >= min(cfg.beta, cfg.gamma_rate) / 2),
        ("allocation.epsilon", cfg.epsilon is None or cfg.epsilon > 0),
        ("allocation.budget", cfg.budget is None or cfg.budget > 0),
        ("allocation.c_m", cfg.c_m > 0), ("enkf.c_ens", cfg.c_ens > 0),
        ("enkf.c_steps", cfg.c_steps > 0), ("enkf.members", cfg.members is None or cfg.members >= 1),
        ("enkf.level", cfg.enkf_level >= 0), ("run.seed", 0 <= cfg.seed < 2**64),
        ("run.workers", cfg.workers >= 1), ("benchmark.budget_min", cfg.budget_min > 0),
        ("benchmark.budget_max", cfg.budget_max >= cfg.budget_min),
        ("benchmark.budget_count", cfg.budget_count >= 1),
        ("benchmark.replicates", cfg.replicates >= 1),
        ("benchmark.methods", bool(cfg.methods) and set(cfg.methods) <= {"enkf", "mlenkf"}),
        ("decay.samples", cfg.decay_samples >= 2), ("decay.max_level", cfg.decay_max_level >= 2),
        ("decay.moments", all(p >= 1 for p in cfg.decay_moments)),
        ("decay.observable", cfg.decay_observable in ("identity", "indicator")),
    ]
    for key, ok in checks:
        if not ok:
            raise ConfigError(f"invalid value for {key}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlenkf", description="Multilevel ensemble Kalman filtering experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    helps = {
        "kalman": "exact Kalman filter trace (reference)",
        "enkf": "single-level EnKF trace",
        "mlenkf": "multilevel EnKF trace",
        "benchmark": "cost-vs-error sweep, one CSV row per (method, budget, seed)",
        "rates": "level-difference decay estimates",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="flat key/value config file")
        p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
        p.add_argument("--out", help="output CSV path (default: run.output or stdout)")
        p.add_argument("--budget", type=float, help="substep budget per epoch")
        p.add_argument("--epsilon", type=float, help="target accuracy (mlenkf)")
        p.add_argument("--manifest", help="write a JSON run manifest here")
        p.add_argument("--no-wall-time", action="store_true",
                       help="write 0 for wall_seconds so benchmark output is reproducible")
    return parser


def _emit(text: str, path: str | None):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _run(args, cfg: RunConfig) -> tuple[str, dict]:
    model, obs, grid, rates = cfg.build()
    extra: dict = {}
    if args.command == "rates":
        phi = identity if cfg.decay_observable == "identity" else indicator(cfg.decay_threshold)
        est = level_decay(model, grid, phi, cfg.decay_max_level, cfg.decay_samples,
                          cfg.decay_moments, seed=cfg.seed)
        lines = ["level,steps,weak," + ",".join(f"strong_p{p}" for p in cfg.decay_moments)]
        for i, level in enumerate(est.levels):
            row = [str(int(level)), str(int(est.steps[i])), fmt_real(est.weak[i])]
            row += [fmt_real(est.strong[p][i]) for p in cfg.decay_moments]
            lines.append(",".join(row))
        extra["alpha_hat"] = est.alpha
        extra["beta_hat"] = {str(p): b for p, b in est.beta.items()}
        print(f"alpha_hat={est.alpha:.4f} " +
              " ".join(f"beta_hat(p={p})={b:.4f}" for p, b in est.beta.items()), file=sys.stderr)
        return "\n".join(lines) + "\n", extra

    if args.command == "benchmark":
        budgets = np.geomspace(cfg.budget_min, cfg.budget_max, cfg.budget_count)
        bcfg = BenchmarkConfig(model, obs, cfg.epochs, grid, rates, list(budgets),
                               [cfg.seed + r for r in range(cfg.replicates)], data_seed=cfg.seed,
                               c_m=cfg.c_m, c_ens=cfg.c_ens, c_steps=cfg.c_steps,
                               methods=cfg.methods, workers=cfg.workers)
        rows = benchmark(bcfg)
        if args.no_wall_time:
            for r in rows:
                r.wall_seconds = 0.0
        return write_rows_csv(rows), extra

    _, ys = synthesize(model, obs, cfg.epochs, cfg.seed)
    init = initial_law(model)
    if args.command == "kalman":
        return write_trace_csv(gold_standard(model, obs, ys)), extra
    if args.command == "enkf":
        if cfg.budget is not None:
            M, steps = enkf_sizes(cfg.budget, cfg.c_ens, cfg.c_steps)
            egrid, level = LevelGrid(steps, cfg.nhat), 0
        elif cfg.members is not None:
            M, egrid, level = cfg.members, grid, cfg.enkf_level
        else:
            raise ConfigError("enkf needs --budget / allocation.budget or enkf.members")
        trace = enkf_run(M, level, model, egrid, obs, ys, init, cfg.seed, workers=cfg.workers)
        extra.update(members=M, steps=egrid.steps(level), substeps=trace.cost.substeps)
        return write_trace_csv(trace), extra
    # mlenkf
    if (cfg.epsilon is None) == (cfg.budget is None):
        raise ConfigError("mlenkf needs exactly one of epsilon or budget")
    if cfg.epsilon is not None:
        alloc = allocate(cfg.epsilon, rates, grid, cfg.c_m)
    else:
        alloc = allocate_for_budget(cfg.budget, rates, grid, cfg.c_m)
    trace = mlenkf_run(alloc, model, grid, obs, ys, init, cfg.seed, workers=cfg.workers)
    extra.update(L=alloc.L, m_per_level=list(alloc.m_per_level), substeps=trace.cost.substeps)
    return write_trace_csv(trace), extra


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
        if args.seed is not None:
            cfg.seed = args.seed
        if args.budget is not None:
            cfg.budget = args.budget
            if args.epsilon is None:
                cfg.epsilon = None
        if args.epsilon is not None:
            cfg.epsilon = args.epsilon
            if args.budget is None:
                cfg.budget = None
        validate(cfg)
    except (UsageError, ConfigError, OSError) as exc:
        print(f"mlenkf: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        text, extra = _run(args, cfg)
    except ConfigError as exc:
        print(f"mlenkf: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported, mapped to exit status 2
        print(f"mlenkf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfg.output
    _emit(text, out)
    if args.manifest:
        manifest = {"version": __version__, "command": args.command,
                    "config": asdict(cfg), "result": extra}
        Path(args.manifest).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=list)
                                       + "\n", encoding="utf-8")
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
