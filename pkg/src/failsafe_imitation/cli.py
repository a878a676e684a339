"""Command-line entry point: ``failsafe-imitation <subcommand>``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from importlib import resources
from pathlib import Path

from .compounding import SWEEP_COLUMNS, sweep
from .diagnostics import density_check
from .fallback import SafetyOptions
from .geometry import GridPartition
from .rollout import MODES, PolicyConfig, evaluate
from .safe_set import EXTREMAL, LIPSCHITZ, default_gamma, infer_safe_set
from .scenario_io import ConfigError, ScenarioParseError, ingest_csv, load_scenario

CONFIG_ENV = "FAILSAFE_IMITATION_CONFIG"
BUNDLED = ("empty_road", "adversarial", "toy_highd")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def bundled_path(name: str) -> Path:
    ext = ".csv" if name == "toy_highd" else ".json"
    return Path(str(resources.files("failsafe_imitation") / "data" / f"{name}{ext}"))


def resolve_scenarios(source: str, sidecar: str | None = None) -> list:
    """``source`` is a file path or a bundled name; CSV files need a sidecar
    (default: same stem with ``.json``)."""
    path = bundled_path(source) if source in BUNDLED else Path(source)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {source}")
    if path.suffix.lower() == ".csv":
        side = Path(sidecar) if sidecar else path.with_suffix(".json")
        if not side.exists():
            raise ConfigError(f"sidecar config not found: {side}")
        try:
            cfg = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{side}: line {exc.lineno}: {exc.msg}") from exc
        return ingest_csv(path, cfg)
    return [load_scenario(path)]


def parse_grid(text: str) -> tuple:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"grid must look like 10x10, got {text!r}") from None
    if nx < 1 or ny < 1:
        raise UsageError("grid sizes must be positive")
    return nx, ny


def load_policy_config(path: str | None) -> PolicyConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PolicyConfig()
    try:
        return PolicyConfig.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc


def _dump(obj, out: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_certify(args) -> int:
    scenarios = resolve_scenarios(args.scenario, args.sidecar)
    if not 0 <= args.window < len(scenarios):
        raise UsageError(f"--window {args.window} out of range (0..{len(scenarios) - 1})")
    sc = scenarios[args.window]
    if not 1 <= args.stage < sc.horizon:
        raise UsageError(f"--stage must lie in 1..{sc.horizon - 1}")
    grid = GridPartition(sc.action_box, *parse_grid(args.grid))
    mode = {"L": LIPSCHITZ, "E": EXTREMAL}[args.mode]
    gamma = args.gamma
    if mode == LIPSCHITZ and gamma is None:
        gamma = default_gamma(sc, args.stage, args.gamma_rule)
    if gamma is not None and gamma <= 0:
        raise UsageError("--gamma must be positive")
    ss = infer_safe_set(sc, args.stage, grid, mode, gamma, SafetyOptions())
    out = ss.to_dict()
    out["scenario"] = sc.name
    out["stage"] = args.stage
    out["heuristic"] = mode == EXTREMAL
    _dump(out, args.out)
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = load_policy_config(args.config)
    overrides = {}
    if args.gamma_rule:
        overrides["gamma_rule"] = args.gamma_rule
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
    if args.log_std is not None:
        overrides["log_std"] = (args.log_std, args.log_std)
    if args.mean_source:
        overrides["mean_source"] = args.mean_source
    if args.grid:
        overrides["grid"] = parse_grid(args.grid)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    scenarios = resolve_scenarios(args.scenario, args.sidecar)
    seeds = range(args.seed_start, args.seed_start + args.seeds)
    res = evaluate(scenarios, cfg, args.mode, seeds)
    out = {
        "mode": args.mode,
        "config": cfg.to_dict(),
        "seeds": [seeds.start, seeds.stop - 1],
        "scenarios": [s.name for s in scenarios],
        "skippedInitiallyUnsafe": res["skipped"],
        "metrics": res["metrics"].to_dict(),
    }
    if not args.summary_only:
        out["records"] = [r.to_dict() for r in res["records"]]
    _dump(out, args.out)
    return EXIT_OK


def cmd_mdp_bounds(args) -> int:
    try:
        deltas = [float(v) for v in args.deltas.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--deltas must be a comma-separated list of numbers, got {args.deltas!r}") from None
    if args.tmax < 2 or not deltas or any(not 0 <= d <= 1 for d in deltas):
        raise UsageError("need --tmax >= 2 and deltas in [0, 1]")
    rows = sweep(range(2, args.tmax + 1), deltas)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_density_check(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    _dump(density_check(args.seed, args.trials, parse_grid(args.grid), args.points, args.samples), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="failsafe-imitation", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("certify", help="infer the certified safe cells of the action grid")
    c.add_argument("--scenario", required=True, help=f"JSON/CSV path or one of {', '.join(BUNDLED)}")
    c.add_argument("--sidecar", help="sidecar config for CSV input")
    c.add_argument("--window", type=int, default=0, help="scenario index for multi-window CSV input")
    c.add_argument("--mode", choices=("L", "E"), default="L")
    c.add_argument("--grid", default="10x10")
    c.add_argument("--gamma", type=float, help="Lipschitz constant (L mode); default from --gamma-rule")
    c.add_argument("--gamma-rule", choices=("zoh", "fallback"), default="zoh")
    c.add_argument("--stage", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_certify)

    r = sub.add_parser("rollout", help="open-loop replay rollouts and metrics")
    r.add_argument("--scenario", required=True)
    r.add_argument("--sidecar")
    r.add_argument("--mode", choices=MODES, default="safe-L")
    r.add_argument("--seeds", type=int, default=10, help="number of seeds")
    r.add_argument("--seed-start", type=int, default=0)
    r.add_argument("--config", help=f"policy config JSON (default: ${CONFIG_ENV})")
    r.add_argument("--gamma-rule", choices=("zoh", "fallback"))
    r.add_argument("--gamma", type=float)
    r.add_argument("--log-std", type=float, help="pre-squash log standard deviation (both axes)")
    r.add_argument("--mean-source", choices=("reference", "constant"))
    r.add_argument("--grid")
    r.add_argument("--summary-only", action="store_true", help="omit per-stage records")
    r.add_argument("--out")
    r.set_defaults(func=cmd_rollout)

    m = sub.add_parser("mdp-bounds", help="exact compounding-error sweep as CSV")
    m.add_argument("--tmax", type=int, default=100)
    m.add_argument("--deltas", default="0.01,0.02,0.05,0.1")
    m.add_argument("--out")
    m.set_defaults(func=cmd_mdp_bounds)

    d = sub.add_parser("density-check", help="normalization, sampling and gradient report")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--trials", type=int, default=20)
    d.add_argument("--grid", default="10x10")
    d.add_argument("--points", type=int, default=5, help="gradient check points per trial")
    d.add_argument("--samples", type=int, default=0, help="samples per trial for the histogram check")
    d.add_argument("--out")
    d.set_defaults(func=cmd_density_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"failsafe-imitation: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioParseError, ConfigError) as exc:
        print(f"failsafe-imitation: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
