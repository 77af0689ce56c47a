"""Command-line entry point: train, bench, eval, score and predict.

Configuration is a flat key=value space resolved in layers: named preset,
then optional config file, then repeated --set overrides, then the dedicated
flags (--seed, --mode, --workers, --steps, --trials). Unknown keys are
errors. Every artifact the commands write embeds the fully resolved
configuration and master seed, so any result is reproducible from its own
header. All randomness flows from the seed key; nothing is ever seeded from
the wall clock.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .agent import EpsilonSchedule, HyperParams, MODES
from .envs import evaluate_policy, make_env
from .executor import run
from .harness import (
    TimingModel,
    ablation_grid,
    load_score_csv,
    measure_timing_model,
    predict_runtime,
    render_derived_table,
    render_runtime_table,
    render_score_table,
    round_half_up,
    score_report,
    to_factor,
    to_percent,
)
from .nn import OptConfig, load_parameters, save_parameters


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in str(text).split(",") if part != ""]


# key -> parser; this is the whole configuration surface
KEY_SCHEMA = {
    "mode": str,
    "workers": int,
    "C": int,
    "F": int,
    "N": int,
    "capacity": int,
    "total_steps": int,
    "batch_size": int,
    "gamma": float,
    "eval_period": int,
    "eval_episodes": int,
    "eval_epsilon": float,
    "eps_start": float,
    "eps_end": float,
    "eps_anneal": int,
    "lr": float,
    "rho": float,
    "kappa": float,
    "seed": int,
    "env": str,
    "hidden": int,
    "latency_us": float,
    "episode_length": int,
    "state_dim": int,
    "action_count": int,
    "trials": int,
    "worker_counts": _parse_int_list,
    "extrapolate": float,
    "t_env_us": float,
    "t_inf_us": float,
    "t_train_us": float,
    "t_binf_row_us": float,
    "contention": float,
}

_DESK = {
    "mode": "both",
    "workers": 4,
    "C": 500,
    "F": 4,
    "N": 500,
    "capacity": 10_000,
    "total_steps": 200_000,
    "batch_size": 32,
    "gamma": 0.99,
    "eval_period": 10_000,
    "eval_episodes": 30,
    "eval_epsilon": 0.05,
    "eps_start": 1.0,
    "eps_end": 0.1,
    "eps_anneal": 4_000,
    "lr": 2.5e-4,
    "rho": 0.95,
    "kappa": 0.01,
    "seed": 0,
    "env": "gridworld",
    "hidden": 32,
    "latency_us": 250.0,
    "episode_length": 200,
    "state_dim": 32,
    "action_count": 4,
    "trials": 5,
    "worker_counts": [1, 2, 4, 8],
    "extrapolate": 0.0,
    "t_env_us": 0.0,
    "t_inf_us": 0.0,
    "t_train_us": 0.0,
    "t_binf_row_us": 0.0,
    "contention": 0.0,
}

PRESETS = {
    "desk": _DESK,
    "atari-paper": {
        **_DESK,
        "C": 10_000,
        "workers": 8,
        "N": 50_000,
        "capacity": 1_000_000,
        "total_steps": 50_000_000,
        "eval_period": 250_000,
        "eps_anneal": 1_000_000,
    },
}


class ConfigError(Exception):
    pass


@dataclass
class Config:
    values: dict

    @property
    def hp(self) -> HyperParams:
        v = self.values
        hp = HyperParams(
            C=v["C"],
            F=v["F"],
            gamma=v["gamma"],
            N=v["N"],
            W=v["workers"],
            batch_size=v["batch_size"],
            concurrent=v["mode"] in ("concurrent", "both"),
            synchronized=v["mode"] in ("synchronized", "both"),
            total_steps=v["total_steps"],
            eval_period=v["eval_period"],
            eval_episodes=v["eval_episodes"],
            eval_epsilon=v["eval_epsilon"],
            schedule=EpsilonSchedule(v["eps_start"], v["eps_end"], v["eps_anneal"]),
            opt=OptConfig(v["lr"], v["rho"], v["kappa"]),
            capacity=v["capacity"],
            seed=v["seed"],
            env=v["env"],
            hidden=v["hidden"],
            latency_s=v["latency_us"] * 1e-6,
            episode_length=v["episode_length"],
            state_dim=v["state_dim"],
            action_count=v["action_count"],
        )
        return hp


def _apply_pair(values: dict, key: str, raw, source: str) -> None:
    if key not in KEY_SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r} (from {source})")
    try:
        values[key] = KEY_SCHEMA[key](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse {key}={raw!r} (from {source}): {exc}") from exc


def parse_config(
    preset: str,
    file: str | None = None,
    overrides: list[str] | None = None,
    base_overrides: dict | None = None,
) -> Config:
    """Merge preset < command defaults < config file < --set pairs.

    Deterministic: the same inputs always resolve to the same Config. Raises
    ConfigError naming the offending key or the violated invariant.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (have: {', '.join(sorted(PRESETS))})")
    values = dict(PRESETS[preset])
    for key, raw in (base_overrides or {}).items():
        _apply_pair(values, key, raw, "command defaults")
    if file:
        path = Path(file)
        if not path.exists():
            raise ConfigError(f"config file not found: {file}")
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{file}:{lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            _apply_pair(values, key, raw, f"{file}:{lineno}")
    for pair in overrides or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = (part.strip() for part in pair.split("=", 1))
        _apply_pair(values, key, raw, "--set")
    if values["mode"] not in MODES:
        raise ConfigError(f"unknown mode {values['mode']!r} (expected one of {MODES})")
    cfg = Config(values)
    try:
        cfg.hp.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _config_header(cfg: Config) -> str:
    lines = [f"# config {k}={_fmt_value(cfg.values[k])}" for k in sorted(cfg.values)]
    return "\n".join(lines) + "\n"


def _fmt_value(v) -> str:
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _write_or_print(text: str, out_dir: Path | None, filename: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / filename).write_text(text)
        print(f"wrote {out_dir / filename}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(cfg: Config, args) -> int:
    hp = cfg.hp
    record = run(hp)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        record.write_csv(out / "run.csv")
        save_parameters(out / "final.params", record.final_params)
        print(f"wrote {out / 'run.csv'}")
        print(f"wrote {out / 'final.params'}")
    summary = [
        f"mode={record.mode} workers={hp.W} steps={hp.total_steps} seed={hp.seed}",
        f"final_theta_hash={record.final_hash}",
        f"episodes={len(record.episodes)} evals={len(record.evals)}",
        f"duration_s={record.duration_s:.3f}",
    ]
    if record.evals:
        step, mean, std = record.evals[-1]
        summary.append(f"last_eval step={step} mean={mean:.4f} std={std:.4f}")
    print("\n".join(summary))
    return 0


def cmd_bench(cfg: Config, args) -> int:
    hp = cfg.hp
    counts = cfg.values["worker_counts"]
    trials = cfg.values["trials"]
    extrap = cfg.values["extrapolate"] or None
    table = ablation_grid(hp, counts, trials)
    header = _config_header(cfg)
    runtime_txt = render_runtime_table(table, args.format, extrap)
    percent_txt = render_derived_table(to_percent(table), counts, "percent", args.format)
    factor_txt = render_derived_table(to_factor(table), counts, "factor", args.format)
    out_dir = Path(args.out) if args.out else None
    _write_or_print(header + runtime_txt, out_dir, f"runtimes.{args.format}")
    _write_or_print(header + percent_txt, out_dir, f"percent.{args.format}")
    _write_or_print(header + factor_txt, out_dir, f"factor.{args.format}")
    return 0


def cmd_eval(cfg: Config, args) -> int:
    hp = cfg.hp
    params = load_parameters(args.params)
    env = make_env(
        hp.env,
        {
            "latency_s": hp.latency_s,
            "episode_length": hp.episode_length,
            "state_dim": hp.state_dim,
            "action_count": hp.action_count,
        },
    )
    mean, std = evaluate_policy(env, params, hp.eval_epsilon, hp.eval_episodes, hp.seed)
    print(
        f"episodes={hp.eval_episodes} epsilon={hp.eval_epsilon} "
        f"mean={mean:.4f} std={std:.4f}"
    )
    return 0


def shipped_scores_path():
    return resources.files("paraq") / "data" / "atari_scores.csv"


def cmd_score(cfg: Config, args) -> int:
    path = args.scores or shipped_scores_path()
    games = load_score_csv(path)
    report = score_report(games)
    text = render_score_table(report, args.format)
    out_dir = Path(args.out) if args.out else None
    _write_or_print(_config_header(cfg) + text, out_dir, f"scores.{args.format}")
    for line in report.printed_mismatches:
        print(f"warning: printed normalized score mismatch: {line}", file=sys.stderr)
    return 0


def cmd_predict(cfg: Config, args) -> int:
    v = cfg.values
    supplied = [v["t_env_us"], v["t_inf_us"], v["t_train_us"], v["t_binf_row_us"]]
    hp = cfg.hp
    if all(x > 0 for x in supplied):
        model = TimingModel(
            t_env=v["t_env_us"] * 1e-6,
            t_inf=v["t_inf_us"] * 1e-6,
            t_train=v["t_train_us"] * 1e-6,
            t_binf_row=v["t_binf_row_us"] * 1e-6,
            contention_coef=v["contention"],
        )
        source = "supplied"
    else:
        model = measure_timing_model(hp)
        model.contention_coef = v["contention"]
        source = "measured"
    print(
        f"# timing model ({source}): t_env={model.t_env * 1e6:.1f}us "
        f"t_inf={model.t_inf * 1e6:.1f}us t_train={model.t_train * 1e6:.1f}us "
        f"t_binf_row={model.t_binf_row * 1e6:.2f}us contention={model.contention_coef:g}"
    )
    counts = v["worker_counts"]
    predictions = {}
    for w in sorted(counts):
        for mode in MODES:
            if w == 1 and mode in ("synchronized", "both"):
                continue
            predictions[(mode, w)] = predict_runtime(model, hp.with_mode(mode, w))
    base = predictions[("standard", 1)]
    lines = [["Threads"] + [m.capitalize() for m in MODES]]
    for w in sorted(counts):
        row = [str(w)]
        for mode in MODES:
            if w == 1 and mode in ("synchronized", "both"):
                row.append("---")
            else:
                sec = predictions[(mode, w)]
                row.append(f"{sec * 1e3:.2f}ms ({round_half_up(100 * sec / base, 1):.1f}%)")
        lines.append(row)
    widths = [max(len(r[i]) for r in lines) for i in range(len(lines[0]))]
    for row in lines:
        print("  ".join(c.ljust(wd) for c, wd in zip(row, widths)).rstrip())
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paraq")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--preset", default="desk", help="named preset (desk, atari-paper)")
        p.add_argument("--config", default=None, help="plain key=value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one configuration key (repeatable)",
        )
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mode", choices=MODES, default=None)
        p.add_argument("--workers", default=None, help="sampler count (bench: comma list)")
        p.add_argument("--steps", type=int, default=None, help="total training steps")
        p.add_argument("--trials", type=int, default=None, help="benchmark trials per cell")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=("csv", "markdown"), default="markdown")

    p_train = sub.add_parser("train", help="run one training configuration")
    add_common(p_train)
    p_bench = sub.add_parser("bench", help="run the mode x workers ablation grid")
    add_common(p_bench)
    p_eval = sub.add_parser("eval", help="evaluate a saved parameter file")
    p_eval.add_argument("params", help="parameter file written by train")
    add_common(p_eval)
    p_score = sub.add_parser("score", help="human-normalized score report")
    p_score.add_argument("scores", nargs="?", default=None, help="score CSV (default: shipped table)")
    add_common(p_score)
    p_predict = sub.add_parser("predict", help="analytical epoch-runtime prediction")
    add_common(p_predict)
    return parser


def _flag_overrides(args) -> list[str]:
    pairs = []
    if args.seed is not None:
        pairs.append(f"seed={args.seed}")
    if args.mode is not None:
        pairs.append(f"mode={args.mode}")
    if args.workers is not None:
        if args.command == "bench" or "," in str(args.workers):
            pairs.append(f"worker_counts={args.workers}")
        else:
            pairs.append(f"workers={args.workers}")
    if args.steps is not None:
        pairs.append(f"total_steps={args.steps}")
    if args.trials is not None:
        pairs.append(f"trials={args.trials}")
    return pairs


_COMMAND_DEFAULTS = {
    # speed tests run the zero-reward latency env with a fixed exploration
    # rate and no mid-run evaluation
    "bench": {"env": "synthetic", "eps_start": 0.1, "eps_end": 0.1, "eval_period": 0},
    "predict": {"env": "synthetic"},
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(
            args.preset,
            args.config,
            list(args.overrides) + _flag_overrides(args),
            base_overrides=_COMMAND_DEFAULTS.get(args.command),
        )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handlers = {
        "train": cmd_train,
        "bench": cmd_bench,
        "eval": cmd_eval,
        "score": cmd_score,
        "predict": cmd_predict,
    }
    try:
        return handlers[args.command](cfg, args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
