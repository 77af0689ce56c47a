"""Benchmark and analysis layer.

Covers the mode x worker-count ablation grid with multi-trial wall-clock
statistics, the percent/speedup table derivations, an analytical runtime
predictor for one epoch, and human-normalized score reporting.

The harness itself is single-lane: benchmark trials run strictly one after
another so timing measurements never contaminate each other.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .agent import MODES, HyperParams, train_minibatch
from .envs import SyntheticLatencyEnv
from .executor import ROLE_BENCH, InferenceWorker, derived_seed, run
from .nn import OptState, init_network
from .replay import Transition

HUMAN_LEVEL_THRESHOLD = 75.0
PRINTED_NORM_TOLERANCE = 0.05


def round_half_up(x: float, decimals: int) -> float:
    """Conventional display rounding (0.5 always rounds away from zero)."""
    from decimal import ROUND_HALF_UP, Decimal

    q = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# runtime measurement


@dataclass
class RuntimeStats:
    """Wall-clock statistics for one algorithmic variant."""

    label: str
    trials: list[float]
    single_trial: bool = False

    @property
    def mean(self) -> float:
        return statistics.fmean(self.trials)

    @property
    def std(self) -> float:
        # sample (n-1) convention; a single trial reports 0 and is flagged
        if len(self.trials) < 2:
            return 0.0
        return statistics.stdev(self.trials)

    @classmethod
    def from_trials(cls, label: str, trials: list[float]) -> "RuntimeStats":
        return cls(label, list(trials), single_trial=len(trials) == 1)


@dataclass
class RuntimeTable:
    """Grid of RuntimeStats over modes x worker counts.

    Synchronized cells at W=1 do not exist; the baseline is standard/W=1.
    """

    cells: dict[tuple[str, int], RuntimeStats]
    worker_counts: list[int]

    def baseline(self) -> RuntimeStats:
        try:
            return self.cells[("standard", 1)]
        except KeyError:
            raise ValueError("baseline cell standard/W=1 is missing") from None

    @classmethod
    def from_means(cls, means: dict[tuple[str, int], float], worker_counts: list[int]):
        cells = {
            key: RuntimeStats.from_trials(f"{key[0]}/{key[1]}", [m])
            for key, m in means.items()
        }
        return cls(cells, sorted(worker_counts))


def legal_cells(worker_counts: list[int]) -> list[tuple[str, int]]:
    """All mode/W combinations, minus synchronized and both at W=1."""
    out = []
    for w in sorted(worker_counts):
        for mode in MODES:
            if w == 1 and mode in ("synchronized", "both"):
                continue
            out.append((mode, w))
    return out


def bench_variant(hp: HyperParams, trials: int) -> RuntimeStats:
    """Wall-clock stats over `trials` runs of one variant, each with a
    distinct derived seed."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    durations = []
    for k in range(trials):
        trial_hp = replace(hp, seed=derived_seed(hp.seed, ROLE_BENCH, k))
        record = run(trial_hp)
        durations.append(record.duration_s)
    return RuntimeStats.from_trials(f"{hp.mode}/{hp.W}", durations)


def ablation_grid(
    base_hp: HyperParams, worker_counts: list[int], trials: int
) -> RuntimeTable:
    """Fill every legal cell; each cell's configuration differs from the base
    only in the mode flags and W."""
    cells = {}
    for mode, w in legal_cells(worker_counts):
        cells[(mode, w)] = bench_variant(base_hp.with_mode(mode, w), trials)
    return RuntimeTable(cells, sorted(worker_counts))


def to_percent(table: RuntimeTable) -> dict[tuple[str, int], float]:
    """Each cell as 100 * mean / baseline mean, rounded to 0.1."""
    base = table.baseline().mean
    return {
        key: round_half_up(100.0 * stats.mean / base, 1)
        for key, stats in table.cells.items()
    }


def to_factor(table: RuntimeTable) -> dict[tuple[str, int], float]:
    """Each cell as baseline mean / mean, rounded to 0.01."""
    base = table.baseline().mean
    return {
        key: round_half_up(base / stats.mean, 2)
        for key, stats in table.cells.items()
    }


# ---------------------------------------------------------------------------
# analytical runtime predictor


@dataclass
class TimingModel:
    """Per-operation costs (seconds) for the abstract two-component machine.

    Batched inference is modeled as t_inf + (W-1) * t_binf_row so that
    t_binf(1) == t_inf exactly; single-state inference under W contending
    samplers costs t_inf * (1 + contention_coef * (W-1)).
    """

    t_env: float
    t_inf: float
    t_train: float
    t_binf_row: float
    contention_coef: float = 0.0

    def validate(self) -> None:
        if min(self.t_env, self.t_inf, self.t_train, self.t_binf_row) <= 0:
            raise ValueError("all model costs must be positive")
        if self.contention_coef < 0:
            raise ValueError("contention coefficient must be non-negative")

    def t_binf(self, w: int) -> float:
        return self.t_inf + (w - 1) * self.t_binf_row

    def contention(self, w: int) -> float:
        return 1.0 + self.contention_coef * (w - 1)


def predict_runtime(model: TimingModel, hp: HyperParams) -> float:
    """Predicted seconds per epoch of C steps.

    Sampling costs (C/W)*(t_env + inference share) where the share is
    t_binf(W)/W in lockstep modes and contended single-state inference
    otherwise; training costs (C/F)*t_train. Concurrency overlaps the two
    (epoch time is their max), otherwise they add up.
    """
    model.validate()
    if hp.synchronized:
        inference_share = model.t_binf(hp.W) / hp.W
    else:
        inference_share = model.t_inf * model.contention(hp.W)
    sample_cost = (hp.C / hp.W) * (model.t_env + inference_share)
    train_cost = (hp.C / hp.F) * model.t_train
    if hp.concurrent:
        return max(sample_cost, train_cost)
    return sample_cost + train_cost


def _median_duration(fn, samples: int) -> float:
    times = np.empty(samples)
    for i in range(samples):
        t0 = time.perf_counter()
        fn()
        times[i] = time.perf_counter() - t0
    return float(np.median(times))


def measure_timing_model(
    hp: HyperParams, samples: int = 200, batch_w: int = 8
) -> TimingModel:
    """Fit the model from micro-benchmarks on this machine (median of
    `samples` runs per cost). Hardware-dependent by design."""
    rng = np.random.default_rng(derived_seed(hp.seed, ROLE_BENCH, 10_000))
    env = SyntheticLatencyEnv(
        hp.latency_s, hp.episode_length, hp.state_dim, hp.action_count
    )
    worker = InferenceWorker()
    params = init_network(
        [hp.state_dim, hp.hidden, hp.action_count], derived_seed(hp.seed, ROLE_BENCH, 10_001)
    )
    opt = OptState.zeros(params)

    state_holder = {"s": env.reset(rng)}

    def env_step():
        action = int(rng.integers(env.action_count))
        s, _, terminal = env.step(action, rng)
        state_holder["s"] = env.reset(rng) if terminal else s

    one_state = rng.random((1, hp.state_dim))
    many_states = rng.random((batch_w, hp.state_dim))
    batch = [
        Transition(
            rng.random(hp.state_dim),
            int(rng.integers(hp.action_count)),
            float(rng.random()),
            rng.random(hp.state_dim),
            False,
        )
        for _ in range(hp.batch_size)
    ]

    def train_step():
        train_minibatch(params, opt, batch, params, hp.gamma, hp.opt)

    # warm-up so jit compilation never lands inside a measurement
    worker.predict(params, one_state, from_target=True)
    worker.predict(params, many_states, from_target=True)
    train_step()
    env_step()

    t_env = _median_duration(env_step, samples)
    t_inf = _median_duration(
        lambda: worker.predict(params, one_state, from_target=True), samples
    )
    t_binf = _median_duration(
        lambda: worker.predict(params, many_states, from_target=True), samples
    )
    t_train = _median_duration(train_step, max(20, samples // 4))
    t_binf_row = max((t_binf - t_inf) / (batch_w - 1), 1e-9)
    return TimingModel(
        t_env=t_env, t_inf=t_inf, t_train=t_train, t_binf_row=t_binf_row
    )


# ---------------------------------------------------------------------------
# score normalization


@dataclass
class ScoreRow:
    """One agent's score on one game, with the normalization inputs."""

    name: str
    random_score: float
    human_score: float
    raw: float

    @property
    def normalized(self) -> float:
        return normalize_score(self.raw, self.random_score, self.human_score)


@dataclass
class GameScores:
    """One game's row from a score CSV: two agents plus reference scores."""

    name: str
    random_score: float
    human_score: float
    dqn: float
    ours: float
    printed_dqn_norm: float | None = None
    printed_ours_norm: float | None = None


def normalize_score(raw: float, random_score: float, human_score: float) -> float:
    """Human-normalized percentage: 100 * (raw - random) / (human - random)."""
    if human_score == random_score:
        raise ValueError("human and random scores must differ")
    return 100.0 * (raw - random_score) / (human_score - random_score)


def load_score_csv(path) -> list[GameScores]:
    """Read `name,random,human,dqn,ours` rows (UTF-8, '.' decimal); the two
    printed normalized columns are optional."""
    games = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"name", "random", "human", "dqn", "ours"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"score CSV is missing columns: {sorted(missing)}")
        for row in reader:
            games.append(
                GameScores(
                    name=row["name"],
                    random_score=float(row["random"]),
                    human_score=float(row["human"]),
                    dqn=float(row["dqn"]),
                    ours=float(row["ours"]),
                    printed_dqn_norm=float(row["dqn_norm"]) if row.get("dqn_norm") else None,
                    printed_ours_norm=float(row["ours_norm"]) if row.get("ours_norm") else None,
                )
            )
    return games


@dataclass
class ScoreReport:
    rows: list[dict]
    counts: dict[str, int]
    printed_mismatches: list[str] = field(default_factory=list)


def score_report(games: list[GameScores], threshold: float = HUMAN_LEVEL_THRESHOLD) -> ScoreReport:
    """Recompute every normalized score, flag the higher agent per row, and
    count rows at or above the human-level threshold.

    When a row carries printed normalized values, any disagreement beyond
    0.05 percentage points is reported (printed values are rounded).
    """
    rows = []
    counts = {"dqn": 0, "ours": 0}
    mismatches = []
    for g in games:
        dqn_norm = normalize_score(g.dqn, g.random_score, g.human_score)
        ours_norm = normalize_score(g.ours, g.random_score, g.human_score)
        if dqn_norm >= threshold:
            counts["dqn"] += 1
        if ours_norm >= threshold:
            counts["ours"] += 1
        better = "dqn" if dqn_norm > ours_norm else ("ours" if ours_norm > dqn_norm else "")
        rows.append(
            {
                "name": g.name,
                "random": g.random_score,
                "human": g.human_score,
                "dqn": g.dqn,
                "ours": g.ours,
                "dqn_norm": round_half_up(dqn_norm, 1),
                "ours_norm": round_half_up(ours_norm, 1),
                "better": better,
            }
        )
        for agent, computed, printed in (
            ("dqn", dqn_norm, g.printed_dqn_norm),
            ("ours", ours_norm, g.printed_ours_norm),
        ):
            if printed is not None and abs(computed - printed) > PRINTED_NORM_TOLERANCE:
                mismatches.append(
                    f"{g.name} [{agent}]: recomputed {computed:.2f} vs printed {printed:.1f}"
                )
    return ScoreReport(rows, counts, mismatches)


# ---------------------------------------------------------------------------
# table rendering


def _mode_title(mode: str) -> str:
    return {"standard": "Standard", "concurrent": "Concurrent",
            "synchronized": "Synchronized", "both": "Both"}[mode]


def _grid_lines(worker_counts, cell_fn) -> list[list[str]]:
    lines = [["Threads"] + [_mode_title(m) for m in MODES]]
    for w in sorted(worker_counts):
        row = [str(w)]
        for mode in MODES:
            if w == 1 and mode in ("synchronized", "both"):
                row.append("---")
            else:
                row.append(cell_fn(mode, w))
        lines.append(row)
    return lines


def _render_markdown(lines: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in lines) for i in range(len(lines[0]))]
    out = []
    for n, row in enumerate(lines):
        out.append("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |")
        if n == 0:
            out.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(out) + "\n"


def _render_csv(lines: list[list[str]]) -> str:
    return "\n".join(",".join(row) for row in lines) + "\n"


def render_runtime_table(
    table: RuntimeTable, fmt: str = "markdown", extrapolate: float | None = None
) -> str:
    """Measured runtimes as mean +- std seconds (0.01 precision). With an
    extrapolation factor, scaled hours-equivalents are printed alongside --
    never silently substituted."""

    def cell(mode, w):
        stats = table.cells[(mode, w)]
        text = f"{stats.mean:.2f} ± {stats.std:.2f}"
        if extrapolate:
            hours = stats.mean * extrapolate / 3600.0
            text += f" ({hours:.2f} h @x{extrapolate:g})"
        return text

    lines = _grid_lines(table.worker_counts, cell)
    return _render_markdown(lines) if fmt == "markdown" else _render_csv(lines)


def render_derived_table(
    values: dict[tuple[str, int], float],
    worker_counts: list[int],
    kind: str,
    fmt: str = "markdown",
) -> str:
    suffix = "%" if kind == "percent" else "x"
    decimals = 1 if kind == "percent" else 2

    def cell(mode, w):
        return f"{values[(mode, w)]:.{decimals}f}{suffix}"

    lines = _grid_lines(worker_counts, cell)
    return _render_markdown(lines) if fmt == "markdown" else _render_csv(lines)


def render_score_table(report: ScoreReport, fmt: str = "markdown") -> str:
    lines = [["Game", "Random", "Human", "DQN", "Ours", "DQN norm", "Ours norm"]]
    for r in report.rows:
        dqn_cell = f"{r['dqn_norm']:.1f}%"
        ours_cell = f"{r['ours_norm']:.1f}%"
        if fmt == "markdown":
            if r["better"] == "dqn":
                dqn_cell = f"**{dqn_cell}**"
            elif r["better"] == "ours":
                ours_cell = f"**{ours_cell}**"
        lines.append(
            [
                r["name"],
                f"{r['random']:.10g}",
                f"{r['human']:.10g}",
                f"{r['dqn']:.10g}",
                f"{r['ours']:.10g}",
                dqn_cell,
                ours_cell,
            ]
        )
    body = _render_markdown(lines) if fmt == "markdown" else _render_csv(lines)
    summary = (
        f"human-level (>= {HUMAN_LEVEL_THRESHOLD:g}%): "
        f"dqn={report.counts['dqn']} ours={report.counts['ours']}\n"
    )
    return body + summary
