"""Orchestration of W sampler workers and one trainer worker.

Mode flags and what they change:

* ``concurrent``: training overlaps sampling. The trainer runs C/F minibatch
  updates against the epoch-frozen replay memory while samplers collect the
  next C steps, acting from the target parameters (which stay fixed for the
  whole epoch). Without it, sampling pauses after every F global steps for
  one blocking minibatch, acting from the main parameters.
* ``synchronized``: samplers advance in lockstep groups of W. Their current
  states live in one shared array; a single batched prediction per group
  serves every sampler its Q-row, cutting inference transactions by W.
  Without it, each sampler requests single-state predictions on its own.

Determinism contract: with one master seed, every worker draws from its own
derived stream (samplers, trainer, evaluator and prepopulation are all
distinct), buffers flush into the replay memory in ascending owner order, and
each sampler labels its k-th step of an epoch with the lockstep-equivalent
global step number. Under that discipline every mode except standard/W>1
produces bit-identical results to ``sequential_reference``, which executes
the same arithmetic in one lane. Standard mode with several workers
interleaves parameter updates with acting in real time and is exempt from
bit-exactness (it must still run to completion and report results).

All Q-value prediction and training passes through one lock-serialized
``InferenceWorker`` -- the stand-in for the accelerator in the two-component
hardware picture. Samplers never touch the main parameters or the replay
memory directly; they hand states to the worker and receive Q-rows back.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .agent import HyperParams, epsilon_at, select_action, train_minibatch
from .envs import evaluate_policy, make_env
from .nn import (
    OptState,
    Parameters,
    copy_parameters,
    forward,
    init_network,
    theta_hash,
)
from .replay import ReplayMemory, SampleBuffer, Transition

ROLE_INIT = 0
ROLE_SAMPLER = 1
ROLE_TRAINER = 2
ROLE_EVAL = 3
ROLE_PREPOP = 4
ROLE_BENCH = 5


def rng_stream(seed: int, role: int, index: int = 0) -> np.random.Generator:
    """Independent generator derived from the master seed, a role tag and a
    worker index. Parallel and sequential schedules consume randomness
    identically because every consumer owns exactly one of these."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(role, index)))


def derived_seed(seed: int, role: int, index: int = 0) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(role, index))
    return int(ss.generate_state(1, np.uint64)[0])


class InferenceWorker:
    """Lock-serialized prediction/training device with transaction counters."""

    def __init__(self):
        self._lock = threading.Lock()
        self.single_calls = 0
        self.batched_calls = 0
        self.rows_from_target = 0
        self.rows_from_main = 0
        self.train_calls = 0

    @property
    def inference_calls(self) -> int:
        return self.single_calls + self.batched_calls

    def predict(self, params: Parameters, states: np.ndarray, *, from_target: bool) -> np.ndarray:
        with self._lock:
            q = forward(params, states)
            n = q.shape[0]
            if n == 1:
                self.single_calls += 1
            else:
                self.batched_calls += 1
            if from_target:
                self.rows_from_target += n
            else:
                self.rows_from_main += n
            return q

    def train(self, fn):
        with self._lock:
            self.train_calls += 1
            return fn()


def batched_inference(params: Parameters, states: np.ndarray) -> np.ndarray:
    """Single forward call over the W current sampler states; row j is
    delivered back to sampler j. Bit-identical to W per-state forwards."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2:
        raise ValueError("expected a (W, state_dim) batch of sampler states")
    return forward(params, states)


def transaction_breakdown(hp: HyperParams, steps: int) -> tuple[int, int]:
    """(inference calls, training calls) a run of `steps` steps will make."""
    if steps < 1 or steps % hp.C != 0:
        raise ValueError("steps must be a positive multiple of C")
    inference = steps // hp.W if hp.synchronized else steps
    training = steps // hp.F
    return inference, training


def transaction_count(hp: HyperParams, steps: int) -> int:
    """Total inference-worker transactions: steps/W batched predictions in
    synchronized modes (steps single ones otherwise) plus C/F training calls
    per epoch."""
    inference, training = transaction_breakdown(hp, steps)
    return inference + training


@dataclass
class EpochPlan:
    index: int
    start_step: int
    steps_per_sampler: int
    minibatches: int

    @classmethod
    def for_epoch(cls, hp: HyperParams, index: int) -> "EpochPlan":
        return cls(index, index * hp.C, hp.C // hp.W, hp.C // hp.F)


@dataclass
class RunRecord:
    """Everything a run produced, plus instrumentation counters.

    ``duration_s`` is wall-clock and intentionally excluded from the CSV so
    that repeated deterministic runs serialize byte-identically.
    """

    config: dict[str, str]
    seed: int
    mode: str
    evals: list[tuple[int, float, float]] = field(default_factory=list)
    episodes: list[tuple[int, float]] = field(default_factory=list)
    epoch_hashes: list[tuple[int, str]] = field(default_factory=list)
    final_hash: str = ""
    counters: dict[str, int] = field(default_factory=dict)
    events: list[tuple[int, str, str]] = field(default_factory=list)
    duration_s: float = 0.0
    final_params: Parameters | None = None

    def to_csv_text(self) -> str:
        lines = ["# paraq-run-record v1"]
        for k in sorted(self.config):
            lines.append(f"# config {k}={self.config[k]}")
        lines.append("step,event,value")
        for step, kind, value in self.events:
            lines.append(f"{step},{kind},{value}")
        lines.append(f"# final_theta_hash {self.final_hash}")
        for k in sorted(self.counters):
            lines.append(f"# counter {k}={self.counters[k]}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv_text())


def config_echo(hp: HyperParams) -> dict[str, str]:
    """Flat, reproducible echo of the full run configuration."""
    return {
        "mode": hp.mode,
        "workers": str(hp.W),
        "C": str(hp.C),
        "F": str(hp.F),
        "gamma": repr(hp.gamma),
        "N": str(hp.N),
        "capacity": str(hp.capacity),
        "batch_size": str(hp.batch_size),
        "total_steps": str(hp.total_steps),
        "eval_period": str(hp.eval_period),
        "eval_episodes": str(hp.eval_episodes),
        "eval_epsilon": repr(hp.eval_epsilon),
        "eps_start": repr(hp.schedule.start),
        "eps_end": repr(hp.schedule.end),
        "eps_anneal": str(hp.schedule.anneal_steps),
        "lr": repr(hp.opt.learning_rate),
        "rho": repr(hp.opt.rho),
        "kappa": repr(hp.opt.kappa),
        "seed": str(hp.seed),
        "env": hp.env,
        "hidden": str(hp.hidden),
        "latency_us": repr(hp.latency_s * 1e6),
        "episode_length": str(hp.episode_length),
        "state_dim": str(hp.state_dim),
        "action_count": str(hp.action_count),
    }


def default_env_factory(hp: HyperParams):
    options = {
        "latency_s": hp.latency_s,
        "episode_length": hp.episode_length,
        "state_dim": hp.state_dim,
        "action_count": hp.action_count,
    }
    return lambda: make_env(hp.env, options)


class _SamplerCtx:
    """Everything one sampler worker owns: env, rng stream, buffer, episode log."""

    __slots__ = ("index", "env", "rng", "buffer", "state", "ep_return", "episodes")

    def __init__(self, index: int, env, rng: np.random.Generator):
        self.index = index
        self.env = env
        self.rng = rng
        self.buffer = SampleBuffer(index)
        self.state = env.reset(rng)
        self.ep_return = 0.0
        self.episodes: list[tuple[int, float]] = []


def _sampler_step(ctx: _SamplerCtx, q_row: np.ndarray, eps: float, t_label: int) -> None:
    action = select_action(q_row, eps, ctx.rng)
    next_state, reward, terminal = ctx.env.step(action, ctx.rng)
    # time-limit truncations end the episode but must not stop bootstrapping
    bootstrap_terminal = terminal and not getattr(ctx.env, "truncated", False)
    ctx.buffer.append(Transition(ctx.state, action, reward, next_state, bootstrap_terminal))
    ctx.ep_return += reward
    if terminal:
        ctx.episodes.append((t_label, ctx.ep_return))
        ctx.ep_return = 0.0
        ctx.state = ctx.env.reset(ctx.rng)
    else:
        ctx.state = next_state


class BarrierBroken(RuntimeError):
    pass


class _BlockBarrier:
    """Generation-counted rendezvous for one lockstep group.

    The last arriver runs the action while everyone else stays parked, then
    releases the group. Same semantics as threading.Barrier with an action,
    but roughly half the cost per cycle under contention, which matters at
    one barrier per W steps.
    """

    def __init__(self, parties: int, action):
        self._parties = parties
        self._action = action
        self._cond = threading.Condition(threading.Lock())
        self._count = 0
        self._generation = 0
        self._broken = False

    def wait(self) -> None:
        with self._cond:
            if self._broken:
                raise BarrierBroken("lockstep barrier is broken")
            gen = self._generation
            self._count += 1
            if self._count == self._parties:
                try:
                    self._action()
                except BaseException:
                    self._broken = True
                    self._cond.notify_all()
                    raise
                self._count = 0
                self._generation += 1
                self._cond.notify_all()
                return
            while gen == self._generation and not self._broken:
                self._cond.wait()
            if self._broken:
                raise BarrierBroken("lockstep barrier is broken")

    def abort(self) -> None:
        with self._cond:
            self._broken = True
            self._cond.notify_all()


class _TrainGate:
    """Blocking-training gate for the asynchronous non-concurrent mode.

    Counts aggregate sampler steps; the sampler that crosses an F boundary
    runs one training event while every other sampler pauses before its next
    step. Training events are serialized.
    """

    def __init__(self, period: int, train_fn):
        self._cond = threading.Condition()
        self._period = period
        self._count = 0
        self._training = False
        self._train_fn = train_fn

    def before_step(self) -> None:
        # unlocked fast path: a stale False only lets an already in-flight
        # step proceed, which the pause protocol tolerates anyway
        if self._training:
            with self._cond:
                while self._training:
                    self._cond.wait()

    def after_step(self) -> None:
        with self._cond:
            self._count += 1
            due = self._count % self._period == 0
            if not due:
                return
            while self._training:
                self._cond.wait()
            self._training = True
        try:
            self._train_fn()
        finally:
            with self._cond:
                self._training = False
                self._cond.notify_all()


class _Run:
    """Shared state and epoch drivers for one executor run."""

    def __init__(self, hp: HyperParams, env_factory=None, sink=None):
        hp.validate()
        self.hp = hp
        self.sink = sink
        factory = env_factory if env_factory is not None else default_env_factory(hp)
        self.worker = InferenceWorker()
        self.D = ReplayMemory(hp.capacity)
        self.D.prepopulate(factory(), hp.N, rng_stream(hp.seed, ROLE_PREPOP))
        probe_env = factory()
        sizes = [probe_env.state_dim, hp.hidden, probe_env.action_count]
        self.theta = init_network(sizes, derived_seed(hp.seed, ROLE_INIT))
        self.opt = OptState.zeros(self.theta)
        self.target = copy_parameters(self.theta)
        self.ctxs = [
            _SamplerCtx(j, factory(), rng_stream(hp.seed, ROLE_SAMPLER, j))
            for j in range(hp.W)
        ]
        self.eval_env = factory()
        self.trainer_rng = rng_stream(hp.seed, ROLE_TRAINER)
        self.counters = {
            "dfreeze_checks": 0,
            "dfreeze_violations": 0,
            "prepop_pushes": self.D.version,
            "flush_pushes": 0,
        }
        self.record = RunRecord(
            config=config_echo(hp), seed=hp.seed, mode=hp.mode, counters=self.counters
        )
        self._eval_idx = 0

    # -- bookkeeping ------------------------------------------------------

    def emit(self, step: int, kind: str, value: str) -> None:
        self.record.events.append((step, kind, value))
        if self.sink is not None:
            self.sink(step, kind, value)

    def flush_transitions(self) -> None:
        moved = self.D.flush([ctx.buffer for ctx in self.ctxs])
        self.counters["flush_pushes"] += moved

    def flush_and_merge(self) -> None:
        """Epoch-boundary flush: move buffered transitions into the store and
        record finished episodes, both in ascending owner order. Only called
        while every worker is quiescent."""
        self.flush_transitions()
        for ctx in self.ctxs:
            for t_label, ep_ret in ctx.episodes:
                self.record.episodes.append((t_label, ep_ret))
                self.emit(t_label, "episode", repr(ep_ret))
            ctx.episodes = []

    def maybe_eval(self, boundary: int) -> None:
        hp = self.hp
        if not hp.eval_period or boundary == 0 or boundary % hp.eval_period != 0:
            return
        acting = self.target if hp.concurrent else self.theta
        snapshot = copy_parameters(acting)
        mean, std = evaluate_policy(
            self.eval_env,
            snapshot,
            hp.eval_epsilon,
            hp.eval_episodes,
            derived_seed(hp.seed, ROLE_EVAL, self._eval_idx),
        )
        self._eval_idx += 1
        self.record.evals.append((boundary, mean, std))
        self.emit(boundary, "eval_mean", repr(mean))
        self.emit(boundary, "eval_std", repr(std))

    def record_epoch_hash(self, boundary: int) -> None:
        h = theta_hash(self.theta)
        self.record.epoch_hashes.append((boundary, h))
        self.emit(boundary, "theta_hash", h)

    # -- training primitives ----------------------------------------------

    def train_one(self) -> None:
        """One minibatch against the current store; asserts the store does
        not change underneath the update."""
        hp = self.hp
        v0 = self.D.version
        batch = self.D.sample(hp.batch_size, self.trainer_rng)
        theta, opt = self.worker.train(
            lambda: train_minibatch(self.theta, self.opt, batch, self.target, hp.gamma, hp.opt)
        )
        self.counters["dfreeze_checks"] += 1
        if self.D.version != v0:
            self.counters["dfreeze_violations"] += 1
        self.theta = theta
        self.opt = opt

    def blocking_train_event(self) -> None:
        """Non-concurrent training: flush buffered transitions into the
        store, then run one minibatch on it."""
        self.flush_transitions()
        self.train_one()

    def _trainer_epoch(self, minibatches: int, errors: list) -> None:
        try:
            for _ in range(minibatches):
                self.train_one()
        except BaseException as exc:  # noqa: BLE001 - reraised by the main lane
            errors.append(exc)

    # -- epoch drivers ------------------------------------------------------

    def run_epoch_lockstep(self, plan: EpochPlan, errors: list) -> None:
        hp = self.hp
        W = hp.W
        blocks = hp.C // W
        shared_states = np.stack([ctx.state for ctx in self.ctxs])
        shared_q: dict[str, np.ndarray] = {}
        acting_from_target = hp.concurrent
        next_train = [hp.F]
        block_no = [0]

        def train_due(steps_done: int) -> None:
            while next_train[0] <= steps_done:
                self.blocking_train_event()
                next_train[0] += hp.F

        def barrier_action() -> None:
            # A raise here breaks the barrier for everyone; record the root
            # cause before the waiters see BarrierBroken.
            try:
                if not hp.concurrent:
                    train_due(block_no[0] * W)
                acting = self.target if acting_from_target else self.theta
                shared_q["q"] = self.worker.predict(
                    acting, shared_states, from_target=acting_from_target
                )
                block_no[0] += 1
            except BaseException as exc:  # noqa: BLE001
                errors.append(exc)
                raise

        barrier = _BlockBarrier(W, barrier_action)

        def sampler_task(ctx: _SamplerCtx) -> None:
            try:
                j = ctx.index
                for b in range(blocks):
                    barrier.wait()
                    t_label = plan.start_step + b * W + j + 1
                    _sampler_step(ctx, shared_q["q"][j], epsilon_at(t_label, hp.schedule), t_label)
                    shared_states[j] = ctx.state
            except BaseException as exc:  # noqa: BLE001
                errors.append(exc)
                barrier.abort()

        threads = [
            threading.Thread(target=sampler_task, args=(ctx,), name=f"sampler-{ctx.index}")
            for ctx in self.ctxs
        ]
        if hp.concurrent:
            threads.append(
                threading.Thread(
                    target=self._trainer_epoch, args=(plan.minibatches, errors), name="trainer"
                )
            )
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if not hp.concurrent and not errors:
            train_due(hp.C)

    def run_epoch_async(self, plan: EpochPlan, errors: list) -> None:
        hp = self.hp
        gate = None if hp.concurrent else _TrainGate(hp.F, self.blocking_train_event)
        acting_from_target = hp.concurrent
        target = self.target

        def sampler_task(ctx: _SamplerCtx) -> None:
            try:
                j = ctx.index
                for k in range(plan.steps_per_sampler):
                    if gate is not None:
                        gate.before_step()
                    acting = target if acting_from_target else self.theta
                    q = self.worker.predict(
                        acting, ctx.state[np.newaxis, :], from_target=acting_from_target
                    )
                    t_label = plan.start_step + k * hp.W + j + 1
                    _sampler_step(ctx, q[0], epsilon_at(t_label, hp.schedule), t_label)
                    if gate is not None:
                        gate.after_step()
            except BaseException as exc:  # noqa: BLE001
                errors.append(exc)

        threads = [
            threading.Thread(target=sampler_task, args=(ctx,), name=f"sampler-{ctx.index}")
            for ctx in self.ctxs
        ]
        if hp.concurrent:
            threads.append(
                threading.Thread(
                    target=self._trainer_epoch, args=(plan.minibatches, errors), name="trainer"
                )
            )
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    # -- whole run ----------------------------------------------------------

    def execute(self) -> RunRecord:
        hp = self.hp
        wall0 = time.perf_counter()
        epochs = hp.total_steps // hp.C
        for e in range(epochs):
            plan = EpochPlan.for_epoch(hp, e)
            self.flush_and_merge()
            self.target = copy_parameters(self.theta)
            self.maybe_eval(plan.start_step)
            errors: list = []
            if hp.synchronized:
                self.run_epoch_lockstep(plan, errors)
            else:
                self.run_epoch_async(plan, errors)
            if errors:
                raise errors[0]
            self.record_epoch_hash(plan.start_step + hp.C)
        self.flush_and_merge()
        self.maybe_eval(hp.total_steps)
        self.finalize(wall0)
        return self.record

    def finalize(self, wall0: float) -> None:
        w = self.worker
        self.counters.update(
            {
                "inference_single_calls": w.single_calls,
                "inference_batched_calls": w.batched_calls,
                "inference_calls": w.inference_calls,
                "acting_rows_from_target": w.rows_from_target,
                "acting_rows_from_main": w.rows_from_main,
                "train_calls": w.train_calls,
            }
        )
        self.record.final_hash = theta_hash(self.theta)
        self.record.final_params = self.theta
        self.record.duration_s = time.perf_counter() - wall0


def run(hp: HyperParams, env_factory=None, sink=None) -> RunRecord:
    """Execute the full training run described by hp and return its record."""
    return _Run(hp, env_factory, sink).execute()


def sequential_reference(hp: HyperParams, env_factory=None, sink=None) -> RunRecord:
    """The same arithmetic as run(), executed in one lane in canonical order.

    Per epoch: flush, target sync, then sampler steps interleaved in
    round-robin owner order exactly as the lockstep schedule would, then the
    epoch's minibatches (in concurrent modes) against the epoch-frozen store.
    This is the determinism oracle the parallel executor is checked against.
    """
    state = _Run(hp, env_factory, sink)
    hp = state.hp
    wall0 = time.perf_counter()
    epochs = hp.total_steps // hp.C
    blocks = hp.C // hp.W
    for e in range(epochs):
        plan = EpochPlan.for_epoch(hp, e)
        state.flush_and_merge()
        state.target = copy_parameters(state.theta)
        state.maybe_eval(plan.start_step)
        next_train = hp.F
        for b in range(blocks):
            if not hp.concurrent:
                while next_train <= b * hp.W:
                    state.blocking_train_event()
                    next_train += hp.F
            acting = state.target if hp.concurrent else state.theta
            states = np.stack([ctx.state for ctx in state.ctxs])
            q = state.worker.predict(acting, states, from_target=hp.concurrent)
            for j, ctx in enumerate(state.ctxs):
                t_label = plan.start_step + b * hp.W + j + 1
                _sampler_step(ctx, q[j], epsilon_at(t_label, hp.schedule), t_label)
        if hp.concurrent:
            for _ in range(plan.minibatches):
                state.train_one()
        else:
            while next_train <= hp.C:
                state.blocking_train_event()
                next_train += hp.F
        state.record_epoch_hash(plan.start_step + hp.C)
    state.flush_and_merge()
    state.maybe_eval(hp.total_steps)
    state.finalize(wall0)
    return state.record
