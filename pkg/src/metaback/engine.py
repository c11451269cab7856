"""Backward federated meta-training.

Each agent first fits its own task offline, close to a local optimum. The
server then averages those local models and runs K backward rounds: every
agent takes one gradient *ascent* step on its own loss (retracing its descent
path in reverse) and projects the result onto a ball of shrinking squared
radius delta_k around the latest cross-agent average. The radii force
consensus, and the final average is the meta-initializer.

Federation boundary: during the backward phase an agent consumes only the
pair (current average, delta_k) and emits only its new parameter vector; its
dataset never crosses the interface. The server performs exact arithmetic
averaging in fixed task-id order, so runs are bit-reproducible under a fixed
master seed regardless of scheduling.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .costs import ChannelConfig, CostLedger, EnergyConfig
from .errors import DivergenceError
from .projection import BallConstraint, project
from .rng import STREAM_AGENT, STREAM_INIT, STREAM_LOCAL, derive_rng
from .tasks import TaskDataset

DEFAULT_GAMMA = 0.85
# Floor keeps the radius positive when all local optima coincide.
MIN_DELTA_MAX = 1e-12


@dataclass
class LocalSolverConfig:
    """Offline per-task training: SGD until the full-batch gradient norm
    drops below grad_tol or the step budget runs out. A non-finite grad_tol
    disables the norm checks entirely (pure budget mode)."""

    steps: int = 2000
    lr: float = 0.01
    grad_tol: float = 1e-3
    batch_size: int | None = 100
    check_every: int = 50

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


@dataclass
class BackwardConfig:
    """Backward-phase settings.

    delta_schedule, when given, must hold K positive squared radii that are
    non-decreasing in k (index 0 is the final, tightest round). When omitted
    it is derived at run time as the geometric family
    delta_k = delta_max * gamma^(K-1-k) with delta_max defaulting to a quarter
    of the squared spread of the local optima around their average.
    batch_size=None selects deterministic full-batch ascent steps.
    """

    rounds: int = 50
    alpha: float = 0.01
    batch_size: int | None = 100
    delta_schedule: np.ndarray | None = None
    gamma: float = DEFAULT_GAMMA
    delta_max: float | None = None
    local: LocalSolverConfig = field(default_factory=LocalSolverConfig)
    record_loss: bool = True

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.delta_schedule is not None:
            sched = np.asarray(self.delta_schedule, dtype=np.float64)
            if sched.shape != (self.rounds,):
                raise ValueError(f"delta_schedule must have length {self.rounds}")
            if (sched <= 0).any():
                raise ValueError("delta_schedule entries must be positive")
            if (np.diff(sched) < 0).any():
                raise ValueError("delta_schedule must be non-decreasing in k")
            object.__setattr__(self, "delta_schedule", sched)


def geometric_schedule(rounds: int, delta_max: float, gamma: float) -> np.ndarray:
    """delta_k = delta_max * gamma^(K-1-k): tightest at k=0, loosest at k=K-1."""
    k = np.arange(rounds)
    return delta_max * gamma ** (rounds - 1 - k)


@dataclass
class AgentState:
    """One task owner: its data, current parameters, and private rng."""

    task_id: int
    spec: nn.MlpSpec
    dataset: TaskDataset
    phi: np.ndarray
    rng: np.random.Generator
    grad_evals: int = 0

    def sample_batch(self, batch_size: int | None) -> nn.Batch:
        train = self.dataset.train
        n = len(train)
        if batch_size is None or batch_size >= n:
            return train
        idx = self.rng.permutation(n)[:batch_size]
        return train.take(idx)

    def backward_step(self, phi_avg: np.ndarray, delta: float, alpha: float,
                      batch_size: int | None) -> np.ndarray:
        """One backward-round update given only the server's (average, delta).

        Ascends the local loss from the current parameters, projects onto the
        ball around `phi_avg`, stores and returns the result.
        """
        batch = self.sample_batch(batch_size)
        ascended = ascent_step(self, alpha, batch)
        result = project(ascended, BallConstraint(phi_avg, delta))
        self.phi = result.point
        return self.phi


@dataclass
class ServerState:
    phi_avg: np.ndarray
    round: int


def average_params(phis: list[np.ndarray]) -> np.ndarray:
    # Fixed task-id order; summation order never depends on scheduling.
    return np.mean(np.stack(phis, axis=0), axis=0)


def ascent_step(agent: AgentState, alpha: float, batch: nn.Batch) -> np.ndarray:
    """phi + alpha * grad(phi): one gradient ascent step on the agent's loss."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    g = nn.grad(agent.spec, agent.phi, batch)
    agent.grad_evals += 1
    return agent.phi + alpha * g


@dataclass
class LocalFitResult:
    phi: np.ndarray
    steps_run: int
    grad_evals: int
    stop_reason: str  # "grad_tol" | "budget"
    final_loss: float


def train_local_optimum(agent: AgentState, solver: LocalSolverConfig) -> LocalFitResult:
    """Fit the agent's task from its current parameters, nearly to optimality.

    Updates agent.phi in place and counts every gradient evaluation,
    including the full-batch norm checks.
    """
    data = agent.dataset.train
    params = np.array(agent.phi, copy=True)
    evals = 0
    steps_run = 0
    stop_reason = "budget"
    check = math.isfinite(solver.grad_tol)
    for idx in nn.minibatch_indices(len(data), solver.batch_size, solver.steps, agent.rng):
        params -= solver.lr * nn.grad(agent.spec, params, data.take(idx))
        evals += 1
        steps_run += 1
        if not np.isfinite(params).all():
            raise DivergenceError(f"agent {agent.task_id}: non-finite parameters "
                                  f"after {steps_run} local steps")
        if check and (steps_run % solver.check_every == 0 or steps_run == solver.steps):
            g = nn.grad(agent.spec, params, data)
            evals += 1
            if float(np.linalg.norm(g)) <= solver.grad_tol:
                stop_reason = "grad_tol"
                break
    final_loss = nn.loss(agent.spec, params, data)
    if not math.isfinite(final_loss):
        raise DivergenceError(f"agent {agent.task_id}: non-finite loss after local training")
    agent.phi = params
    agent.grad_evals += evals
    return LocalFitResult(params, steps_run, evals, stop_reason, final_loss)


@dataclass
class TrajectoryPoint:
    """Per-round, per-agent diagnostics. `round` is the backward index k
    (K for the initial local optima, then K-1 down to 0)."""

    round: int
    agent: int
    loss: float | None
    dist_to_avg: float
    dist_sq_prev_avg: float | None = None
    delta: float | None = None


@dataclass
class BackwardRunResult:
    theta: np.ndarray
    local_average: np.ndarray
    local_optima: list[np.ndarray]
    local_fits: list[LocalFitResult]
    delta_schedule: np.ndarray
    trajectory: list[TrajectoryPoint]
    ledger: CostLedger
    measured_compute_s: float

    def write_trajectory_csv(self, path: str | Path) -> None:
        lines = ["round,agent,loss,dist_to_avg"]
        for p in self.trajectory:
            loss_repr = "" if p.loss is None else repr(p.loss)
            lines.append(f"{p.round},{p.agent},{loss_repr},{p.dist_to_avg!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def backward_round(
    agents: list[AgentState],
    server: ServerState,
    k: int,
    cfg: BackwardConfig,
) -> list[tuple[int, float]]:
    """One backward round: every agent steps and projects against the current
    average, then the server re-averages. Returns per-agent squared distances
    to the pre-round average (the feasibility quantities)."""
    delta = float(cfg.delta_schedule[k])
    prev_avg = server.phi_avg
    feasibility = []
    for agent in agents:
        phi = agent.backward_step(prev_avg, delta, cfg.alpha, cfg.batch_size)
        diff = phi - prev_avg
        feasibility.append((agent.task_id, float(diff @ diff)))
    server.phi_avg = average_params([a.phi for a in agents])
    server.round = k
    return feasibility


def run_meta_backward(
    tasks: list[TaskDataset],
    spec: nn.MlpSpec,
    cfg: BackwardConfig,
    master_seed: int,
    *,
    channel: ChannelConfig | None = None,
    energy: EnergyConfig | None = None,
    init: np.ndarray | None = None,
    local_fits: list[LocalFitResult] | None = None,
) -> BackwardRunResult:
    """Run the full protocol and return the meta-initializer with diagnostics.

    All agents start local training from one shared initial model (drawn from
    the master seed unless `init` is given). Precomputed `local_fits` may be
    injected so several algorithms can share the same offline stage; the
    backward phase uses its own derived rng streams either way.
    """
    if len(tasks) < 1:
        raise ValueError("need at least one task")
    if channel is None:
        channel = ChannelConfig()
    if energy is None:
        energy = EnergyConfig()
    n = len(tasks)
    d = spec.param_count
    if init is None:
        init = nn.init_params(spec, derive_rng(master_seed, STREAM_INIT))
    init = nn.check_params(spec, init)

    agents = [
        AgentState(
            task_id=i,
            spec=spec,
            dataset=task,
            phi=np.array(init, copy=True),
            rng=derive_rng(master_seed, STREAM_LOCAL, i),
        )
        for i, task in enumerate(tasks)
    ]

    ledger = CostLedger(channel=channel)
    measured_total = 0.0

    # Offline stage: each agent fits its own task, then uploads the result.
    t0 = time.perf_counter()
    if local_fits is None:
        fits = [train_local_optimum(agent, cfg.local) for agent in agents]
    else:
        if len(local_fits) != n:
            raise ValueError("local_fits length does not match tasks")
        fits = local_fits
        for agent, fit in zip(agents, fits):
            agent.phi = np.array(fit.phi, copy=True)
    offline_measured = time.perf_counter() - t0
    measured_total += offline_measured
    offline_evals = sum(f.grad_evals for f in fits)
    ledger.record_round(
        0,
        uplinks=n,
        downlinks=0,
        d=d,
        grad_evals=offline_evals,
        wall_time_s=energy.wall_time(offline_evals, offline_measured),
        device_watts=energy.device_watts,
    )

    local_optima = [np.array(a.phi, copy=True) for a in agents]
    server = ServerState(phi_avg=average_params(local_optima), round=cfg.rounds)
    local_average = np.array(server.phi_avg, copy=True)

    schedule = cfg.delta_schedule
    if schedule is None:
        spread = max(float(np.linalg.norm(phi - local_average)) for phi in local_optima)
        delta_max = cfg.delta_max if cfg.delta_max is not None else spread**2 / 4.0
        delta_max = max(delta_max, MIN_DELTA_MAX)
        schedule = geometric_schedule(cfg.rounds, delta_max, cfg.gamma)
    resolved = replace(cfg, delta_schedule=schedule)

    # Fresh ascent-phase streams, independent of how the offline stage ran.
    for agent in agents:
        agent.rng = derive_rng(master_seed, STREAM_AGENT, agent.task_id)

    trajectory: list[TrajectoryPoint] = []

    def snapshot(k: int, feas: dict[int, float] | None, delta: float | None) -> None:
        for agent in agents:
            diff = agent.phi - server.phi_avg
            trajectory.append(
                TrajectoryPoint(
                    round=k,
                    agent=agent.task_id,
                    loss=nn.loss(spec, agent.phi, agent.dataset.train)
                    if cfg.record_loss
                    else None,
                    dist_to_avg=float(np.linalg.norm(diff)),
                    dist_sq_prev_avg=None if feas is None else feas[agent.task_id],
                    delta=delta,
                )
            )

    snapshot(cfg.rounds, None, None)

    for k in range(cfg.rounds - 1, -1, -1):
        t0 = time.perf_counter()
        evals_before = sum(a.grad_evals for a in agents)
        feas = dict(backward_round(agents, server, k, resolved))
        round_evals = sum(a.grad_evals for a in agents) - evals_before
        measured = time.perf_counter() - t0
        measured_total += measured
        ledger.record_round(
            cfg.rounds - k,
            uplinks=n,
            downlinks=channel.broadcast_transfers(n),
            d=d,
            grad_evals=round_evals,
            wall_time_s=energy.wall_time(round_evals, measured),
            device_watts=energy.device_watts,
        )
        snapshot(k, feas, float(schedule[k]))

    return BackwardRunResult(
        theta=np.array(server.phi_avg, copy=True),
        local_average=local_average,
        local_optima=local_optima,
        local_fits=fits,
        delta_schedule=schedule,
        trajectory=trajectory,
        ledger=ledger,
        measured_compute_s=measured_total,
    )
