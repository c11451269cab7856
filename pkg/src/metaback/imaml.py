"""Implicit-gradient meta-learning baseline.

Each outer round broadcasts the meta-model, lets every agent approximately
solve the proximal inner problem

    min_phi  L(phi, train) + (lam / 2) ||phi - theta||^2

with a few SGD steps, and pulls back the test-set gradient through the
implicit Jacobian by solving (I + H/lam) x = g_test with conjugate gradient,
where H is the train-loss Hessian at the inner solution (applied matrix-free
through Hessian-vector products). The server averages the per-task meta
gradients and takes one descent step on theta.

Configurations are conventionally written X-Y: X outer rounds, Y inner steps.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .costs import ChannelConfig, CostLedger, EnergyConfig
from .errors import CgBreakdownError, DivergenceError
from .rng import STREAM_IMAML, derive_rng
from .tasks import TaskDataset

CG_TOL_REL = 1e-10


@dataclass(frozen=True)
class ImamlConfig:
    outer_steps: int = 50  # X
    inner_steps: int = 50  # Y
    cg_steps: int = 5
    lam: float = 2.0
    inner_lr: float = 0.01
    outer_lr: float = 0.01
    batch_size: int | None = 100
    hvp_eps: float = 1e-4

    def __post_init__(self) -> None:
        if self.outer_steps < 0 or self.inner_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.cg_steps < 1:
            raise ValueError("cg_steps must be >= 1")
        if min(self.lam, self.inner_lr, self.outer_lr, self.hvp_eps) <= 0:
            raise ValueError("lam, learning rates, and hvp_eps must be positive")


def inner_solve(
    spec: nn.MlpSpec,
    theta: np.ndarray,
    task: TaskDataset,
    cfg: ImamlConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Y SGD steps from theta on the proximally regularized train loss."""
    theta = nn.check_params(spec, theta)
    phi = np.array(theta, copy=True)
    data = task.train
    for idx in nn.minibatch_indices(len(data), cfg.batch_size, cfg.inner_steps, rng):
        g = nn.grad(spec, phi, data.take(idx)) + cfg.lam * (phi - theta)
        phi -= cfg.inner_lr * g
        if not np.isfinite(phi).all():
            raise DivergenceError("inner solve produced non-finite parameters")
    return phi


def cg_solve(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    steps: int,
    tol_rel: float = CG_TOL_REL,
) -> np.ndarray:
    """Conjugate gradient for A x = b from x0 = 0.

    Runs `steps` iterations or stops early once the residual norm falls below
    tol_rel * ||b||. Raises CgBreakdownError on non-finite iterates, which
    signals an indefinite or hopelessly ill-conditioned system.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    tol = tol_rel * math.sqrt(float(b @ b))
    if math.sqrt(rs) <= tol:
        return x
    for _ in range(steps):
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if not math.isfinite(pAp) or pAp == 0.0:
            raise CgBreakdownError("non-finite or zero curvature along search direction")
        step = rs / pAp
        x += step * p
        r -= step * Ap
        if not np.isfinite(x).all():
            raise CgBreakdownError("non-finite CG iterate")
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= tol:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def meta_gradient(
    spec: nn.MlpSpec,
    task: TaskDataset,
    phi: np.ndarray,
    cfg: ImamlConfig,
) -> tuple[np.ndarray, int]:
    """Per-task implicit meta-gradient at the inner solution `phi`.

    Solves (I + H/lam) x = grad(test loss) with CG; H is applied matrix-free
    via finite-difference Hessian-vector products on the full train batch.
    Returns (meta_gradient, gradient_evaluations), counting the test gradient
    as one evaluation and each Hessian-vector product as two.
    """
    evals = 1
    b = nn.grad(spec, phi, task.test)

    hvp_calls = 0

    def apply_A(v: np.ndarray) -> np.ndarray:
        nonlocal hvp_calls
        hvp_calls += 1
        return v + nn.hvp(spec, phi, task.train, v, cfg.hvp_eps) / cfg.lam

    x = cg_solve(apply_A, b, cfg.cg_steps)
    return x, evals + 2 * hvp_calls


@dataclass
class ImamlRunResult:
    theta: np.ndarray
    ledger: CostLedger
    measured_compute_s: float


def run_imaml(
    tasks: list[TaskDataset],
    spec: nn.MlpSpec,
    cfg: ImamlConfig,
    init: np.ndarray,
    master_seed: int,
    *,
    channel: ChannelConfig | None = None,
    energy: EnergyConfig | None = None,
) -> ImamlRunResult:
    """X outer rounds of federated implicit-gradient meta-training.

    Every round: broadcast theta, each agent runs the inner solve and reports
    its implicit meta-gradient, the server averages them (fixed task-id order)
    and applies one step. The ledger records one broadcast and one upload per
    agent per round, plus exact gradient-evaluation counts.
    """
    if len(tasks) < 1:
        raise ValueError("need at least one task")
    if channel is None:
        channel = ChannelConfig()
    if energy is None:
        energy = EnergyConfig()
    n = len(tasks)
    d = spec.param_count
    theta = np.array(nn.check_params(spec, init), copy=True)
    rngs = [derive_rng(master_seed, STREAM_IMAML, i) for i in range(n)]
    ledger = CostLedger(channel=channel)
    measured_total = 0.0

    for outer in range(1, cfg.outer_steps + 1):
        t0 = time.perf_counter()
        round_evals = 0
        grads = []
        for i, task in enumerate(tasks):
            phi = inner_solve(spec, theta, task, cfg, rngs[i])
            round_evals += cfg.inner_steps
            g, evals = meta_gradient(spec, task, phi, cfg)
            round_evals += evals
            grads.append(g)
        theta -= cfg.outer_lr * np.mean(np.stack(grads, axis=0), axis=0)
        measured = time.perf_counter() - t0
        measured_total += measured
        ledger.record_round(
            outer,
            uplinks=n,
            downlinks=channel.broadcast_transfers(n),
            d=d,
            grad_evals=round_evals,
            wall_time_s=energy.wall_time(round_evals, measured),
            device_watts=energy.device_watts,
        )

    return ImamlRunResult(theta=theta, ledger=ledger, measured_compute_s=measured_total)
