"""Model-agnostic meta-learning loops over the taped autodiff engine.

The inner loop is plain full-batch gradient descent on the support loss; the
outer loop is Adam on the mean post-adaptation query loss.  The meta-gradient
is exact (second-order): inner updates are built with ``create_graph=True``,
so differentiating the query loss reaches back through every inner step.

Support sets are canonically ordered (lexicographically by input, then label)
before any reduction.  The mean loss is order-independent mathematically;
pinning the summation order makes adaptation bitwise permutation-invariant.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, backward, mul, reduce_mean, reduce_sum, sub, tile_batch
from .models import (
    MlpSpec, forward, forward_batched, forward_conditioned, init_params, leaf_params,
)
from .optim import adam_init, adam_step
from .tasks import Task, rng_stream

__all__ = [
    "MetaConfig", "AdaptTrajectory", "mse_loss", "inner_adapt",
    "meta_objective", "meta_objective_batched", "meta_train", "fine_tune",
    "train_conditioned", "adapted_query_mse", "conditioned_query_mse",
]


@dataclass(frozen=True)
class MetaConfig:
    """Everything a meta-training run depends on, in one frozen record."""

    spec: MlpSpec
    inner_alpha: float = 1e-3
    inner_steps: int = 5
    meta_batch: int = 25
    meta_iters: int = 10_000
    outer_lr: float = 1e-3
    loss: str = "mse"
    k_shot: int = 5
    seed: int = 0
    log_every: int = 100
    first_order: bool = False  # speed-comparison switch; not used by acceptance runs

    def __post_init__(self):
        if self.inner_alpha <= 0:
            raise ValueError("inner_alpha must be positive")
        if min(self.inner_steps, self.meta_batch, self.k_shot, self.log_every) < 1:
            raise ValueError("inner_steps, meta_batch, k_shot, log_every must be >= 1")
        if self.meta_iters < 0:
            raise ValueError("meta_iters must be >= 0")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r} (training paths are MSE-only)")


@dataclass(frozen=True)
class AdaptTrajectory:
    """Loss curves across adaptation steps; entry 0 is pre-adaptation."""

    support: list
    query: list

    def __post_init__(self):
        if len(self.support) != len(self.query):
            raise ValueError("support and query curves must have equal length")

    @property
    def steps(self) -> int:
        return len(self.support) - 1


def mse_loss(pred: Tensor, y: Tensor) -> Tensor:
    r = sub(pred, y)
    return reduce_mean(mul(r, r))


def _canonical(x: np.ndarray, y: np.ndarray):
    """Sort rows lexicographically by input columns, then label columns."""
    combined = np.concatenate([x, y], axis=1)
    order = np.lexsort(combined.T[::-1])
    return x[order], y[order]


def inner_adapt(spec: MlpSpec, params, x_support, y_support,
                alpha: float, steps: int, taped: bool = False):
    """``steps`` gradient-descent updates on the mean support loss.

    With ``taped=True``, ``params`` must be tensors on a live tape and the
    returned tensors stay differentiable w.r.t. them (the meta-gradient
    path).  With ``taped=False``, numpy arrays come back and each step uses
    a throwaway tape.  Either way the input parameters are left untouched.
    """
    x_support = np.asarray(x_support, dtype=np.float64)
    y_support = np.asarray(y_support, dtype=np.float64)
    if x_support.shape[0] == 0:
        raise ValueError("inner_adapt needs a non-empty support set")
    xs, ys = _canonical(x_support, y_support)
    tx, ty = Tensor(xs), Tensor(ys)

    if taped:
        cur = list(params)
        for _ in range(steps):
            loss = mse_loss(forward(spec, cur, tx), ty)
            grads = backward(loss, cur, create_graph=True)
            cur = [sub(p, mul(g, alpha)) for p, g in zip(cur, grads)]
        return cur

    cur = [np.asarray(p, dtype=np.float64) for p in params]
    for _ in range(steps):
        tape = Tape()
        leaves = leaf_params(tape, cur)
        loss = mse_loss(forward(spec, leaves, tx), ty)
        grads = backward(loss, leaves)
        cur = [p - alpha * g.data for p, g in zip(cur, grads)]
    return cur


def meta_objective(spec: MlpSpec, params, tasks, cfg: MetaConfig) -> Tensor:
    """Mean over tasks of the query loss after inner adaptation; fully taped."""
    if not tasks:
        raise ValueError("meta_objective needs a non-empty task batch")
    total = None
    for t in tasks:
        adapted = inner_adapt(spec, params, t.x_support, t.y_support,
                              cfg.inner_alpha, cfg.inner_steps, taped=True)
        loss = mse_loss(forward(spec, adapted, Tensor(t.x_query)), Tensor(t.y_query))
        total = loss if total is None else total + loss
    return mul(total, 1.0 / len(tasks))


def meta_objective_batched(spec: MlpSpec, params, tasks, cfg: MetaConfig) -> Tensor:
    """The same objective as :func:`meta_objective`, one graph for the batch.

    Every task gets its own stacked parameter copy (leading task axis), the
    inner step differentiates the *sum* of per-task mean support losses —
    which, the copies being independent, hands each task exactly its own
    gradient — and the result is the mean query loss over all tasks.  Values
    agree with the per-task loop up to float reassociation; graph size stops
    growing with the batch, which is what makes desk-scale meta-training
    affordable in pure Python.

    Requires equal support/query sizes across the batch and no bias-transform
    block (stack theta_b into the inputs yourself if you need it).
    """
    if not tasks:
        raise ValueError("meta_objective_batched needs a non-empty task batch")
    sup = [_canonical(np.asarray(t.x_support, dtype=np.float64),
                      np.asarray(t.y_support, dtype=np.float64)) for t in tasks]
    if len({x.shape for x, _ in sup}) != 1 or len({t.x_query.shape for t in tasks}) != 1:
        raise ValueError("batched meta-objective needs equal-sized tasks")
    if sup[0][0].shape[0] == 0:
        raise ValueError("inner_adapt needs a non-empty support set")
    xs = Tensor(np.stack([x for x, _ in sup]))
    ys = Tensor(np.stack([y for _, y in sup]))
    xq = Tensor(np.stack([np.asarray(t.x_query, dtype=np.float64) for t in tasks]))
    yq = Tensor(np.stack([np.asarray(t.y_query, dtype=np.float64) for t in tasks]))

    per_task = [tile_batch(p, len(tasks)) for p in params]
    per_task_elems = ys.data.shape[1] * ys.data.shape[2]
    for _ in range(cfg.inner_steps):
        d = sub(forward_batched(spec, per_task, xs), ys)
        loss = mul(reduce_sum(mul(d, d)), 1.0 / per_task_elems)
        grads = backward(loss, per_task, create_graph=True)
        per_task = [sub(p, mul(g, cfg.inner_alpha)) for p, g in zip(per_task, grads)]
    dq = sub(forward_batched(spec, per_task, xq), yq)
    return reduce_mean(mul(dq, dq))


def meta_train(cfg: MetaConfig, task_sampler):
    """Adam on the meta-objective; returns (params, loss curve).

    ``task_sampler(rng) -> Task`` supplies each meta-batch element.  The curve
    is a list of (iteration, meta_loss, seconds_elapsed) rows, one per
    ``cfg.log_every`` iterations (iteration 1 always logs).  Non-finite loss
    aborts immediately rather than training on garbage.

    Plain architectures train through the batched objective; a spec with a
    bias-transform block falls back to the per-task loop (same objective,
    task-by-task graph).
    """
    objective = meta_objective if cfg.spec.d_b else meta_objective_batched
    rng = rng_stream(cfg.seed)
    params = init_params(cfg.spec, rng)
    state = adam_init(params)
    curve = []
    t0 = time.monotonic()
    for it in range(1, cfg.meta_iters + 1):
        batch = [task_sampler(rng) for _ in range(cfg.meta_batch)]
        tape = Tape()
        leaves = leaf_params(tape, params)
        obj = objective(cfg.spec, leaves, batch, cfg)
        val = obj.item()
        if not np.isfinite(val):
            raise RuntimeError(
                f"meta-training diverged at iteration {it}: loss={val!r} "
                f"(alpha={cfg.inner_alpha}, outer_lr={cfg.outer_lr})")
        grads = [g.data for g in backward(obj, leaves)]
        params, state = adam_step(params, grads, state, lr=cfg.outer_lr)
        if it == 1 or it % cfg.log_every == 0:
            curve.append((it, val, time.monotonic() - t0))
    return params, curve


def fine_tune(spec: MlpSpec, params, task: Task, alpha: float, max_steps: int,
              optimizer: str = "gd"):
    """Training curve on one task's support set, same points every step.

    ``optimizer="gd"`` takes plain full-batch gradient steps of size
    ``alpha`` — the procedure a meta-learned initialization was trained for.
    ``optimizer="adam"`` is the baseline for arbitrary initializations,
    which plain descent moves far too slowly at any stable step size: Adam
    at ``alpha``, held constant for the first 80% of the budget and then
    annealed by 0.99 per step so the end point settles onto the memorized
    support instead of bouncing around it.

    Returns (adapted_params, trajectory).  The trajectory holds support and
    query MSE before adaptation (entry 0) and after each step; the input
    parameters are not modified.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if optimizer not in ("gd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r} (have gd, adam)")
    xs, ys = _canonical(np.asarray(task.x_support, dtype=np.float64),
                        np.asarray(task.y_support, dtype=np.float64))
    tx, ty = Tensor(xs), Tensor(ys)
    cur = [np.asarray(p, dtype=np.float64).copy() for p in params]
    state = adam_init(cur) if optimizer == "adam" else None
    anneal_from = int(0.8 * max_steps)
    sup, qry = [], []
    for step in range(max_steps + 1):
        sup.append(_mse(spec, cur, task.x_support, task.y_support))
        qry.append(_mse(spec, cur, task.x_query, task.y_query))
        if step == max_steps:
            break
        tape = Tape()
        leaves = leaf_params(tape, cur)
        loss = mse_loss(forward(spec, leaves, tx), ty)
        grads = [g.data for g in backward(loss, leaves)]
        if optimizer == "gd":
            cur = [p - alpha * g for p, g in zip(cur, grads)]
        else:
            lr = alpha if step < anneal_from else alpha * 0.99 ** (step - anneal_from)
            cur, state = adam_step(cur, grads, state, lr=lr)
    return cur, AdaptTrajectory(support=sup, query=qry)


def _mse(spec, params, x, y) -> float:
    return mse_loss(forward(spec, params, Tensor(x)), Tensor(y)).item()


def adapted_query_mse(spec: MlpSpec, params, task: Task,
                      alpha: float, steps: int) -> float:
    """Query MSE after ``steps`` adaptation steps (0 = no adaptation)."""
    cur = params if steps == 0 else inner_adapt(
        spec, params, task.x_support, task.y_support, alpha, steps, taped=False)
    return _mse(spec, cur, task.x_query, task.y_query)


def conditioned_query_mse(spec: MlpSpec, params, task: Task) -> float:
    """Query MSE of the conditioned oracle given the task's true descriptor."""
    pred = forward_conditioned(spec, params, Tensor(task.x_query), task.descriptor)
    return mse_loss(pred, Tensor(task.y_query)).item()


def _pool_conditioned(tasks):
    """Stack every point of every task into ((input | descriptor), label) arrays."""
    xs, ys = [], []
    for t in tasks:
        x = np.concatenate([t.x_support, t.x_query], axis=0)
        y = np.concatenate([t.y_support, t.y_query], axis=0)
        desc = np.broadcast_to(t.descriptor, (x.shape[0], t.descriptor.size))
        xs.append(np.concatenate([x, desc], axis=1))
        ys.append(y)
    return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0)


def train_conditioned(cfg: MetaConfig, task_sampler, stop_below: float | None = None,
                      holdout=None):
    """Supervised oracle: regress (input, task descriptor) -> label, no adaptation.

    The architecture in ``cfg.spec`` must already budget ``d_in`` for the
    descriptor columns.  Each iteration pools every point (support and query)
    of a fresh task batch.  Adam runs at ``outer_lr`` for the first 80% of the
    budget, then decays geometrically to a tenth of it — the oracle is a
    train-to-convergence baseline, and without the tail it orbits its floor
    at whatever radius the constant step size sustains.

    ``stop_below`` turns ``cfg.meta_iters`` into a cap: every 10 iterations
    the model is scored on a fixed held-out task pool (``holdout``, or 100
    tasks drawn once from a dedicated stream), and training halts when that
    score drops under the target.  Stopping on a *fixed* pool matters: a
    smoothed training-batch loss redraws its noise every iteration, so the
    stop either lags (fast architectures shoot far past the target inside
    the window) or dip-hunts (slow ones halt on a lucky fluctuation), and
    either way the stopping loss depends on convergence speed.  Against a
    fixed pool the score is smooth in the iterate; once it first dips under
    1.3x the target the step size is also cut to a third, so every
    architecture crosses the line at shallow slope and lands *at* the
    target, not somewhere below in proportion to how fast it converges.
    Callers comparing architectures should pass the same ``holdout`` to each
    so the pool's sampling offset cancels.  Returns (params, loss curve).
    """
    rng = rng_stream(cfg.seed)
    params = init_params(cfg.spec, rng)
    state = adam_init(params)
    if stop_below is not None and holdout is None:
        hold_rng = rng_stream(cfg.seed, stream=_HOLDOUT_STREAM)
        holdout = [task_sampler(hold_rng) for _ in range(100)]
    x_hold, y_hold = _pool_conditioned(holdout) if stop_below is not None else (None, None)
    anneal_from = int(0.8 * cfg.meta_iters)
    tail = max(1, cfg.meta_iters - anneal_from)
    curve = []
    creeping = False
    t0 = time.monotonic()
    for it in range(1, cfg.meta_iters + 1):
        x_all, y_all = _pool_conditioned(
            task_sampler(rng) for _ in range(cfg.meta_batch))
        tape = Tape()
        leaves = leaf_params(tape, params)
        loss = mse_loss(forward(cfg.spec, leaves, Tensor(x_all)), Tensor(y_all))
        val = loss.item()
        if not np.isfinite(val):
            raise RuntimeError(f"conditioned training diverged at iteration {it}: loss={val!r}")
        grads = [g.data for g in backward(loss, leaves)]
        lr = cfg.outer_lr if it <= anneal_from else \
            cfg.outer_lr * 0.1 ** ((it - anneal_from) / tail)
        if creeping:
            lr = min(lr, cfg.outer_lr / 3.0)
        params, state = adam_step(params, grads, state, lr=lr)
        if it == 1 or it % cfg.log_every == 0:
            curve.append((it, val, time.monotonic() - t0))
        if stop_below is not None and it % 10 == 0:
            held = _mse(cfg.spec, params, x_hold, y_hold)
            creeping = creeping or held < 1.3 * stop_below
            if held < stop_below:
                if curve[-1][0] != it:
                    curve.append((it, val, time.monotonic() - t0))
                break
    return params, curve
