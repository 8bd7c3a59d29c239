"""Experiment runners: each turns a :class:`~metagrad.config.RunConfig` into
files on disk plus in-memory results the caller (CLI or test) can assert on.

Output layout is deliberately boring — one CSV or JSONL per run, first line a
``#`` comment echoing the config snapshot and seed.  Nothing time-dependent is
written: re-running the same config and seed reproduces every output file
byte for byte.  Aggregates report mean and a 95% normal-approximation
confidence interval (1.96 standard errors), omitted when there are fewer than
two trials to estimate a spread from.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, format_value
from .maml import (
    MetaConfig, adapted_query_mse, conditioned_query_mse, fine_tune,
    meta_train, train_conditioned,
)
from .models import MlpSpec, depth_widths, init_params, load_checkpoint, save_checkpoint
from .tasks import TaskRanges, dump_tasks, ood_sweep, rng_stream, sample_polynomial, sample_sinusoid
from .universality import build_construction, off_by_one_construction, run_all_certificates, write_report

__all__ = [
    "ExperimentRecord", "mean_ci", "write_csv",
    "run_certify", "run_train_sinusoid", "run_finetune", "run_ood_sweep",
    "run_depth_sweep", "run_dump_tasks",
]


def mean_ci(values):
    """(mean, half-width of the 95% CI); CI is None below two samples."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean_ci needs at least one value")
    m = float(arr.mean())
    if arr.size < 2:
        return m, None
    sem = float(arr.std(ddof=1)) / np.sqrt(arr.size)
    return m, float(1.96 * sem)


@dataclass(frozen=True)
class ExperimentRecord:
    """One measured cell: the per-trial series plus its aggregate and timing."""

    config: str          # snapshot of the settings that produced it
    label: str           # what this cell measures, e.g. "amplitude[5.0,6.0] postadapt"
    series: tuple        # per-trial metric values
    mean: float
    ci: float | None     # 95% half-width; None with fewer than two trials
    seconds: float       # wall-clock spent producing the series

    @classmethod
    def aggregate(cls, config, label, series, seconds):
        m, ci = mean_ci(series)
        return cls(config, label, tuple(float(v) for v in series), m, ci, float(seconds))


def write_csv(path, snapshot: str, header, rows) -> None:
    """CSV with a leading ``#`` config/seed comment; floats round-trip exactly."""
    with open(path, "w") as fh:
        fh.write(f"# {snapshot}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else format_value(v) for v in row) + "\n")


# -- certify ---------------------------------------------------------------------

def run_certify(rc: RunConfig):
    """Build the chain, run every certificate, write the JSONL report.

    Returns (certificates, report path).  ``inject_fault`` swaps in the
    deliberately mis-indexed construction so the caller can watch the
    round-trip certificates catch it.
    """
    p = rc.params
    if p["inject_fault"]:
        con = off_by_one_construction(B=p["bins"], eps=p["eps"], alpha=p["alpha"])
    else:
        con = build_construction(B=p["bins"], eps=p["eps"], alpha=p["alpha"],
                                 selector=p["selector"])
    certs = run_all_certificates(con, seed=rc.seed)
    path = rc.path(p["report"])
    write_report(path, certs, meta={"snapshot": rc.snapshot(), "seed": rc.seed})
    return certs, path


# -- meta-training ------------------------------------------------------------------

def _sampler(family: str, ranges: TaskRanges):
    if family == "sinusoid":
        return lambda rng: sample_sinusoid(rng, ranges)
    if family == "polynomial":
        return lambda rng: sample_polynomial(rng, k_support=ranges.k_support,
                                             k_query=ranges.k_query)
    raise ValueError(f"unknown task family {family!r} (have sinusoid, polynomial)")


def run_train_sinusoid(rc: RunConfig):
    """Meta-train on the sinusoid family; write checkpoint + loss curve.

    Returns (spec, params, curve).  The curve CSV holds (iteration,
    meta_loss); wall-clock stays out of the file so reruns are byte-identical.
    """
    p = rc.params
    spec = MlpSpec(d_in=1, d_out=1, hidden=tuple(p["hidden"]))
    cfg = MetaConfig(
        spec=spec, inner_alpha=p["inner_alpha"], inner_steps=p["inner_steps"],
        meta_batch=p["batch"], meta_iters=p["iters"], outer_lr=p["outer_lr"],
        k_shot=p["k_shot"], seed=rc.seed, log_every=p["log_every"])
    ranges = TaskRanges(k_support=p["k_shot"], k_query=p["train_k_query"])
    params, curve = meta_train(cfg, _sampler("sinusoid", ranges))
    save_checkpoint(rc.path(p["checkpoint"]), spec, params)
    write_csv(rc.path(p["curve"]), rc.snapshot(), ["iteration", "meta_loss"],
              [(it, loss) for it, loss, _ in curve])
    return spec, params, curve


# -- fine-tuning comparison -------------------------------------------------------

def run_finetune(rc: RunConfig):
    """Meta-learned init vs. fresh random init, fine-tuned on the same tasks.

    For each of ``trials`` fresh tasks, both methods take ``max_steps``
    optimization steps on the task's support set; support and query MSE are
    recorded at every step (step 0 = before any update).  The meta-learned
    initialization uses the plain gradient descent it was trained for; the
    fresh initialization gets annealed Adam, without which it cannot fit the
    support at all.  The CSV holds one row per (method, step) with mean and
    95% CI across tasks.

    Returns {"maml": (support_curves, query_curves), "scratch": ...} with
    arrays of shape (trials, max_steps + 1).
    """
    p = rc.params
    spec, maml_params = load_checkpoint(p["checkpoint"])
    steps = p["max_steps"]
    task_rng = rng_stream(rc.seed)
    init_rng = rng_stream(rc.seed, stream=1)

    curves = {"maml": ([], []), "scratch": ([], [])}
    for _ in range(rc.trials):
        task = sample_sinusoid(task_rng, TaskRanges(k_support=p["k_shot"]))
        scratch_params = init_params(spec, init_rng)
        for method, params, lr, opt in (
                ("maml", maml_params, p["alpha"], "gd"),
                ("scratch", scratch_params, p["scratch_lr"], "adam")):
            _, traj = fine_tune(spec, params, task, lr, steps, optimizer=opt)
            curves[method][0].append(traj.support)
            curves[method][1].append(traj.query)

    out = {m: (np.asarray(s), np.asarray(q)) for m, (s, q) in curves.items()}
    rows = []
    for method in ("maml", "scratch"):
        sup, qry = out[method]
        for step in range(steps + 1):
            sm, sc = mean_ci(sup[:, step])
            qm, qc = mean_ci(qry[:, step])
            rows.append((step, sm, sc, qm, qc, method))
    write_csv(rc.path(p["csv"]), rc.snapshot(),
              ["step", "support_mse_mean", "support_mse_ci",
               "query_mse_mean", "query_mse_ci", "method"], rows)
    return out


# -- out-of-distribution sweep ------------------------------------------------------

def run_ood_sweep(rc: RunConfig):
    """Adaptation quality as tasks leave the training distribution.

    One band per grid value (in-distribution while the grid point is inside
    the training interval, the fresh extrapolated band beyond it); ``trials``
    tasks per band, each scored before adaptation and after ``steps``
    adaptation steps.  Bands use independent seeded streams, so extending the
    grid never changes earlier rows.

    Returns a list of ExperimentRecords, two per band (preadapt/postadapt).
    """
    p = rc.params
    spec, params = load_checkpoint(p["checkpoint"])
    bands = ood_sweep(p["axis"], p["grid"])
    records, rows = [], []
    for band_idx, ranges in enumerate(bands):
        rng = rng_stream(rc.seed, stream=band_idx)
        tasks = [sample_sinusoid(rng, ranges) for _ in range(rc.trials)]
        lo, hi = getattr(ranges, p["axis"])
        t0 = time.monotonic()
        pre = [adapted_query_mse(spec, params, t, p["alpha"], 0) for t in tasks]
        post = [adapted_query_mse(spec, params, t, p["alpha"], p["steps"]) for t in tasks]
        dt = time.monotonic() - t0
        for method, series in (("preadapt", pre), ("postadapt", post)):
            rec = ExperimentRecord.aggregate(
                rc.snapshot(), f"{p['axis']}[{lo},{hi}] {method}", series, dt / 2)
            records.append(rec)
            rows.append((p["axis"], lo, hi, method, rec.mean, rec.ci, rc.trials))
    write_csv(rc.path(p["csv"]), rc.snapshot(),
              ["axis", "range_lo", "range_hi", "method",
               "query_mse_mean", "query_mse_ci", "trials"], rows)
    return records


# -- depth sweep --------------------------------------------------------------------

def _cell_seed(base: int, depth: int, rep: int, method_idx: int) -> int:
    """Distinct deterministic seed per (depth, repetition, method) cell."""
    return base + 1000 * depth + 10 * rep + method_idx


def run_depth_sweep(rc: RunConfig):
    """Meta-learning vs. a descriptor-conditioned oracle across network depth.

    The task family is cubic polynomials (coefficients uniform in [−1, 1],
    inputs in [−3, 3]), learned from 40-point support sets with a single
    adaptation step.  Every (depth, repetition) cell trains a fresh
    meta-learner — which carries a trainable bias-transform block of width
    ``bias_dim`` alongside its scalar input — and a fresh oracle at matched
    hidden widths (parameter budget held flat across depths), then scores
    both on one shared evaluation task set: the meta-learner by
    post-adaptation query MSE, the oracle — handed the true coefficient
    vector instead of support points — by plain query MSE.  One CSV row per
    (depth, repetition, method).

    Returns {(depth, rep, method): mean query MSE}.
    """
    p = rc.params
    k_support, k_query = p["k_support"], p["k_query"]
    eval_rng = rng_stream(rc.seed, stream=10_000)
    eval_tasks = [sample_polynomial(eval_rng, k_support=k_support, k_query=k_query)
                  for _ in range(rc.trials)]
    sampler = lambda rng: sample_polynomial(rng, k_support=k_support, k_query=k_query)
    desc_dim = eval_tasks[0].descriptor.size
    results, rows = {}, []
    for depth in p["depths"]:
        hidden = depth_widths(depth)
        for rep in range(p["reps"]):
            cfg = MetaConfig(
                spec=MlpSpec(1, 1, hidden, d_b=p["bias_dim"]),
                inner_alpha=p["inner_alpha"], inner_steps=p["inner_steps"],
                meta_batch=p["batch"], meta_iters=p["iters"],
                outer_lr=p["outer_lr"], k_shot=k_support,
                seed=_cell_seed(rc.seed, depth, rep, 0), log_every=10_000)
            mp, _ = meta_train(cfg, sampler)
            maml_mse = float(np.mean([
                adapted_query_mse(cfg.spec, mp, t, p["inner_alpha"], p["inner_steps"])
                for t in eval_tasks]))

            ocfg = MetaConfig(
                spec=MlpSpec(1 + desc_dim, 1, hidden), inner_alpha=p["inner_alpha"],
                inner_steps=1, meta_batch=p["oracle_batch"],
                meta_iters=p["oracle_iters"], outer_lr=p["oracle_lr"],
                k_shot=k_support, seed=_cell_seed(rc.seed, depth, rep, 1),
                log_every=100_000)
            op, _ = train_conditioned(ocfg, sampler, stop_below=p["oracle_target"])
            oracle_mse = float(np.mean([
                conditioned_query_mse(ocfg.spec, op, t) for t in eval_tasks]))

            for method, mse in (("maml", maml_mse), ("conditioned", oracle_mse)):
                results[(depth, rep, method)] = mse
                rows.append((depth, rep, method, mse))
                print(f"depth={depth} rep={rep} {method}: query_mse={mse:.4f}",
                      flush=True)
    write_csv(rc.path(p["csv"]), rc.snapshot(),
              ["depth", "rep", "method", "query_mse"], rows)
    return results


# -- task dumps ---------------------------------------------------------------------

def run_dump_tasks(rc: RunConfig):
    """Sample ``trials`` tasks from one seeded stream and write them as JSONL."""
    p = rc.params
    rng = rng_stream(rc.seed)
    ranges = TaskRanges(k_support=p["k_shot"], k_query=p["k_query"])
    sample = _sampler(p["family"], ranges)
    tasks = [sample(rng) for _ in range(rc.trials)]
    path = rc.path(p["jsonl"])
    dump_tasks(path, tasks)
    return tasks, path
