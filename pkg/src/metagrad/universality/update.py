"""What one gradient step does to the chain, exactly and in closed form.

The pipeline under study: show the network a single training pair (x, y),
take one gradient-descent step of size alpha on every layer matrix and on
theta_b, then evaluate at a query x*.  The middle block of the post-update
activation, z-bar*, is the learned quantity:

    z-bar* = -alpha * sum_i A_i e-bar(y) k_i(x, x*)          (closed form)
    k_i(x, x*) = phi~(x; 0)^T B_i^T B_i phi~(x*; theta_b')

Because the error vector has a zero top block and the forward activations
have zero middle block, every higher-order term in the product of updated
layers cancels *identically* — the closed form is exact up to float rounding,
not merely up to O(alpha²).  The v-vector v = z-bar*/(-alpha) then carries a
complete description of (bin(x), bin(x*), y), which ``decode_v`` recovers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .construction import (
    Construction, build_chain, error_gradient, pair_index, phi_feature, phi_full,
)

__all__ = [
    "DecodeMarginError", "DegenerateSignalError", "AmbiguousBranchError",
    "DuplicateSupportError", "TargetTable", "random_target_table",
    "closed_form_zbar", "gradient_step_zbar", "updated_chain", "theta_b_after",
    "kernel_value", "v_vector", "decode_v", "kshot_v",
    "g_pre", "h_post", "f_out_multiplexer", "end_to_end_prediction",
    "chain_gradients", "DECODE_MARGIN", "DEGENERATE_NORM",
]

# A decoded block must dominate every other block by this ratio.
DECODE_MARGIN = 0.1
# Below this infinity norm the v-vector is treated as carrying no signal.
DEGENERATE_NORM = 1e-9


class DecodeMarginError(ValueError):
    """No block dominates clearly enough — the selector eps is too large."""


class DegenerateSignalError(ValueError):
    """The v-vector is numerically zero (label 0 writes nothing)."""


class AmbiguousBranchError(ValueError):
    """The middle block sits between the multiplexer's on/off thresholds."""


class DuplicateSupportError(ValueError):
    """Two support points share an input value; continuous labels forbid that."""


def theta_b_after(con: Construction, y, loss: str = "mse") -> float:
    """Post-step bias transform: theta_b' = -alpha * (bottom of the error vector).

    Exact — theta_b touches the loss only through the bottom scalar path,
    whose layer weights are all 1.
    """
    return -con.alpha * float(error_gradient(con, y, loss)[-1])


def kernel_value(con: Construction, x: float, xstar: float, i: int,
                 theta_b_prime: float) -> float:
    """k_i(x, x*) for layer i in 1..N."""
    bi = con.Bsel(i)
    fx = phi_feature(x, 0.0, con.bin_edges)
    fq = phi_feature(xstar, theta_b_prime, con.bin_edges)
    return float(fx @ bi.T @ bi @ fq)


def closed_form_zbar(con: Construction, x: float, y, xstar: float,
                     loss: str = "mse") -> np.ndarray:
    """Evaluate the closed form of z-bar* directly from the designed selectors."""
    e = error_gradient(con, y, loss)
    ebar = e[con.dim_top:con.dim_top + con.dim_mid]
    tbp = theta_b_after(con, y, loss)
    out = np.zeros(con.dim_mid)
    for i in range(1, con.N + 1):
        k = kernel_value(con, x, xstar, i, tbp)
        if k != 0.0:
            out += con.A(i) * ebar * k
    return -con.alpha * out


def chain_gradients(con: Construction, x: float, y, loss: str = "mse"):
    """Per-layer loss gradients dl/dW_i = r_i u_i^T via the outer-product rule.

    Convention: the chain output is W_1 W_2 ... W_N phi, so layer N touches
    the input first.  u_i is the activation *entering* layer i (the product
    of layers i+1..N applied to phi) and r_i is the error backpropagated
    through layers 1..i-1.  Returns (ws, grads, grad_theta_b) with ws the
    pre-update chain, ws[i-1] = W_i.
    """
    ws = build_chain(con)
    e = error_gradient(con, y, loss)
    u = [None] * (con.N + 1)
    u[con.N] = phi_full(con, x, 0.0)
    for i in range(con.N - 1, 0, -1):
        u[i] = ws[i] @ u[i + 1]            # ws[i] is W_{i+1}
    r = [None] * (con.N + 1)
    r[1] = e
    for i in range(2, con.N + 1):
        r[i] = ws[i - 2].T @ r[i - 1]      # ws[i-2] is W_{i-1}
    grads = [np.outer(r[i], u[i]) for i in range(1, con.N + 1)]
    return ws, grads, float(e[-1])


def updated_chain(con: Construction, x: float, y, loss: str = "mse"):
    """Chain after the step: (list of W_i - alpha*grad_i, theta_b')."""
    ws, grads, ge_b = chain_gradients(con, x, y, loss)
    return [w - con.alpha * g for w, g in zip(ws, grads)], -con.alpha * ge_b


def gradient_step_zbar(con: Construction, x: float, y, xstar: float,
                       loss: str = "mse") -> np.ndarray:
    """Middle block of the *actual* post-update activation at x*.

    Unlike the closed form this routine multiplies out the genuinely updated
    layer matrices, higher-order terms and all.
    """
    ws_new, tbp = updated_chain(con, x, y, loss)
    z = phi_full(con, xstar, tbp)
    for w in reversed(ws_new):             # W_N reaches the input first
        z = w @ z
    return z[con.dim_top:con.dim_top + con.dim_mid]


# -- information content of the update ------------------------------------------

def v_vector(con: Construction, x: float, xstar: float, y,
             loss: str = "mse") -> np.ndarray:
    """v = z-bar*/(-alpha): the step-size-free description of (x, x*, y)."""
    if con.alpha == 0.0:
        raise ValueError("v_vector needs alpha > 0 (the step must actually happen)")
    return closed_form_zbar(con, x, y, xstar, loss) / (-con.alpha)


def decode_v(con: Construction, v: np.ndarray):
    """Recover (input bin j, query bin l, label) from a v-vector.

    The dominant d_y-block (selector gain 1+eps) names the bin pair; dividing
    the gain back out recovers the label.  Raises
    :class:`DegenerateSignalError` on a numerically zero vector and
    :class:`DecodeMarginError` when the runner-up block is within
    ``DECODE_MARGIN`` of the winner (eps far too large to decode).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (con.dim_mid,):
        raise ValueError(f"v has shape {v.shape}, expected ({con.dim_mid},)")
    if np.max(np.abs(v)) < DEGENERATE_NORM:
        raise DegenerateSignalError(
            "v-vector is numerically zero; a zero label writes no information")
    blocks = v.reshape(con.B * con.B, con.d_y)
    norms = np.max(np.abs(blocks), axis=1)
    k = int(np.argmax(norms))
    runner = float(np.partition(norms, -2)[-2]) if norms.size > 1 else 0.0
    if runner > DECODE_MARGIN * norms[k]:
        raise DecodeMarginError(
            f"no dominant block: runner-up/winner = {runner / norms[k]:.3f} "
            f"> {DECODE_MARGIN} (selector eps too large to decode)")
    y = blocks[k] / (1.0 + con.eps)
    return k % con.B, k // con.B, (float(y[0]) if con.d_y == 1 else y)


def kshot_v(con: Construction, support, xstar: float, loss: str = "mse") -> np.ndarray:
    """Mean v-vector over a K-point support set, summed in canonical order.

    ``support`` is a sequence of (x, y) pairs.  Exact duplicate inputs are
    rejected: with continuous labels two points at one input cannot be
    averaged into a faithful description.
    """
    support = list(support)
    if not support:
        raise ValueError("kshot_v needs a non-empty support set")
    xs = [float(x) for x, _ in support]
    if len(set(xs)) != len(xs):
        raise DuplicateSupportError(
            "duplicate support inputs: continuous-label decoding requires "
            "all support x values to be distinct")
    order = sorted(range(len(support)),
                   key=lambda i: (xs[i], np.atleast_1d(support[i][1]).tolist()))
    total = np.zeros(con.dim_mid)
    for i in order:
        x, y = support[i]
        total = total + v_vector(con, x, xstar, y, loss)
    return total / len(support)


# -- the output head -------------------------------------------------------------

@dataclass(frozen=True)
class TargetTable:
    """Arbitrary target values indexed by (input bin, label index, query bin)."""

    labels: np.ndarray  # (L,) the label grid the table is defined over
    values: np.ndarray  # (B, L, B) target outputs

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[1] != self.labels.shape[0]:
            raise ValueError(
                f"table shape {self.values.shape} inconsistent with "
                f"{self.labels.shape[0]} labels")

    def lookup(self, j: int, y: float, l: int) -> float:
        idx = int(np.argmin(np.abs(self.labels - y)))
        return float(self.values[j, idx, l])


def random_target_table(con: Construction, labels, rng: np.random.Generator,
                        lo: float = -1.0, hi: float = 1.0) -> TargetTable:
    labels = np.asarray(labels, dtype=np.float64)
    return TargetTable(labels=labels,
                       values=rng.uniform(lo, hi, size=(con.B, labels.size, con.B)))


def g_pre(con: Construction, z: np.ndarray) -> np.ndarray:
    """Pre-update output head: the linear map W_g z (identically zero before
    the step, because both the middle block and theta_b start at zero)."""
    return con.W_g() @ z


def h_post(con: Construction, zbar: np.ndarray, table: TargetTable) -> float:
    """Post-update head: decode the written information, look up the target.

    Maps the all-zero vector to 0 (so it can stand in for a network that
    outputs zero at zero).
    """
    if np.max(np.abs(zbar)) == 0.0:
        return 0.0
    j, l, y = decode_v(con, np.asarray(zbar) / (-con.alpha))
    return table.lookup(j, float(np.atleast_1d(y)[0]), l)


def f_out_multiplexer(con: Construction, z: np.ndarray, table: TargetTable,
                      post_update: bool):
    """Branch on whether the gradient step has written anything into z-bar.

    Middle-block norm <= tau0 = alpha*eps: the pre-update regime — return
    g_pre(z).  Norm >= 2*tau0: the written regime — return h_post.  In
    between, neither branch is trustworthy and the call fails loudly.  A
    written z-bar with ``post_update=False`` is a contract violation (the
    pre-update middle block is identically zero) and also fails.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (con.dim,):
        raise ValueError(f"z has shape {z.shape}, expected ({con.dim},)")
    zbar = z[con.dim_top:con.dim_top + con.dim_mid]
    tau0 = con.alpha * con.eps
    norm = float(np.max(np.abs(zbar))) if zbar.size else 0.0
    if norm <= tau0:
        return g_pre(con, z)
    if norm < 2.0 * tau0:
        raise AmbiguousBranchError(
            f"middle-block norm {norm:.3e} falls between tau0={tau0:.3e} and "
            f"2*tau0; neither multiplexer branch applies")
    if not post_update:
        raise AmbiguousBranchError(
            "middle block is nonzero but the caller claims pre-update state")
    return h_post(con, zbar, table)


def end_to_end_prediction(con: Construction, x: float, y, xstar: float,
                          table: TargetTable, loss: str = "mse") -> float:
    """The full pipeline: real gradient step, real forward pass, multiplexed head."""
    ws_new, tbp = updated_chain(con, x, y, loss)
    z = phi_full(con, xstar, tbp)
    for w in reversed(ws_new):
        z = w @ z
    return f_out_multiplexer(con, z, table, post_update=True)
