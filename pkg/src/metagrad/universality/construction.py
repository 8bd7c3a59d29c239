"""The embedded-learner network: an explicit deep linear chain whose single
gradient-descent step implements a learning algorithm.

The network is f(x) = W_N · ... · W_1 · phi(x, theta_b), with every W_i
block-diagonal over three blocks:

* top (2B wide): carries a one-hot discretization of the input.  The feature
  switches halves depending on the bias-transform value theta_b, which is 0
  before the gradient step and nonzero after — this makes the "training
  input" and "query input" enter the post-update product on orthogonal
  halves, so each layer's kernel fires only for its designated bin pair.
* middle (B²·d_y wide): zero before the step; the gradient step writes the
  label information here, one d_y-block per (input-bin, query-bin) pair.
* bottom (scalar): carries theta_b itself.

The top factors telescope as Wt_i = Mt_i · Mt_{i+1}^{-1} and the middle ones
as Wb_i = Mb_{i-1}^{-1} · Mb_i, so partial products collapse to single factor
matrices and each layer i exposes the designed pair (A_i, B_i):
A_i = Mb_{i-1} · Mb_{i-1}^T (a diagonal block selector) and B_i = Mt_{i+1}
(a bin-pair selector).  Chain ends: A_1 = I, A_N = eps·I, B_1 = eps·I,
B_N = I, so the end layers contribute nothing but eps-noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Construction", "build_construction", "discr", "phi_feature", "phi_full",
    "build_Bjl", "build_Ajl", "build_chain", "error_gradient", "pair_index",
]

SELECTOR_VARIANTS = ("sym_half", "eps_shift")


@dataclass(frozen=True)
class Construction:
    """Immutable description of one built chain (all factors precomputed)."""

    B: int                 # bins per input axis; the layer grid is B x B
    d_y: int               # label dimension
    eps: float             # selector off-level / chain-end scale
    alpha: float           # inner gradient step size
    bin_edges: np.ndarray  # (B+1,) sorted
    selector: str          # which bin-pair selector family the chain uses
    Mtilde: tuple          # Mt_1..Mt_{N+1}, each (2B, 2B); index shift: Mtilde[i-1] = Mt_i
    Mbar: tuple            # Mb_0..Mb_N diagonals, each (B²·d_y,); Mbar[i] = Mb_i
    wcheck: tuple          # N bottom scalars, all 1
    wcheck_g: float        # bottom output weight (sign keeps post-update activations >= 0)

    @property
    def N(self) -> int:
        return self.B * self.B + 2

    @property
    def dim_top(self) -> int:
        return 2 * self.B

    @property
    def dim_mid(self) -> int:
        return self.B * self.B * self.d_y

    @property
    def dim(self) -> int:
        return self.dim_top + self.dim_mid + 1

    def Mt(self, i: int) -> np.ndarray:
        """Top factor Mt_i, 1-indexed, i in 1..N+1."""
        return self.Mtilde[i - 1]

    def Mb(self, i: int) -> np.ndarray:
        """Middle factor diagonal Mb_i, 0-indexed, i in 0..N."""
        return self.Mbar[i]

    def A(self, i: int) -> np.ndarray:
        """Diagonal of A_i = Mb_{i-1} Mb_{i-1}^T, i in 1..N."""
        d = self.Mb(i - 1)
        return d * d

    def Bsel(self, i: int) -> np.ndarray:
        """B_i = Mt_{i+1}, i in 1..N."""
        return self.Mt(i + 1)

    def W_g(self) -> np.ndarray:
        """Output weights (d_y, dim): zero top, stacked -I middle, wcheck_g bottom."""
        top = np.zeros((self.d_y, self.dim_top))
        stack = np.tile(np.eye(self.d_y), (1, self.B * self.B))  # (d_y, B²·d_y)
        bottom = np.full((self.d_y, 1), self.wcheck_g)
        return np.concatenate([top, -stack, bottom], axis=1)


def pair_index(j: int, l: int, B: int) -> int:
    """Flat index of the (input-bin j, query-bin l) pair: j + B*l."""
    return j + B * l


def build_Bjl(j: int, l: int, B: int, eps: float, variant: str = "sym_half") -> np.ndarray:
    """Bin-pair selector acting on the 2B top block.

    Both variants make the kernel phî(x,0)^T Bjl^T Bjl phî(x*,th') fire exactly
    on (bin(x)=j, bin(x*)=l) and vanish on every other pair:

    * ``sym_half``: I + (E[j, B+l] + E[B+l, j]) / 2 — symmetric, eigenvalues
      {1/2, 1, 3/2}, positive definite for every eps, unit kernel gain.
    * ``eps_shift``: [[E_jj, E_jl], [E_lj, 0]] + eps*I — kernel gain 1+2eps;
      indefinite unless eps is large (smallest eigenvalue eps - (sqrt(5)-1)/2),
      kept for measuring exactly that.
    """
    if not (0 <= j < B and 0 <= l < B):
        raise ValueError(f"bin pair ({j}, {l}) outside 0..{B - 1}")
    if variant == "sym_half":
        m = np.eye(2 * B)
        m[j, B + l] += 0.5
        m[B + l, j] += 0.5
        return m
    if variant == "eps_shift":
        m = eps * np.eye(2 * B)
        m[j, j] += 1.0
        m[j, B + l] += 1.0
        m[B + l, j] += 1.0
        return m
    raise ValueError(f"unknown selector variant {variant!r}; have {SELECTOR_VARIANTS}")


def build_Ajl(j: int, l: int, B: int, d_y: int, eps: float) -> np.ndarray:
    """Diagonal of the middle-block selector: 1+eps on the (j,l) label block,
    eps elsewhere — positive definite, with an exact diagonal square root."""
    if not (0 <= j < B and 0 <= l < B):
        raise ValueError(f"bin pair ({j}, {l}) outside 0..{B - 1}")
    diag = np.full(B * B * d_y, eps)
    k = pair_index(j, l, B)
    diag[k * d_y:(k + 1) * d_y] = 1.0 + eps
    return diag


def build_construction(B: int, d_y: int = 1, eps: float = 1e-6, alpha: float = 1e-3,
                       input_range=(0.0, 1.0), selector: str = "sym_half",
                       wcheck_g: float = -1.0) -> Construction:
    """Assemble all factor matrices for a B-bin, d_y-label chain.

    Layer i = 2 + (j + B*l) owns bin pair (j, l); layers 1 and N are the
    eps-scaled ends.  Middle factors are diagonal square roots of the A
    selectors (exact — no iterative factorization); top factors are assigned
    through B_i = Mt_{i+1} with Mt_1 = I.
    """
    if B < 1 or d_y < 1:
        raise ValueError("B and d_y must be at least 1")
    if eps <= 0 or alpha < 0:
        raise ValueError("eps must be positive and alpha non-negative")
    lo, hi = map(float, input_range)
    if not lo < hi:
        raise ValueError(f"input range [{lo}, {hi}] is empty")
    N = B * B + 2
    two_b = 2 * B

    # Top factors Mt_1..Mt_{N+1}: B_i = Mt_{i+1}, ends B_1 = eps*I, B_N = I.
    mtilde = [np.eye(two_b)]                       # Mt_1 (free; identity)
    mtilde.append(eps * np.eye(two_b))             # Mt_2 = B_1
    for k in range(B * B):                         # Mt_{i+1} for i = k+2
        j, l = k % B, k // B
        mtilde.append(build_Bjl(j, l, B, eps, selector))
    mtilde.append(np.eye(two_b))                   # Mt_{N+1} = B_N

    # Middle factor diagonals Mb_0..Mb_N: A_i = Mb_{i-1}², ends A_1 = I, A_N = eps*I.
    mbar = [np.ones(B * B * d_y)]                  # Mb_0 (A_1 = I)
    for k in range(B * B):                         # Mb_{i-1} for i = k+2
        j, l = k % B, k // B
        mbar.append(np.sqrt(build_Ajl(j, l, B, d_y, eps)))
    mbar.append(np.sqrt(eps) * np.ones(B * B * d_y))  # Mb_{N-1} (A_N = eps*I)
    mbar.append(mbar[-1].copy())                      # Mb_N free; makes Wb_N = I

    return Construction(
        B=B, d_y=d_y, eps=float(eps), alpha=float(alpha),
        bin_edges=np.linspace(lo, hi, B + 1), selector=selector,
        Mtilde=tuple(mtilde), Mbar=tuple(mbar),
        wcheck=tuple([1.0] * N), wcheck_g=float(wcheck_g),
    )


def discr(x: float, bin_edges: np.ndarray) -> np.ndarray:
    """One-hot bin membership; bins are left-closed, the last is also right-closed."""
    lo, hi = bin_edges[0], bin_edges[-1]
    if not (lo <= x <= hi):
        raise ValueError(f"input {x} outside the discretization domain [{lo}, {hi}]")
    b = len(bin_edges) - 1
    idx = min(int(np.searchsorted(bin_edges, x, side="right")) - 1, b - 1)
    out = np.zeros(b)
    out[idx] = 1.0
    return out


def phi_feature(x: float, theta_b: float, bin_edges: np.ndarray) -> np.ndarray:
    """Half-switched feature: [discr(x); 0] while theta_b == 0, [0; discr(x)] after.

    The switch is what breaks the symmetry between the adaptation input and
    the query input: they occupy orthogonal halves of the top block, so the
    chain-end kernels vanish exactly and each interior layer sees exactly its
    own bin pair.
    """
    one_hot = discr(x, bin_edges)
    zero = np.zeros_like(one_hot)
    return np.concatenate([one_hot, zero] if theta_b == 0.0 else [zero, one_hot])


def phi_full(con: Construction, x: float, theta_b: float) -> np.ndarray:
    """Full input vector [phi_feature; zero middle block; theta_b]."""
    return np.concatenate([
        phi_feature(x, theta_b, con.bin_edges),
        np.zeros(con.dim_mid),
        [theta_b],
    ])


def build_chain(con: Construction):
    """The N block-diagonal layer matrices, dense (dim, dim) each.

    Raises if any top factor is numerically singular (the telescoping
    assignment needs every inverse to exist).
    """
    ws = []
    for i in range(1, con.N + 1):
        mt_next = con.Mt(i + 1)
        cond = np.linalg.cond(mt_next)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError(
                f"top factor Mt_{i + 1} is singular (cond={cond:.3g}); "
                "cannot telescope")
        wt = con.Mt(i) @ np.linalg.inv(mt_next)
        wb = con.Mb(i) / con.Mb(i - 1)   # diagonal inverse times diagonal
        w = np.zeros((con.dim, con.dim))
        w[:con.dim_top, :con.dim_top] = wt
        mid = slice(con.dim_top, con.dim_top + con.dim_mid)
        w[mid, mid] = np.diag(wb)
        w[-1, -1] = con.wcheck[i - 1]
        ws.append(w)
    return ws


_LOSS_GRADIENTS_AT_ZERO = {
    # gradient of the per-example loss at prediction 0, as a function of y
    "mse": lambda y, d_y: -y,                                  # l = ||y - p||²/2
    "xent": lambda y, d_y: np.full(d_y, 1.0 / d_y) - y,        # softmax(0) - y
}


def error_gradient(con: Construction, y: np.ndarray, loss: str = "mse") -> np.ndarray:
    """Backpropagated error at the chain output: e = W_g^T * dl/dy_hat at y_hat = 0.

    Top block is identically zero (the output head ignores the top block), the
    middle block stacks the label B² times, and the bottom scalar is what the
    gradient step writes into theta_b (up to -alpha).
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape != (con.d_y,):
        raise ValueError(f"label shape {y.shape} does not match d_y={con.d_y}")
    try:
        grad = _LOSS_GRADIENTS_AT_ZERO[loss](y, con.d_y)
    except KeyError:
        raise ValueError(
            f"unsupported loss {loss!r}; have {sorted(_LOSS_GRADIENTS_AT_ZERO)}") from None
    return con.W_g().T @ grad
