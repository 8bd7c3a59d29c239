"""Fully connected ReLU regressors whose parameters are flat tensor lists.

The networks here are deliberately plain: linear layers, ReLU between them,
nothing after the last layer.  Two features matter for meta-learning:

* an optional *bias-transform* block ``theta_b`` — a trainable vector
  concatenated onto every input row.  It gives the adaptation step an input
  channel that gradient updates can write to even when the raw input would
  zero out a gradient path.  ``theta_b`` starts at zero.
* parameters travel as a flat ``[W1, b1, ..., Wk, bk, (theta_b)]`` list of
  arrays (or taped tensors), so optimizer and adaptation code never needs to
  know the architecture.

Architecture is captured separately in an immutable :class:`MlpSpec`.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, blinear, broadcast_rows, concat_cols, linear, relu

__all__ = [
    "MlpSpec", "init_params", "forward", "forward_batched", "forward_conditioned",
    "depth_widths", "param_count", "save_checkpoint", "load_checkpoint",
    "leaf_params",
]

_CHECKPOINT_HEADER = "# metagrad mlp checkpoint v1"


@dataclass(frozen=True)
class MlpSpec:
    """Shape of an MLP: input/output widths, hidden widths, bias-transform width."""

    d_in: int
    d_out: int
    hidden: tuple
    d_b: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d_in < 1 or self.d_out < 1 or self.d_b < 0:
            raise ValueError(f"invalid dimensions in {self}")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")

    @property
    def layer_dims(self):
        """(fan_in, fan_out) per linear layer, bias-transform columns included."""
        widths = [self.d_in + self.d_b, *self.hidden, self.d_out]
        return list(zip(widths[:-1], widths[1:]))


def init_params(spec: MlpSpec, rng: np.random.Generator):
    """Uniform fan-in-scaled weights (±sqrt(6/fan_in)), zero biases and
    bias-transform."""
    params = []
    for fan_in, fan_out in spec.layer_dims:
        s = np.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        params.append(np.zeros(fan_out))
    if spec.d_b:
        params.append(np.zeros(spec.d_b))
    return params


def leaf_params(tape, params):
    """Register every parameter array as a differentiable leaf on ``tape``."""
    return [tape.leaf(p) for p in params]


def _expected_length(spec: MlpSpec) -> int:
    return 2 * len(spec.layer_dims) + (1 if spec.d_b else 0)


def forward(spec: MlpSpec, params, x: Tensor) -> Tensor:
    """Run the network on a batch ``x`` of shape (n, d_in).

    ``params`` may be numpy arrays or taped tensors; arrays are treated as
    constants.  Returns an (n, d_out) tensor.
    """
    if len(params) != _expected_length(spec):
        raise ValueError(
            f"expected {_expected_length(spec)} parameter tensors for {spec}, got {len(params)}"
        )
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != spec.d_in:
        raise ValueError(f"input shape {x.data.shape} does not match d_in={spec.d_in}")
    n = x.data.shape[0]
    if spec.d_b:
        theta_b = params[-1]
        theta_b = theta_b if isinstance(theta_b, Tensor) else Tensor(theta_b)
        x = concat_cols(x, broadcast_rows(theta_b, n))
    h = x
    layers = len(spec.layer_dims)
    for i in range(layers):
        h = linear(h, params[2 * i], params[2 * i + 1])
        if i < layers - 1:
            h = relu(h)
    return h


def forward_batched(spec: MlpSpec, params, x: Tensor) -> Tensor:
    """Run per-task parameter copies on per-task inputs in one pass.

    ``params`` is the usual flat list with a leading task axis on every
    entry ((T, d_out, d_in) weights, (T, d_out) biases); ``x`` is
    (T, n, d_in).  The bias-transform channel is not supported here — tile
    theta_b into the inputs beforehand if it is needed.
    """
    if spec.d_b:
        raise ValueError("forward_batched does not support a bias-transform block")
    if len(params) != _expected_length(spec):
        raise ValueError(
            f"expected {_expected_length(spec)} parameter tensors for {spec}, got {len(params)}"
        )
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 3 or x.data.shape[2] != spec.d_in:
        raise ValueError(f"input shape {x.data.shape} does not match (T, n, {spec.d_in})")
    h = x
    layers = len(spec.layer_dims)
    for i in range(layers):
        h = blinear(h, params[2 * i], params[2 * i + 1])
        if i < layers - 1:
            h = relu(h)
    return h


def forward_conditioned(spec: MlpSpec, params, x: Tensor, cond) -> Tensor:
    """Run the network on inputs with a task descriptor appended to every row.

    The descriptor ``cond`` is a 1-D vector of task parameters; the spec's
    ``d_in`` must already account for the extra columns.  This is the
    no-adaptation oracle: the task identity arrives as input instead of
    through a gradient step.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    cond = cond if isinstance(cond, Tensor) else Tensor(cond)
    if cond.data.ndim != 1:
        raise ValueError("task descriptor must be a 1-D vector")
    xc = concat_cols(x, broadcast_rows(cond, x.data.shape[0]))
    return forward(spec, params, xc)


# Hidden widths per depth, chosen so total core parameter count stays nearly
# flat across depths 2..5 (the single-hidden-layer net is capped at 250 units
# and is simply a smaller model).
_DEPTH_WIDTHS = {1: (250,), 2: (200, 200), 3: (141, 141, 141),
                 4: (115, 115, 115, 115), 5: (100, 100, 100, 100, 100)}


def depth_widths(depth: int):
    """Matched hidden-layer widths for a given depth (1..5)."""
    try:
        return _DEPTH_WIDTHS[depth]
    except KeyError:
        raise ValueError(f"depth must be one of {sorted(_DEPTH_WIDTHS)}, got {depth}") from None


def param_count(spec: MlpSpec, include_bias_transform: bool = False) -> int:
    """Number of scalar parameters; bias-transform pathway excluded by default.

    The core count uses the architecture as if ``d_b`` were zero, so width
    budgets can be compared independently of the bias-transform choice.
    """
    core = spec if (include_bias_transform or not spec.d_b) else \
        MlpSpec(spec.d_in, spec.d_out, spec.hidden, 0)
    total = sum(fi * fo + fo for fi, fo in core.layer_dims)
    if include_bias_transform and spec.d_b:
        total += spec.d_b
    return total


# -- persistence ---------------------------------------------------------------

def save_checkpoint(path, spec: MlpSpec, params) -> None:
    """Write spec + parameters as plain text; floats round-trip exactly."""
    if len(params) != _expected_length(spec):
        raise ValueError("parameter list does not match the spec")
    names = []
    for i in range(len(spec.layer_dims)):
        names += [f"W{i}", f"b{i}"]
    if spec.d_b:
        names.append("theta_b")
    buf = io.StringIO()
    buf.write(_CHECKPOINT_HEADER + "\n")
    hidden = ",".join(str(h) for h in spec.hidden) or "-"
    buf.write(f"spec d_in={spec.d_in} d_out={spec.d_out} hidden={hidden} d_b={spec.d_b}\n")
    for name, p in zip(names, params):
        arr = np.asarray(p, dtype=np.float64)
        shape = ",".join(str(s) for s in arr.shape)
        buf.write(f"tensor {name} {shape}\n")
        buf.write(" ".join(repr(float(v)) for v in arr.reshape(-1)) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (spec, params)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a recognized checkpoint (bad or missing header)")
    fields = dict(kv.split("=", 1) for kv in lines[1].split()[1:])
    hidden = () if fields["hidden"] == "-" else \
        tuple(int(h) for h in fields["hidden"].split(","))
    spec = MlpSpec(int(fields["d_in"]), int(fields["d_out"]), hidden, int(fields["d_b"]))
    params = []
    i = 2
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "tensor" or len(head) != 3:
            raise ValueError(f"{path}: malformed tensor record at line {i + 1}")
        shape = tuple(int(s) for s in head[2].split(","))
        flat = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
        if flat.size != int(np.prod(shape)):
            raise ValueError(f"{path}: tensor {head[1]} has {flat.size} values, "
                             f"expected {int(np.prod(shape))}")
        params.append(flat.reshape(shape))
        i += 2
    if len(params) != _expected_length(spec):
        raise ValueError(f"{path}: checkpoint holds {len(params)} tensors, "
                         f"spec needs {_expected_length(spec)}")
    return spec, params
