import numpy as np
import pytest

from metagrad.autodiff import Tape, Tensor, backward, finite_diff, reduce_mean, mul, sub
from metagrad.models import (
    MlpSpec, depth_widths, forward, forward_conditioned, init_params,
    leaf_params, load_checkpoint, param_count, save_checkpoint,
)


def _numpy_forward(spec, params, x):
    if spec.d_b:
        x = np.concatenate([x, np.broadcast_to(params[-1], (x.shape[0], spec.d_b))], axis=1)
    h = x
    layers = len(spec.layer_dims)
    for i in range(layers):
        h = h @ params[2 * i].T + params[2 * i + 1]
        if i < layers - 1:
            h = np.maximum(h, 0.0)
    return h


@pytest.mark.parametrize("d_b", [0, 4])
def test_forward_matches_numpy_reference(d_b):
    rng = np.random.default_rng(0)
    spec = MlpSpec(3, 2, (8, 5), d_b=d_b)
    params = init_params(spec, rng)
    x = rng.standard_normal((6, 3))
    out = forward(spec, params, Tensor(x))
    assert out.shape == (6, 2)
    assert np.allclose(out.data, _numpy_forward(spec, params, x), atol=1e-12)


def test_gradients_flow_to_all_params_including_theta_b():
    rng = np.random.default_rng(1)
    spec = MlpSpec(2, 1, (6,), d_b=3)
    params = init_params(spec, rng)
    # theta_b starts at zero but must still receive gradient signal.
    x, y = rng.standard_normal((5, 2)), rng.standard_normal((5, 1))

    tape = Tape()
    leaves = leaf_params(tape, params)
    r = sub(forward(spec, leaves, Tensor(x)), Tensor(y))
    loss = reduce_mean(mul(r, r))
    grads = backward(loss, leaves)

    def f(ps):
        r = _numpy_forward(spec, ps, x) - y
        return float(np.mean(r * r))

    fd = finite_diff(f, params)
    for g, ref in zip(grads, fd):
        assert np.allclose(g.data, ref, rtol=1e-5, atol=1e-7)
    assert np.max(np.abs(grads[-1].data)) > 0.0  # theta_b gradient is live


def test_init_shapes_and_zero_blocks():
    spec = MlpSpec(1, 1, (40, 40), d_b=10)
    params = init_params(spec, np.random.default_rng(2))
    assert [p.shape for p in params] == [
        (40, 11), (40,), (40, 40), (40,), (1, 40), (1,), (10,)]
    assert np.array_equal(params[1], np.zeros(40))
    assert np.array_equal(params[-1], np.zeros(10))


def test_forward_conditioned_appends_descriptor():
    rng = np.random.default_rng(3)
    spec = MlpSpec(3, 1, (7,))  # 1 raw input + 2 descriptor entries
    params = init_params(spec, rng)
    x = rng.standard_normal((4, 1))
    cond = np.array([2.0, -1.0])
    out = forward_conditioned(spec, params, Tensor(x), cond)
    xc = np.concatenate([x, np.broadcast_to(cond, (4, 2))], axis=1)
    assert np.allclose(out.data, _numpy_forward(spec, params, xc))
    with pytest.raises(ValueError, match="1-D"):
        forward_conditioned(spec, params, Tensor(x), np.ones((2, 2)))


def test_input_validation():
    spec = MlpSpec(2, 1, (4,))
    params = init_params(spec, np.random.default_rng(0))
    with pytest.raises(ValueError, match="d_in"):
        forward(spec, params, Tensor(np.ones((3, 5))))
    with pytest.raises(ValueError, match="parameter tensors"):
        forward(spec, params[:-1], Tensor(np.ones((3, 2))))
    with pytest.raises(ValueError, match="hidden widths"):
        MlpSpec(2, 1, (0,))


def test_depth_widths_budget_is_flat_for_deep_nets():
    # Core parameter counts for depths 2..5 stay within a few percent of
    # each other; depth 1 is intentionally smaller (width capped at 250).
    counts = {}
    for depth in range(1, 6):
        spec = MlpSpec(1, 1, depth_widths(depth), d_b=10)
        counts[depth] = param_count(spec)
    deep = [counts[d] for d in range(2, 6)]
    assert max(deep) / min(deep) < 1.05
    assert counts[1] < min(deep)
    with pytest.raises(ValueError, match="depth"):
        depth_widths(9)


def test_param_count_excludes_bias_transform_by_default():
    spec = MlpSpec(1, 1, (10,), d_b=7)
    plain = MlpSpec(1, 1, (10,), d_b=0)
    assert param_count(spec) == param_count(plain) == (1 * 10 + 10) + (10 * 1 + 1)
    assert param_count(spec, include_bias_transform=True) == \
        (8 * 10 + 10) + (10 + 1) + 7


class TestCheckpoint:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        spec = MlpSpec(1, 1, (13, 9), d_b=4)
        params = init_params(spec, rng)
        params[0][0, 0] = 1e-17  # exercise repr round-tripping of tiny values
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, spec, params)
        spec2, params2 = load_checkpoint(path)
        assert spec2 == spec
        for a, b in zip(params, params2):
            assert np.array_equal(a, b)

    def test_resave_is_byte_identical(self, tmp_path):
        spec = MlpSpec(2, 2, (5,))
        params = init_params(spec, np.random.default_rng(6))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, spec, params)
        save_checkpoint(p2, *load_checkpoint(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_foreign_files(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_text("something else entirely\n")
        with pytest.raises(ValueError, match="header"):
            load_checkpoint(bad)

    def test_rejects_truncated_tensor(self, tmp_path):
        spec = MlpSpec(1, 1, (2,))
        params = init_params(spec, np.random.default_rng(7))
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, spec, params)
        lines = path.read_text().splitlines()
        lines[3] = " ".join(lines[3].split()[:-1])  # drop one value
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="values"):
            load_checkpoint(path)

    def test_no_hidden_layers_roundtrip(self, tmp_path):
        spec = MlpSpec(3, 2, ())
        params = init_params(spec, np.random.default_rng(8))
        path = tmp_path / "linear.ckpt"
        save_checkpoint(path, spec, params)
        spec2, params2 = load_checkpoint(path)
        assert spec2 == spec and len(params2) == 2
