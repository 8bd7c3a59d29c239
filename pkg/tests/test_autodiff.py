"""Tape autodiff against central finite differences and algebraic identities."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metagrad.autodiff import (
    Tape, Tensor, backward, finite_diff,
    add, sub, mul, neg, matmul, transpose, relu, linear,
    bmm, bswap, blinear, bsum_rows, btile_rows, tile_batch, sum_batch,
    reduce_sum, reduce_mean, broadcast_rows, concat_cols, slice_cols,
    elementwise, reduce,
)

RNG = np.random.default_rng


def _scalar_mlp(arrays):
    """Reference computation used by several tests: a 2-layer ReLU net's loss.

    arrays = [x (n,din), W1 (h,din), b1 (h,), W2 (1,h), b2 (1,), y (n,1)]
    """
    x, w1, b1, w2, b2, y = arrays
    h = np.maximum(x @ w1.T + b1, 0.0)
    pred = h @ w2.T + b2
    r = pred - y
    return float(np.mean(r * r))


def _scalar_mlp_taped(tape, arrays):
    x, w1, b1, w2, b2, y = [tape.leaf(a) for a in arrays]
    h = relu(add(matmul(x, transpose(w1)), broadcast_rows(b1, arrays[0].shape[0])))
    pred = add(matmul(h, transpose(w2)), broadcast_rows(b2, arrays[0].shape[0]))
    r = sub(pred, y)
    return reduce_mean(mul(r, r)), [w1, b1, w2, b2]


def _random_mlp_arrays(rng, n=4, din=3, hidden=5):
    return [
        rng.standard_normal((n, din)),
        rng.standard_normal((hidden, din)),
        rng.standard_normal(hidden),
        rng.standard_normal((1, hidden)),
        rng.standard_normal(1),
        rng.standard_normal((n, 1)),
    ]


class TestFirstOrderVsFiniteDifference:
    @pytest.mark.parametrize("seed", range(6))
    def test_mlp_loss_gradients(self, seed):
        rng = RNG(seed)
        arrays = _random_mlp_arrays(rng)
        tape = Tape()
        loss, params = _scalar_mlp_taped(tape, arrays)
        grads = backward(loss, params)

        def f_of(k):
            def f(ps):
                full = [arrays[0], *ps[:2], *ps[2:], arrays[5]]
                # rebuild arrays list with the varied parameter slots
                return _scalar_mlp([arrays[0], ps[0], ps[1], ps[2], ps[3], arrays[5]])
            return f

        fd = finite_diff(lambda ps: _scalar_mlp([arrays[0], *ps, arrays[5]]),
                         arrays[1:5])
        for g, ref in zip(grads, fd):
            assert np.allclose(g.data, ref, rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("op,npop", [
        (add, np.add), (sub, np.subtract), (mul, np.multiply),
    ])
    def test_elementwise_binary(self, op, npop):
        rng = RNG(99)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        tape = Tape()
        ta, tb = tape.leaf(a), tape.leaf(b)
        out = reduce_sum(mul(op(ta, tb), op(ta, tb)))
        ga, gb = backward(out, [ta, tb])
        fd = finite_diff(lambda xs: float(np.sum(npop(xs[0], xs[1]) ** 2)), [a, b])
        assert np.allclose(ga.data, fd[0], rtol=1e-6, atol=1e-8)
        assert np.allclose(gb.data, fd[1], rtol=1e-6, atol=1e-8)

    def test_matmul_transpose_chain(self):
        rng = RNG(7)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
        tape = Tape()
        ta, tb = tape.leaf(a), tape.leaf(b)
        out = reduce_sum(matmul(ta, transpose(tb)))
        ga, gb = backward(out, [ta, tb])
        fd = finite_diff(lambda xs: float(np.sum(xs[0] @ xs[1].T)), [a, b])
        assert np.allclose(ga.data, fd[0], atol=1e-8)
        assert np.allclose(gb.data, fd[1], atol=1e-8)

    def test_concat_slice_roundtrip_gradient(self):
        rng = RNG(11)
        a, b = rng.standard_normal((4, 2)), rng.standard_normal((4, 3))
        tape = Tape()
        ta, tb = tape.leaf(a), tape.leaf(b)
        cat = concat_cols(ta, tb)
        out = reduce_sum(mul(slice_cols(cat, 1, 4), slice_cols(cat, 1, 4)))
        ga, gb = backward(out, [ta, tb])

        def f(xs):
            c = np.concatenate(xs, axis=1)[:, 1:4]
            return float(np.sum(c * c))

        fd = finite_diff(f, [a, b])
        assert np.allclose(ga.data, fd[0], atol=1e-8)
        assert np.allclose(gb.data, fd[1], atol=1e-8)


class TestSecondOrder:
    def test_grad_of_grad_square(self):
        # d/dx of (d/dx x^3) = 6x, via backward-over-backward.
        tape = Tape()
        x = tape.leaf(1.7)
        y = mul(mul(x, x), x)
        (g1,) = backward(y, [x], create_graph=True)
        (g2,) = backward(g1, [x])
        assert np.isclose(g2.item(), 6.0 * 1.7, rtol=1e-12)

    def test_hessian_vector_product_vs_fd(self):
        rng = RNG(3)
        arrays = _random_mlp_arrays(rng, n=3, din=2, hidden=4)
        v = [rng.standard_normal(arrays[1].shape), rng.standard_normal(arrays[2].shape)]

        tape = Tape()
        loss, params = _scalar_mlp_taped(tape, arrays)
        g = backward(loss, params[:2], create_graph=True)
        gv = add(reduce_sum(mul(g[0], Tensor(v[0]))), reduce_sum(mul(g[1], Tensor(v[1]))))
        hv = backward(gv, params[:2])

        eps = 1e-5

        def grad_at(w1, b1):
            t = Tape()
            l, ps = _scalar_mlp_taped(t, [arrays[0], w1, b1, *arrays[3:5], arrays[5]])
            gs = backward(l, ps[:2])
            return [q.data for q in gs]

        gp = grad_at(arrays[1] + eps * v[0], arrays[2] + eps * v[1])
        gm = grad_at(arrays[1] - eps * v[0], arrays[2] - eps * v[1])
        for got, (hi, lo) in zip(hv, zip(gp, gm)):
            assert np.allclose(got.data, (hi - lo) / (2 * eps), rtol=1e-3, atol=1e-5)

    def test_create_graph_false_yields_constants(self):
        tape = Tape()
        x = tape.leaf(2.0)
        y = mul(x, x)
        (g,) = backward(y, [x])
        assert g.tape is None
        with pytest.raises(ValueError, match="constant"):
            backward(g, [x])


class TestAlgebraicProperties:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_gradient_linearity(self, seed):
        # grad(a*f + b*g) == a*grad(f) + b*grad(g) up to reassociation rounding.
        rng = RNG(seed)
        x = rng.standard_normal((3, 3))
        a, b = 2.5, -1.25
        tape = Tape()
        tx = tape.leaf(x)
        f = reduce_sum(mul(tx, tx))
        g = reduce_sum(matmul(tx, transpose(tx)))
        both = add(mul(f, a), mul(g, b))
        (g_both,) = backward(both, [tx])
        (gf,) = backward(f, [tx])
        (gg,) = backward(g, [tx])
        assert np.allclose(g_both.data, a * gf.data + b * gg.data,
                           rtol=1e-13, atol=1e-13)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_determinism_bitwise(self, seed):
        rng = RNG(seed)
        arrays = _random_mlp_arrays(rng)

        def run():
            tape = Tape()
            loss, params = _scalar_mlp_taped(tape, arrays)
            return [g.data for g in backward(loss, params)]

        for g1, g2 in zip(run(), run()):
            assert np.array_equal(g1, g2)

    def test_unused_parameter_gets_zero_gradient(self):
        tape = Tape()
        x, unused = tape.leaf(3.0), tape.leaf(np.ones((2, 2)))
        (gx, gu) = backward(mul(x, x), [x, unused])
        assert gx.item() == 6.0
        assert np.array_equal(gu.data, np.zeros((2, 2)))

    def test_gradient_wrt_intermediate_tensor(self):
        # the adjoint of a non-leaf node, holding it fixed as a variable:
        # z = y² with y = x² gives dz/dy = 2y = 18 at x = 3 (not dz/dx = 108)
        tape = Tape()
        x = tape.leaf(np.array(3.0))
        y = mul(x, x)
        z = mul(y, y)
        (gy,) = backward(z, [y])
        assert gy.item() == 18.0
        (gx,) = backward(z, [x])
        assert gx.item() == 108.0
        # requesting the output itself yields the seed gradient
        (gz,) = backward(z, [z])
        assert gz.item() == 1.0

    def test_intermediate_gradient_matches_leaf_restart(self):
        """Oracle: re-run the downstream computation with the intermediate's
        value as a fresh leaf; its leaf gradient must equal the intermediate's
        adjoint on the original tape."""
        rng = np.random.default_rng(11)
        a = rng.standard_normal((3, 3))
        tape = Tape()
        w = tape.leaf(a)
        mid = matmul(w, w)                       # intermediate
        out = reduce_sum(mul(mid, mid))
        (g_mid,) = backward(out, [mid])

        tape2 = Tape()
        mid2 = tape2.leaf(mid.data)
        out2 = reduce_sum(mul(mid2, mid2))
        (g_leaf,) = backward(out2, [mid2])
        assert np.array_equal(g_mid.data, g_leaf.data)

    def test_linear_matches_unfused_composition(self):
        # dual route: the fused layer against transpose/matmul/broadcast/add
        rng = np.random.default_rng(5)
        h_a, w_a, b_a = (rng.standard_normal((7, 3)), rng.standard_normal((4, 3)),
                         rng.standard_normal(4))
        tape = Tape()
        h, w, b = tape.leaf(h_a), tape.leaf(w_a), tape.leaf(b_a)
        fused = reduce_sum(mul(linear(h, w, b), linear(h, w, b)))
        tape2 = Tape()
        h2, w2, b2 = tape2.leaf(h_a), tape2.leaf(w_a), tape2.leaf(b_a)
        out2 = add(matmul(h2, transpose(w2)), broadcast_rows(b2, 7))
        unfused = reduce_sum(mul(out2, out2))
        assert fused.item() == pytest.approx(unfused.item(), rel=1e-15)
        for gf, gu in zip(backward(fused, [h, w, b]), backward(unfused, [h2, w2, b2])):
            assert np.allclose(gf.data, gu.data, rtol=1e-13, atol=1e-13)

    def test_linear_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        arrays = [rng.standard_normal((5, 2)), rng.standard_normal((3, 2)),
                  rng.standard_normal(3)]

        def f(args):
            h, w, b = args
            return float(np.sum((h @ w.T + b) ** 2))

        tape = Tape()
        leaves = [tape.leaf(a) for a in arrays]
        out = reduce_sum(mul(linear(*leaves), linear(*leaves)))
        fd = finite_diff(f, arrays)
        for g, ref in zip(backward(out, leaves), fd):
            assert np.allclose(g.data, ref, rtol=1e-6, atol=1e-8)

    def test_linear_second_order_flows(self):
        # the fused vjp must itself be differentiable for the meta-gradient path
        tape = Tape()
        w = tape.leaf(np.array([[2.0]]))
        h, b = Tensor(np.array([[3.0]])), Tensor(np.zeros(1))
        y = linear(h, w, b)                       # y = 3w
        loss = mul(reduce_sum(mul(y, y)), 0.5)    # l = 9w²/2, dl/dw = 9w
        (g,) = backward(loss, [w], create_graph=True)
        (h2,) = backward(reduce_sum(g), [w])      # d²l/dw² = 9
        assert h2.data.item() == 9.0

    def test_linear_shape_validation(self):
        tape = Tape()
        h = tape.leaf(np.ones((2, 3)))
        with pytest.raises(ValueError, match="dimensions disagree"):
            linear(h, np.ones((4, 2)), np.ones(4))
        with pytest.raises(ValueError, match="dimensions disagree"):
            linear(h, np.ones((4, 3)), np.ones(5))
        with pytest.raises(ValueError, match="linear expects"):
            linear(h, np.ones((4, 3)), np.ones((4, 1)))

    def test_batched_ops_match_per_task_loop(self):
        """Dual route: one blinear call on stacked copies against looping the
        2-D ops task by task — values and parameter gradients both."""
        rng = np.random.default_rng(8)
        t, n = 4, 6
        h_a = rng.standard_normal((t, n, 3))
        w_a, b_a = rng.standard_normal((5, 3)), rng.standard_normal(5)

        tape = Tape()
        w, b = tape.leaf(w_a), tape.leaf(b_a)
        wt, bt = tile_batch(w, t), tile_batch(b, t)
        out = relu(blinear(Tensor(h_a), wt, bt))
        loss = reduce_mean(mul(out, out))
        g_w, g_b = backward(loss, [w, b])

        tape2 = Tape()
        w2, b2 = tape2.leaf(w_a), tape2.leaf(b_a)
        pieces = [relu(linear(Tensor(h_a[i]), w2, b2)) for i in range(t)]
        total = None
        for p in pieces:
            s = reduce_sum(mul(p, p))
            total = s if total is None else add(total, s)
        loss2 = mul(total, 1.0 / (t * n * 5))
        g_w2, g_b2 = backward(loss2, [w2, b2])

        assert loss.item() == pytest.approx(loss2.item(), rel=1e-14)
        assert np.allclose(g_w.data, g_w2.data, rtol=1e-13, atol=1e-15)
        assert np.allclose(g_b.data, g_b2.data, rtol=1e-13, atol=1e-15)

    def test_batched_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        arrays = [rng.standard_normal((3, 4, 2)), rng.standard_normal((3, 2, 2))]

        def f(args):
            a, b = args
            return float(np.sum(np.matmul(a, b) ** 2))

        tape = Tape()
        leaves = [tape.leaf(a) for a in arrays]
        out = reduce_sum(mul(bmm(*leaves), bmm(*leaves)))
        for g, ref in zip(backward(out, leaves), finite_diff(f, arrays)):
            assert np.allclose(g.data, ref, rtol=1e-6, atol=1e-8)

    def test_tile_and_sum_batch_are_adjoints(self):
        tape = Tape()
        x = tape.leaf(np.array([1.0, 2.0]))
        tiled = tile_batch(x, 5)
        assert tiled.data.shape == (5, 2)
        (g,) = backward(reduce_sum(tiled), [x])
        assert np.array_equal(g.data, np.full(2, 5.0))
        (g2,) = backward(reduce_sum(sum_batch(tile_batch(x, 3))), [x])
        assert np.array_equal(g2.data, np.full(2, 3.0))

    def test_batched_second_order_flows(self):
        # d²/dw² of sum over 2 task copies of (3w)²/2 = 2 * 9
        tape = Tape()
        w = tape.leaf(np.array([[2.0]]))
        wt = tile_batch(w, 2)
        h = Tensor(np.full((2, 1, 1), 3.0))
        y = blinear(h, wt, Tensor(np.zeros((2, 1))))
        loss = mul(reduce_sum(mul(y, y)), 0.5)
        (g,) = backward(loss, [w], create_graph=True)
        (h2,) = backward(reduce_sum(g), [w])
        assert h2.data.item() == 18.0

    def test_batched_shape_validation(self):
        tape = Tape()
        a3 = tape.leaf(np.ones((2, 3, 4)))
        with pytest.raises(ValueError, match="bmm shapes disagree"):
            bmm(a3, np.ones((2, 3, 4)))
        with pytest.raises(ValueError, match="bmm expects a 3-D"):
            bmm(np.ones((3, 4)), np.ones((2, 4, 3)))
        with pytest.raises(ValueError, match="bswap expects a 3-D"):
            bswap(np.ones((3, 4)))
        with pytest.raises(ValueError, match="blinear dimensions disagree"):
            blinear(a3, np.ones((2, 5, 4)), np.ones((2, 4)))
        with pytest.raises(ValueError, match="bsum_rows expects a 3-D"):
            bsum_rows(np.ones(3))
        with pytest.raises(ValueError, match="btile_rows expects a 2-D"):
            btile_rows(np.ones(3), 2)
        with pytest.raises(ValueError, match="at least one task"):
            tile_batch(np.ones(2), 0)
        with pytest.raises(ValueError, match="leading task axis"):
            sum_batch(np.float64(3.0))

    def test_relu_subgradient_at_zero_is_zero(self):
        tape = Tape()
        x = tape.leaf(np.array([-1.0, 0.0, 2.0]))
        (g,) = backward(reduce_sum(relu(x)), [x])
        assert np.array_equal(g.data, np.array([0.0, 0.0, 1.0]))

    def test_repeated_backward_same_tape_is_stable(self):
        tape = Tape()
        x = tape.leaf(np.array([1.0, 2.0]))
        y = reduce_sum(mul(x, x))
        (g1,) = backward(y, [x])
        (g2,) = backward(y, [x])
        assert np.array_equal(g1.data, g2.data)


class TestErrorsAndDispatch:
    def test_backward_rejects_nonscalar(self):
        tape = Tape()
        x = tape.leaf(np.ones((2, 2)))
        with pytest.raises(ValueError, match="scalar"):
            backward(mul(x, x), [x])

    def test_backward_rejects_foreign_tape(self):
        t1, t2 = Tape(), Tape()
        x1, x2 = t1.leaf(1.0), t2.leaf(1.0)
        y = mul(x1, x1)
        with pytest.raises(ValueError, match="tape"):
            backward(y, [x2])

    def test_mixing_tapes_in_forward_fails(self):
        t1, t2 = Tape(), Tape()
        with pytest.raises(ValueError, match="different tapes"):
            add(t1.leaf(1.0), t2.leaf(2.0))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shapes"):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
        with pytest.raises(ValueError, match="inner dimensions"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_scalar_broadcast_allowed(self):
        out = add(Tensor(np.ones((2, 2))), 3.0)
        assert np.array_equal(out.data, np.full((2, 2), 4.0))

    def test_dispatchers(self):
        a = Tensor(np.array([1.0, 2.0]))
        assert np.array_equal(elementwise("add", a, a).data, np.array([2.0, 4.0]))
        assert reduce("mean", a).item() == 1.5
        assert reduce("sum", Tensor(np.ones((3, 2))), axis=0).data.tolist() == [3.0, 3.0]
        with pytest.raises(ValueError, match="unknown elementwise"):
            elementwise("div", a, a)
        with pytest.raises(ValueError, match="unknown reduction"):
            reduce("max", a)

    def test_float64_enforced(self):
        t = Tensor(np.ones((2,), dtype=np.float32))
        assert t.data.dtype == np.float64

    def test_empty_mean_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            reduce_mean(Tensor(np.zeros((0, 1))))
