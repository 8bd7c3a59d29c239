import numpy as np
import pytest

from metagrad.optim import AdamState, adam_init, adam_step, sgd_step


def test_sgd_matches_formula_and_is_pure():
    p = [np.array([1.0, 2.0]), np.array([[3.0]])]
    g = [np.array([0.5, -0.5]), np.array([[2.0]])]
    snapshot = [a.copy() for a in p]
    out = sgd_step(p, g, lr=0.1)
    assert np.allclose(out[0], [0.95, 2.05])
    assert np.allclose(out[1], [[2.8]])
    for before, after in zip(snapshot, p):
        assert np.array_equal(before, after)


def test_sgd_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        sgd_step([np.zeros(2)], [], lr=0.1)


def test_adam_first_step_is_signed_lr():
    # With bias correction, step 1 moves each coordinate by ~lr * sign(g).
    p = [np.array([0.0, 0.0, 0.0])]
    g = [np.array([10.0, -0.3, 1e-12])]
    out, state = adam_step(p, g, adam_init(p), lr=0.01)
    assert state.t == 1
    assert np.allclose(out[0][:2], [-0.01, 0.01], rtol=1e-6)
    assert abs(out[0][2]) < 0.01  # eps damps near-zero gradients


def test_adam_scale_invariance():
    # Rescaling all gradients by a large constant barely changes the path.
    rng = np.random.default_rng(0)
    p0 = [rng.standard_normal(4)]

    def run(scale):
        p, st = [p0[0].copy()], adam_init(p0)
        for k in range(50):
            g = [scale * (p[0] - 3.0)]
            p, st = adam_step(p, g, st, lr=0.05)
        return p[0]

    assert np.allclose(run(1.0), run(1000.0), atol=1e-4)


def test_adam_converges_on_quadratic():
    p = [np.array([5.0, -4.0])]
    st = adam_init(p)
    for _ in range(2000):
        g = [2.0 * p[0]]
        p, st = adam_step(p, g, st, lr=0.05)
    assert np.max(np.abs(p[0])) < 1e-3


def test_adam_deterministic_and_pure():
    p = [np.array([1.0])]
    g = [np.array([0.7])]
    st = adam_init(p)
    out1, st1 = adam_step(p, g, st, lr=0.001)
    out2, st2 = adam_step(p, g, st, lr=0.001)
    assert np.array_equal(out1[0], out2[0])
    assert np.array_equal(st1.m[0], st2.m[0])
    assert st.t == 0 and np.array_equal(st.m[0], [0.0])  # original untouched


def test_adam_state_length_check():
    p = [np.zeros(2)]
    with pytest.raises(ValueError, match="disagree"):
        adam_step(p, [np.zeros(2)], AdamState(m=[], v=[], t=0))
