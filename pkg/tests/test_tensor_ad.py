import math

import numpy as np
import pytest

from hamlearn import tensor_ad as ad
from hamlearn.tensor_ad import ShapeError, Tape, TapeError
from conftest import rel_err


def grad_of(fn, *arrays):
    _, grads = ad.value_and_grad(fn, *arrays)
    return grads


# -- forward values -------------------------------------------------------------


def test_matmul_selects_column():
    out = ad.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 0.0]))
    assert out.tolist() == [1.0, 3.0]


def test_tanh_of_zero():
    assert ad.tanh(np.array([0.0])).tolist() == [0.0]


def test_softmax_cross_entropy_two_equal_logits():
    assert abs(float(ad.softmax_cross_entropy(np.zeros(2), np.array(0.0))) - math.log(2)) < 1e-15


def test_scalar_results_are_zero_dimensional():
    assert ad.mse(np.ones(3), np.zeros(3)).shape == ()
    t = Tape()
    x = t.leaf(np.ones(2))
    assert ad.mse(x, np.zeros(2)).value.shape == ()


def test_results_are_read_only():
    out = ad.add(np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        out[0] = 5.0


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2,\)"):
        ad.matmul(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ShapeError, match="add"):
        ad.add(np.ones(2), np.ones(3))


def test_checked_tensor_rejects_nan():
    with pytest.raises(ad.NonFiniteError):
        ad.tensor([1.0, np.nan])
    assert np.isnan(ad.tensor([np.nan], checked=False)[0])


def test_checked_tape_rejects_overflow():
    t = Tape(checked=True)
    x = t.leaf(np.array([1e308]))
    with np.errstate(over="ignore"), pytest.raises(ad.NonFiniteError):
        ad.scale(x, 10.0)


# -- backward -------------------------------------------------------------------


def test_identity_gradient_is_one():
    assert grad_of(lambda x: ad.identity(x), np.array(2.0))[0] == 1.0


def test_tanh_gradient_at_zero():
    t = Tape()
    x = t.leaf(np.array([0.0]))
    t.finalize(ad.tanh(x))
    assert ad.backward(t, np.array([1.0]))[x].tolist() == [1.0]


def test_half_squared_error_gradient():
    # f(theta) = 0.5 (theta u - y)^2 at theta=0, u=1, y=1
    g = grad_of(lambda th: ad.mse(ad.matmul(th, np.array([1.0])), np.array([1.0])), np.array([[0.0]]))[0]
    assert g.tolist() == [[-1.0]]


def test_backward_requires_finalized_tape():
    t = Tape()
    t.leaf(np.ones(1))
    with pytest.raises(TapeError):
        ad.backward(t)


def test_backward_seed_shape_checked():
    t = Tape()
    x = t.leaf(np.ones(3))
    t.finalize(ad.tanh(x))
    with pytest.raises(TapeError):
        ad.backward(t, np.ones(2))
    with pytest.raises(TapeError):
        ad.backward(t)  # non-scalar output needs a seed


def test_unreachable_leaf_gets_zero_gradient():
    t = Tape()
    x = t.leaf(np.ones(2))
    y = t.leaf(np.ones(3))
    t.finalize(ad.mse(x, np.zeros(2)))
    assert ad.backward(t)[y].tolist() == [0.0, 0.0, 0.0]


def test_mixing_tapes_is_an_error():
    a, b = Tape(), Tape()
    with pytest.raises(TapeError):
        ad.add(a.leaf(np.ones(2)), b.leaf(np.ones(2)))


def test_finalized_tape_is_frozen():
    t = Tape()
    x = t.leaf(np.ones(2))
    t.finalize(ad.mse(x, np.zeros(2)))
    with pytest.raises(TapeError):
        t.leaf(np.ones(1))
    with pytest.raises(TapeError):
        ad.tanh(x)


def test_gradient_shapes_follow_variables():
    t = Tape()
    w = t.leaf(np.ones((2, 3)))
    x = t.leaf(np.ones(3))
    t.finalize(ad.mse(ad.matmul(w, x), np.zeros(2)))
    g = ad.backward(t)
    assert g[w].shape == (2, 3) and g[x].shape == (3,)


# -- finite differences ---------------------------------------------------------


def test_fd_of_square():
    g = ad.finite_difference_gradient(lambda x: float(x[0] ** 2), np.array([3.0]))
    assert abs(g[0] - 6.0) < 1e-9


def test_fd_of_constant_is_zero():
    assert ad.finite_difference_gradient(lambda x: 7.0, np.ones(4)).tolist() == [0.0] * 4


def test_fd_matches_backward_for_cross_entropy():
    g_ad = grad_of(lambda z: ad.softmax_cross_entropy(z, np.array(0.0)), np.zeros(2))[0]
    g_fd = ad.finite_difference_gradient(lambda z: float(ad.softmax_cross_entropy(z, np.array(0.0))), np.zeros(2))
    assert rel_err(g_ad, g_fd) < 1e-6


def test_fd_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ad.finite_difference_gradient(lambda x: 0.0, np.ones(1), step=0.0)
    with pytest.raises(ad.NonFiniteError):
        ad.finite_difference_gradient(lambda x: float("inf"), np.ones(1))


# -- randomized primitive checks --------------------------------------------------

def _cases():
    """(name, fn, shapes) for scalar-valued compositions isolating each primitive."""
    r = np.random.default_rng(99).normal(size=6)
    return [
        ("matmul_mv", lambda a, x: ad.mse(ad.matmul(a, x), np.zeros(3)), [(3, 4), (4,)]),
        ("matmul_vm", lambda x, a: ad.mse(ad.matmul(x, a), np.zeros(4)), [(3,), (3, 4)]),
        ("matmul_mm", lambda a, b: ad.mse(ad.matmul(a, b), np.zeros((2, 3))), [(2, 4), (4, 3)]),
        ("dot", lambda x, y: ad.matmul(x, y), [(5,), (5,)]),
        ("add", lambda x, y: ad.mse(ad.add(x, y), r[:4]), [(4,), (4,)]),
        ("hadamard", lambda x, y: ad.mse(ad.hadamard(x, y), r[:4]), [(4,), (4,)]),
        ("concat", lambda x, y: ad.mse(ad.concat(x, y), r[:5]), [(2,), (3,)]),
        ("tanh", lambda x: ad.mse(ad.tanh(x), r[:4]), [(4,)]),
        ("relu", lambda x: ad.mse(ad.relu(x), r[:4]), [(4,)]),
        ("identity", lambda x: ad.mse(ad.identity(x), r[:4]), [(4,)]),
        ("scale", lambda x: ad.mse(ad.scale(x, -1.7), r[:4]), [(4,)]),
        ("sxe_index", lambda z: ad.softmax_cross_entropy(z, np.array(2.0)), [(4,)]),
        ("sxe_probs", lambda z, p: ad.softmax_cross_entropy(z, ad.scale(ad.tanh(p), 0.5)), [(4,), (4,)]),
        ("mse", lambda y, t: ad.mse(y, t), [(4,), (4,)]),
    ]


@pytest.mark.parametrize("name,fn,shapes", _cases(), ids=[c[0] for c in _cases()])
def test_primitive_gradients_match_finite_differences(name, fn, shapes):
    rng = np.random.default_rng(hash(name) % 2**32)
    worst = 0.0
    for _ in range(100):
        arrays = [rng.normal(size=s) for s in shapes]
        if name == "relu":
            # keep clear of the kink so central differences are valid
            arrays[0] = np.where(np.abs(arrays[0]) < 1e-3, 0.5, arrays[0])
        _, grads = ad.value_and_grad(fn, *arrays)
        for i, a in enumerate(arrays):
            def f(x, i=i):
                args = list(arrays)
                args[i] = x
                return float(fn(*args))
            fd = ad.finite_difference_gradient(f, a)
            worst = max(worst, rel_err(grads[i], fd))
    assert worst < 1e-6, f"{name}: worst relative error {worst:.2e}"


def test_composed_model_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(20):
        w1, b1, w2 = rng.normal(size=(5, 3)), rng.normal(size=5), rng.normal(size=(2, 5))
        u = rng.normal(size=3)

        def net(w1, b1, w2):
            return ad.softmax_cross_entropy(ad.matmul(w2, ad.tanh(ad.add(ad.matmul(w1, u), b1))), np.array(1.0))

        _, grads = ad.value_and_grad(net, w1, b1, w2)
        for i, a in enumerate((w1, b1, w2)):
            def f(x, i=i):
                args = [w1, b1, w2]
                args[i] = x
                return float(net(*args))
            assert rel_err(grads[i], ad.finite_difference_gradient(f, a)) < 1e-6


# -- determinism / replay -------------------------------------------------------------


def _record():
    rng = np.random.default_rng(0)
    t = Tape()
    w = t.leaf(rng.normal(size=(4, 4)))
    x = t.leaf(rng.normal(size=4))
    h = ad.tanh(ad.matmul(w, x))
    out = ad.softmax_cross_entropy(ad.concat(h, ad.relu(x)), np.array(3.0))
    t.finalize(out)
    return t, w, x, out


def test_forward_is_deterministic():
    a = _record()[3].value
    b = _record()[3].value
    assert a.tobytes() == b.tobytes()


def test_replay_reproduces_recorded_output_bitwise():
    t, _, _, out = _record()
    assert t.replay().tobytes() == out.value.tobytes()


def test_backward_twice_is_identical():
    t, w, x, _ = _record()
    g1 = ad.backward(t)
    g2 = ad.backward(t)
    assert g1[w].tobytes() == g2[w].tobytes() and g1[x].tobytes() == g2[x].tobytes()


def test_nodes_are_topologically_ordered():
    t = _record()[0]
    for i, node in enumerate(t.nodes):
        assert all(j is None or j < i for j in node.inputs)


def test_eager_and_traced_values_agree_bitwise():
    rng = np.random.default_rng(1)
    w, x = rng.normal(size=(3, 3)), rng.normal(size=3)
    eager = ad.tanh(ad.matmul(w, x))
    t = Tape()
    traced = ad.tanh(ad.matmul(t.leaf(w), t.leaf(x)))
    assert eager.tobytes() == traced.value.tobytes()
