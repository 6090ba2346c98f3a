import numpy as np
import pytest

from chainplan import gradtape as gt


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function of a flat array."""
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_add_elementwise():
    out = gt.add(gt.Tensor([1.0, 2.0]), gt.Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_matmul_identity():
    out = gt.matmul(gt.Tensor(np.eye(2)), gt.Tensor([[5.0], [7.0]]))
    np.testing.assert_array_equal(out.data, [[5.0], [7.0]])


def test_sum_square():
    assert gt.tsum(gt.square(gt.Tensor([3.0, 4.0]))).data == 25.0


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(gt.ShapeError, match=r"\(2,\).*\(3,\)"):
        gt.add(gt.Tensor([1.0, 2.0]), gt.Tensor([1.0, 2.0, 3.0]))


def test_backward_sum_square():
    tape = gt.Tape()
    x = tape.leaf([3.0, 4.0])
    (g,) = gt.backward(gt.tsum(gt.square(x)), [x])
    np.testing.assert_array_equal(g, [6.0, 8.0])


def test_backward_requires_scalar_root():
    tape = gt.Tape()
    x = tape.leaf([1.0, 2.0])
    with pytest.raises(gt.TapeError, match="scalar"):
        gt.backward(gt.square(x), [x])


def test_backward_rejects_off_tape_wrt():
    tape = gt.Tape()
    x = tape.leaf([1.0])
    y = gt.Tensor([1.0])
    with pytest.raises(gt.TapeError):
        gt.backward(gt.tsum(x), [y])


def test_unused_leaf_gets_zero_gradient():
    tape = gt.Tape()
    x = tape.leaf([1.0, 2.0])
    y = tape.leaf([[3.0, 4.0]])
    (gy,) = gt.backward(gt.tsum(gt.square(x)), [y])
    np.testing.assert_array_equal(gy, np.zeros((1, 2)))


def test_stop_gradient_identity_forward_bitwise():
    x = gt.Tensor([1.0, 2.0])
    out = gt.stop_gradient(x)
    assert out.data is x.data


def test_stop_gradient_blocks_flow():
    tape = gt.Tape()
    x = tape.leaf([1.0, 2.0])
    y = tape.leaf([3.0, 4.0])
    loss = gt.tsum(gt.mul(gt.stop_gradient(x), y))
    gx, gy = gt.backward(loss, [x, y])
    np.testing.assert_array_equal(gx, [0.0, 0.0])
    np.testing.assert_array_equal(gy, [1.0, 2.0])


def test_stop_gradient_residual():
    # L = (sg(a) - b)^2 at a = b = 1: residual zero, both gradients zero
    tape = gt.Tape()
    a = tape.leaf([1.0])
    b = tape.leaf([1.0])
    loss = gt.tsum(gt.square(gt.stop_gradient(a) - b))
    ga, gb = gt.backward(loss, [a, b])
    assert ga[0] == 0.0 and gb[0] == 0.0


OPS = {
    "add": (2, lambda a, b: gt.add(a, b)),
    "sub": (2, lambda a, b: gt.sub(a, b)),
    "mul": (2, lambda a, b: gt.mul(a, b)),
    "scale": (1, lambda a: gt.scale(a, 1.7)),
    "mean": (1, lambda a: gt.tmean(a)),
    "square": (1, gt.square),
    "sqrt": (1, gt.sqrt),
    "tanh": (1, gt.tanh),
    "silu": (1, gt.silu),
    "l2norm": (1, gt.l2norm),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(5))
def test_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(hash((name, seed)) % 2**32)
    arity, op = OPS[name]
    xs = [rng.uniform(0.1, 10.0, size=6) for _ in range(arity)]

    def scalar_fn(args):
        return float(gt.tsum(op(*[gt.Tensor(a) for a in args])).data)

    tape = gt.Tape()
    leaves = [tape.leaf(x) for x in xs]
    grads = gt.backward(gt.tsum(op(*leaves)), leaves)
    for i in range(arity):
        def f(xi, i=i):
            args = [x.copy() for x in xs]
            args[i] = xi
            return scalar_fn(args)

        num = numeric_grad(f, xs[i])
        denom = max(np.abs(num).max(), 1.0)
        assert np.abs(grads[i] - num).max() / denom < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_matmul_select_concat_gradients(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.1, 10.0, size=(3, 4))
    B = rng.uniform(0.1, 10.0, size=(4, 2))

    def net(a):
        out = gt.matmul(a, gt.Tensor(B))
        return gt.concat([gt.select_rows(out, [0, 2]),
                          gt.select_cols(gt.select_rows(out, [1, 1]), 0, 2)], axis=0)

    def f(a_flat):
        return float(gt.l2norm(net(gt.Tensor(a_flat.reshape(3, 4)))).data)

    tape = gt.Tape()
    a = tape.leaf(A)
    (g,) = gt.backward(gt.l2norm(net(a)), [a])
    num = numeric_grad(f, A.ravel()).reshape(3, 4)
    assert np.abs(g - num).max() / max(np.abs(num).max(), 1.0) < 1e-4


def test_backward_deterministic():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((4, 3))
    W = rng.standard_normal((3, 2))

    def run():
        tape = gt.Tape()
        x = tape.leaf(x0)
        out = gt.silu(gt.matmul(x, gt.Tensor(W)))
        return gt.backward(gt.tsum(gt.square(out)), [x])[0]

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


def test_ops_off_tape_are_plain_values():
    out = gt.silu(gt.matmul(gt.Tensor(np.ones((2, 2))), gt.Tensor(np.ones((2, 2)))))
    assert out.tape is None
    assert np.all(np.isfinite(out.data))
