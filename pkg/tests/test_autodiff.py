"""Tensor/tape tests: finite-difference oracles, linearity, determinism."""

import numpy as np
import pytest

from drlebm import autodiff as ad


def test_matmul_identity():
    out = ad.matmul(ad.constant(np.eye(2)), ad.constant([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_leaky_relu_negative_slope():
    assert ad.leaky_relu(ad.constant(-1.0)).item() == pytest.approx(-0.2)


def test_sum_reduce():
    assert ad.sum_reduce(ad.constant([1.0, 2.0, 3.0])).item() == 6.0


def test_backward_square():
    x = ad.tensor(3.0, requires_grad=True)
    with ad.Tape() as tape:
        y = ad.mul(x, x)
    assert tape.grad(y, x).item() == pytest.approx(6.0)


def test_backward_leaky_relu_piecewise():
    x = ad.tensor([-1.0, 2.0], requires_grad=True)
    with ad.Tape() as tape:
        y = ad.sum_reduce(ad.leaky_relu(x))
    np.testing.assert_allclose(tape.grad(y, x).data, [0.2, 1.0])


def _mlp_forward(leaves, X, widths):
    h = X
    for i in range(len(widths) - 1):
        h = ad.add_bias(ad.matmul(h, leaves[f"w{i}"]), leaves[f"b{i}"])
        if i < len(widths) - 2:
            h = ad.leaky_relu(h)
    return ad.sum_reduce(h)


def _random_net(rng, with_trig=False):
    d = int(rng.integers(2, 5))
    widths = [d] + [int(rng.integers(3, 9)) for _ in range(int(rng.integers(1, 3)))] + [1]
    leaves = {}
    for i in range(len(widths) - 1):
        leaves[f"w{i}"] = ad.tensor(rng.standard_normal((widths[i], widths[i + 1])), requires_grad=True)
        leaves[f"b{i}"] = ad.tensor(rng.standard_normal(widths[i + 1]), requires_grad=True)
    X = rng.standard_normal((int(rng.integers(1, 4)), d))
    return leaves, X, widths


def _central_diff(f, arr, h=1e-5):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def _max_rel_err(got, want):
    small = np.abs(want) < 1e-8
    abs_err = np.abs(got - want)
    rel = np.where(small, abs_err * 10.0, abs_err / np.maximum(np.abs(want), 1e-300))
    # near-zero entries effectively get a 1e-4-scale absolute budget per the
    # looser threshold for tiny references
    return float(rel.max()) if rel.size else 0.0


@pytest.mark.parametrize("seed", range(20))
def test_gradcheck_random_networks(seed):
    rng = np.random.default_rng(1000 + seed)
    leaves, X, widths = _random_net(rng)
    with ad.Tape() as tape:
        out = _mlp_forward(leaves, ad.constant(X), widths)
    grads = tape.gradients(out, list(leaves.values()))
    for (name, leaf), g in zip(leaves.items(), grads):
        want = _central_diff(lambda: _mlp_forward(leaves, ad.constant(X), widths).item(), leaf.data)
        assert _max_rel_err(g.data, want) < 1e-5, name


def test_gradcheck_trig_ops():
    rng = np.random.default_rng(7)
    x = ad.tensor(rng.standard_normal(5), requires_grad=True)

    def forward():
        return ad.sum_reduce(ad.mul(ad.sin(x), ad.cos(ad.scalar_mul(x, 0.5))))

    with ad.Tape() as tape:
        out = forward()
    got = tape.grad(out, x).data
    want = _central_diff(lambda: forward().item(), x.data)
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-9)


def test_linearity_of_backward():
    rng = np.random.default_rng(3)
    x = ad.tensor(rng.standard_normal((2, 3)), requires_grad=True)
    a, b = 2.5, -1.25

    def f():
        return ad.sum_reduce(ad.leaky_relu(x))

    def g():
        return ad.sum_reduce(ad.mul(x, x))

    with ad.Tape() as t1:
        out1 = ad.add(ad.scalar_mul(f(), a), ad.scalar_mul(g(), b))
    combined = t1.grad(out1, x).data
    with ad.Tape() as t2:
        gf = t2.grad(f(), x).data
    with ad.Tape() as t3:
        gg = t3.grad(g(), x).data
    np.testing.assert_allclose(combined, a * gf + b * gg, atol=1e-12)


def test_unused_leaf_gets_zero_gradient():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    unused = ad.tensor([5.0], requires_grad=True)
    with ad.Tape() as tape:
        out = ad.sum_reduce(x)
    gx, gu = tape.gradients(out, [x, unused])
    np.testing.assert_array_equal(gx.data, [1.0, 1.0])
    np.testing.assert_array_equal(gu.data, [0.0])


def test_determinism_bit_identical():
    rng = np.random.default_rng(11)
    leaves, X, widths = _random_net(rng)

    def run():
        with ad.Tape() as tape:
            out = _mlp_forward(leaves, ad.constant(X), widths)
        return [g.data.copy() for g in tape.gradients(out, list(leaves.values()))]

    for g1, g2 in zip(run(), run()):
        assert np.array_equal(g1, g2)


def test_second_derivative_tape_over_tape():
    # f(x) = x^3: f' = 3x^2, f'' = 6x.
    x = ad.tensor(1.7, requires_grad=True)
    with ad.Tape() as outer:
        with ad.Tape() as inner:
            y = ad.mul(ad.mul(x, x), x)
        dydx = inner.grad(y, x)
    d2 = outer.grad(dydx, x)
    assert dydx.item() == pytest.approx(3 * 1.7**2, rel=1e-12)
    assert d2.item() == pytest.approx(6 * 1.7, rel=1e-12)


def test_shape_mismatch_names_primitive_and_shapes():
    with pytest.raises(ad.ShapeMismatchError, match=r"matmul.*\(2, 2\).*\(3, 1\)"):
        ad.matmul(ad.constant(np.eye(2)), ad.constant(np.zeros((3, 1))))
    with pytest.raises(ad.ShapeMismatchError, match="add"):
        ad.add(ad.constant(np.zeros(2)), ad.constant(np.zeros(3)))


def test_non_scalar_backward_rejected():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    with ad.Tape() as tape:
        y = ad.scalar_mul(x, 2.0)
    with pytest.raises(ad.NonScalarOutputError):
        tape.gradients(y, [x])


def test_nan_is_a_hard_error():
    with pytest.raises(ad.NonFiniteError):
        ad.tensor([np.nan])
    big = ad.constant(np.full(3, 1e308))
    with np.errstate(over="ignore"), pytest.raises(ad.NonFiniteError, match="add"):
        ad.add(big, big)
