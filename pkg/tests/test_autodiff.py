"""Tape-based reverse-mode differentiation: values, gradients, and memory
behavior. Gradients are checked against central finite differences on a
float64 tape."""

import numpy as np
import pytest

from evdeblur import autodiff as ad


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar-valued f at x (flat loop)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def check_grad(build, x0, rtol=1e-6, atol=1e-9, h=1e-6):
    """build(var_or_array) -> scalar expression; compares tape grad to FD."""
    tape = ad.Tape(dtype=np.float64)
    v = tape.leaf(x0)
    out = build(v)
    tape.backward(out)
    analytic = v.grad.copy()
    numeric = fd_grad(lambda x: float(ad.value_of(build(x))), np.array(x0, dtype=np.float64), h=h)
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


rng = np.random.default_rng(42)


class TestValues:
    def test_ops_match_numpy_without_vars(self):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(ad.add(a, b), a + b)
        np.testing.assert_array_equal(ad.mul(a, b), a * b)
        np.testing.assert_array_equal(ad.sub(a, b), a - b)
        np.testing.assert_allclose(ad.div(a, np.abs(b) + 1), a / (np.abs(b) + 1))
        np.testing.assert_array_equal(ad.sin(a), np.sin(a))
        np.testing.assert_array_equal(ad.exp(a), np.exp(a))
        np.testing.assert_array_equal(ad.sum(a, axis=1), a.sum(axis=1))
        np.testing.assert_array_equal(ad.cumsum(a, axis=1), np.cumsum(a, axis=1))
        np.testing.assert_array_equal(ad.reshape(a, (4, 3)), a.reshape(4, 3))

    def test_forward_values_match_numpy_with_vars(self):
        a = rng.standard_normal((2, 3))
        tape = ad.Tape(dtype=np.float64)
        v = tape.leaf(a)
        np.testing.assert_array_equal(ad.value_of(ad.sin(v)), np.sin(a))
        np.testing.assert_array_equal(ad.value_of(v + v), a + a)
        np.testing.assert_array_equal(ad.value_of(v @ v.T), a @ a.T)

    def test_log_is_guarded(self):
        assert np.isfinite(ad.log(0.0))
        assert ad.log(0.0) == pytest.approx(np.log(ad.LOG_EPS))
        tape = ad.Tape(dtype=np.float64)
        v = tape.leaf(np.zeros(3))
        out = ad.log(v)
        assert np.all(np.isfinite(ad.value_of(out)))

    def test_leaf_casts_to_tape_dtype(self):
        tape32 = ad.Tape()  # float32 default
        assert tape32.leaf(np.arange(3, dtype=np.float64)).value.dtype == np.float32
        tape64 = ad.Tape(dtype=np.float64)
        assert tape64.leaf(np.arange(3, dtype=np.float32)).value.dtype == np.float64

    def test_softplus_matches_reference(self):
        x = np.array([-30.0, -1.0, 0.0, 1.0, 30.0])
        np.testing.assert_allclose(ad.softplus(x), np.logaddexp(0.0, x), rtol=1e-12)
        # large inputs neither overflow nor saturate to zero slope
        tape = ad.Tape(dtype=np.float64)
        v = tape.leaf(np.array([700.0]))
        out = ad.softplus(v)
        assert np.isfinite(ad.value_of(out)).all()


class TestGradients:
    def test_add_sub_mul_div(self):
        x0 = rng.standard_normal((3, 2)) + 3.0
        check_grad(lambda v: ad.sum((v + 2.0) * v - v / 3.0), x0)

    def test_div_wrt_denominator(self):
        x0 = rng.standard_normal(4) + 5.0
        check_grad(lambda v: ad.sum(np.array([1.0, 2.0, 3.0, 4.0]) / v), x0)

    def test_broadcasting_unbroadcast(self):
        # (3,1) against (4,) broadcast; gradient must fold back to (3,1)
        x0 = rng.standard_normal((3, 1))
        c = rng.standard_normal(4)
        check_grad(lambda v: ad.sum((v + c) * (v * c)), x0)

    def test_scalar_broadcast_grad(self):
        x0 = np.array(1.7)
        c = rng.standard_normal((2, 5))
        check_grad(lambda v: ad.sum(v * c), x0)

    def test_matmul_both_sides(self):
        a0 = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        check_grad(lambda v: ad.sum(ad.matmul(v, b) * 0.7), a0)
        check_grad(lambda v: ad.sum(ad.matmul(a0, v) ** 2), b)

    def test_matmul_vector_cases(self):
        m = rng.standard_normal((3, 3))
        v0 = rng.standard_normal(3)
        check_grad(lambda v: ad.sum(ad.matmul(m, v)), v0)
        check_grad(lambda v: ad.sum(ad.matmul(v, m)), v0)
        check_grad(lambda v: ad.matmul(v, v0 + 1.0), v0)

    def test_affine_all_inputs(self):
        x = rng.standard_normal((5, 3))
        w0 = rng.standard_normal((3, 4))
        b0 = rng.standard_normal(4)
        check_grad(lambda v: ad.sum(ad.affine(x, v, b0) ** 2), w0)
        check_grad(lambda v: ad.sum(ad.affine(x, w0, v) ** 2), b0)
        check_grad(lambda v: ad.sum(ad.affine(v, w0, b0) ** 2), rng.standard_normal((5, 3)))

    def test_affine_matches_unfused(self):
        x = rng.standard_normal((5, 3))
        w = rng.standard_normal((3, 4))
        b = rng.standard_normal(4)
        np.testing.assert_allclose(ad.affine(x, w, b), x @ w + b, rtol=1e-12)

    def test_elementwise_unary(self):
        x0 = rng.uniform(0.3, 2.0, 6)
        check_grad(lambda v: ad.sum(ad.sin(v)), x0)
        check_grad(lambda v: ad.sum(ad.cos(v)), x0)
        check_grad(lambda v: ad.sum(ad.exp(v)), x0)
        check_grad(lambda v: ad.sum(ad.log(v)), x0)
        check_grad(lambda v: ad.sum(ad.sqrt(v)), x0)
        check_grad(lambda v: ad.sum(ad.softplus(v)), x0)
        check_grad(lambda v: ad.sum(ad.sigmoid(v)), x0)
        check_grad(lambda v: ad.sum(v ** 3), x0)

    def test_atan2_both_args(self):
        y0 = rng.standard_normal(5) + 2.0
        x0 = rng.standard_normal(5) + 2.0
        check_grad(lambda v: ad.sum(ad.atan2(v, x0)), y0)
        check_grad(lambda v: ad.sum(ad.atan2(y0, v)), x0)

    def test_reductions_and_shape_ops(self):
        x0 = rng.standard_normal((3, 4))
        check_grad(lambda v: ad.sum(ad.sum(v, axis=0) ** 2), x0)
        check_grad(lambda v: ad.sum(ad.sum(v, axis=1, keepdims=True) * 2.0), x0)
        check_grad(lambda v: ad.sum(ad.mean(v, axis=1) ** 2), x0)
        check_grad(lambda v: ad.sum(ad.cumsum(v, axis=1) ** 2), x0)
        check_grad(lambda v: ad.sum(ad.reshape(v, (2, 6)) ** 2), x0)
        check_grad(lambda v: ad.sum(ad.transpose(v) ** 2), x0)
        check_grad(lambda v: ad.sum(ad.repeat_rows(v, 3) ** 2), x0)
        check_grad(lambda v: ad.norm(v), x0)

    def test_concat_grad(self):
        a0 = rng.standard_normal((2, 3))
        b = rng.standard_normal((4, 3))
        check_grad(lambda v: ad.sum(ad.concat([v, b], axis=0) ** 2), a0)
        check_grad(lambda v: ad.sum(ad.concat([b.T, v], axis=1) ** 2), a0.T.copy())

    def test_take_basic_and_fancy(self):
        x0 = rng.standard_normal((5, 3))
        check_grad(lambda v: ad.sum(v[1:4] ** 2), x0)
        check_grad(lambda v: ad.sum(v[2] * 3.0), x0)
        idx = np.array([0, 2, 2, 4])  # repeated index must accumulate
        check_grad(lambda v: ad.sum(v[idx] ** 2), x0)

    def test_norm_at_zero_is_finite(self):
        tape = ad.Tape(dtype=np.float64)
        v = tape.leaf(np.zeros(3))
        out = ad.norm(v)
        tape.backward(out)
        assert np.all(v.grad == 0.0)

    def test_reused_node_accumulates(self):
        # y = x*x + x: dy/dx = 2x + 1, the node x feeds two consumers
        check_grad(lambda v: ad.sum(v * v + v), rng.standard_normal(4))

    def test_grad_through_deep_chain(self):
        x0 = rng.uniform(0.5, 1.5, 3)

        def deep(v):
            out = v
            for _ in range(30):
                out = ad.sin(out * 1.01) + out * 0.5
            return ad.sum(out)

        check_grad(deep, x0, rtol=1e-5)


class TestTapeMechanics:
    def test_backward_requires_scalar(self):
        tape = ad.Tape(dtype=np.float64)
        v = tape.leaf(np.ones(3))
        out = v * 2.0
        with pytest.raises(ad.NonScalarOutput):
            tape.backward(out)

    def test_backward_rejects_foreign_node(self):
        t1 = ad.Tape(dtype=np.float64)
        t2 = ad.Tape(dtype=np.float64)
        v = t1.leaf(1.0)
        out = v * 2.0
        with pytest.raises(ValueError):
            t2.backward(out)

    def test_unused_leaf_gets_zero_grad(self):
        tape = ad.Tape(dtype=np.float64)
        used = tape.leaf(np.ones(2))
        unused = tape.leaf(np.ones(3))
        tape.backward(ad.sum(used))
        np.testing.assert_array_equal(unused.grad, np.zeros(3))
        np.testing.assert_array_equal(used.grad, np.ones(2))

    def test_interior_grads_freed_leaf_grads_kept(self):
        tape = ad.Tape(dtype=np.float64)
        v = tape.leaf(np.ones(3))
        mid = v * 2.0
        out = ad.sum(mid)
        tape.backward(out)
        assert v.grad is not None
        assert mid.grad is None  # non-leaf grads are released during the sweep

    def test_two_backwards_same_tape_do_not_double_count(self):
        tape = ad.Tape(dtype=np.float64)
        v = tape.leaf(np.array([3.0]))
        out = ad.sum(v * v)
        tape.backward(out)
        g1 = v.grad.copy()
        tape.backward(out)
        np.testing.assert_array_equal(v.grad, g1)

    def test_dispose_clears_graph_keeps_values(self):
        tape = ad.Tape(dtype=np.float64)
        v = tape.leaf(np.ones(3))
        out = ad.sum(v * 2.0)
        val = float(ad.value_of(out))
        tape.dispose()
        assert not tape.nodes and not tape.leaves
        assert float(ad.value_of(out)) == val  # values survive disposal
        assert out._bwd is None

    def test_constants_are_not_recorded(self):
        tape = ad.Tape(dtype=np.float64)
        v = tape.leaf(np.ones(3))
        n0 = len(tape.nodes)
        ad.add(np.ones(3), np.ones(3))  # no Var involved
        assert len(tape.nodes) == n0
        v + 1.0
        assert len(tape.nodes) == n0 + 1

    def test_operator_sugar_matches_functions(self):
        tape = ad.Tape(dtype=np.float64)
        a = tape.leaf(np.array([2.0, 3.0]))
        np.testing.assert_array_equal(ad.value_of(-a), [-2.0, -3.0])
        np.testing.assert_array_equal(ad.value_of(1.0 - a), [-1.0, -2.0])
        np.testing.assert_array_equal(ad.value_of(2.0 / a), [1.0, 2.0 / 3.0])
        np.testing.assert_array_equal(ad.value_of(a ** 2), [4.0, 9.0])
        np.testing.assert_array_equal(a.reshape(2, 1).shape, (2, 1))
        assert a.T.shape == (2,)
        assert a.size == 2 and a.ndim == 1
