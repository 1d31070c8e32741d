import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zeroddi.numerics import (
    NondeterministicFunctionError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    add,
    add_n,
    attention_pool,
    backward,
    grad_check,
    layer_norm,
    linear,
    logsumexp_vec,
    masked_max_vec,
    masked_rowmax,
    matmul,
    matmul_nt,
    matvec,
    mean_rows,
    mul,
    normalize_rows,
    normalize_vec,
    pick,
    scale,
    softmax_rows,
    stack_rows,
    sub,
    sum_all,
)


def _triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return np.array(out)


class TestMatmul:
    def test_identity(self):
        x = np.arange(4.0).reshape(2, 2)
        out = matmul(Tensor(np.eye(2)), Tensor(x))
        assert np.array_equal(out.data, x)

    def test_unit_column_selects(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
        assert np.array_equal(out.data, [[2.0], [4.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        got = matmul(Tensor(a), Tensor(b)).data
        assert np.abs(got - _triple_loop_matmul(a, b)).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_matmul_nt_matches(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 6)), rng.normal(size=(3, 6))
        got = matmul_nt(Tensor(a), Tensor(b), 0.5).data
        assert np.allclose(got, 0.5 * a @ b.T, atol=1e-14)


class TestSoftmax:
    def test_zeros(self):
        out = softmax_rows(Tensor([[0.0, 0.0, 0.0]]))
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-12)

    def test_constant_rows(self):
        out = softmax_rows(Tensor([[5.0, 5.0, 5.0]]))
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-12)

    def test_frozen_values(self):
        # oracle: direct evaluation p_i = exp(x_i) / sum_j exp(x_j)
        out = softmax_rows(Tensor([[1.0, 2.0, 3.0]]))
        expect = [0.09003057, 0.24472847, 0.66524096]
        assert np.abs(out.data[0] - expect).max() < 1e-8

    @given(
        st.lists(
            st.lists(st.floats(-50, 50), min_size=2, max_size=6),
            min_size=1,
            max_size=4,
        ).filter(lambda rows: len({len(r) for r in rows}) == 1)
    )
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one(self, rows):
        out = softmax_rows(Tensor(rows))
        assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-9

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=6), st.floats(-40, 40))
    @settings(max_examples=60, deadline=None)
    def test_shift_invariance(self, row, c):
        a = softmax_rows(Tensor([row])).data
        b = softmax_rows(Tensor([[x + c for x in row]])).data
        assert np.abs(a - b).max() < 1e-9


class TestLayerNorm:
    def test_constant_row_collapses_to_bias(self):
        out = layer_norm(Tensor([[4.0, 4.0, 4.0]]), Tensor([1.0] * 3), Tensor([0.0] * 3))
        assert np.array_equal(out.data, np.zeros((1, 3)))

    def test_two_point_row(self):
        out = layer_norm(Tensor([[1.0, 3.0]]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), eps=0.0)
        assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-12)

    def test_statistics_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 7))
        out = layer_norm(Tensor(x), Tensor(np.ones(7)), Tensor(np.zeros(7)), eps=0.0).data
        for i in range(3):
            mu = sum(x[i]) / 7
            var = sum((v - mu) ** 2 for v in x[i]) / 7
            expect = (x[i] - mu) / math.sqrt(var)
            assert np.abs(out[i] - expect).max() < 1e-10

    def test_affine(self):
        x = Tensor([[1.0, 2.0, 6.0]])
        g, b = Tensor([2.0, 2.0, 2.0]), Tensor([1.0, 1.0, 1.0])
        plain = layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        out = layer_norm(x, g, b).data
        assert np.allclose(out, 2.0 * plain + 1.0, atol=1e-12)


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        with Tape() as tape:
            tape.watch(x)
            loss = sum_all(mul(x, x))
        grads = backward(loss, tape)
        assert np.allclose(grads[x], 2.0 * x.data, atol=1e-14)

    def test_softmax_cross_entropy_identity(self):
        # d/dlogits of (logsumexp - logits[y]) is softmax(logits) - onehot(y)
        rng = np.random.default_rng(3)
        logits = Tensor(rng.normal(size=5), requires_grad=True)
        y = 2
        with Tape() as tape:
            tape.watch(logits)
            loss = sub(logsumexp_vec(logits), pick(logits, y))
        grads = backward(loss, tape)
        p = np.exp(logits.data - logits.data.max())
        p /= p.sum()
        p[y] -= 1.0
        assert np.abs(grads[logits] - p).max() < 1e-12

    def test_loss_must_be_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            tape.watch(x)
            y = mul(x, x)
        with pytest.raises(ShapeError):
            backward(y, tape)

    def test_unused_watched_param_gets_zeros(self):
        x = Tensor(np.ones(3), requires_grad=True)
        unused = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            tape.watch(x, unused)
            loss = sum_all(x)
        grads = backward(loss, tape)
        assert np.array_equal(grads[unused], np.zeros((2, 2)))

    def test_two_backward_passes_bitwise_identical(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        with Tape() as tape:
            tape.watch(w, x)
            loss = sum_all(softmax_rows(matmul(x, w)))
        g1 = backward(loss, tape)
        g2 = backward(loss, tape)
        assert all(np.array_equal(g1[k], g2[k]) for k in (w, x))

    def test_shared_input_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        with Tape() as tape:
            tape.watch(x)
            loss = sum_all(mul(x, x))
        assert backward(loss, tape)[x][0] == 6.0


class TestNonFinite:
    def test_nan_rejected_at_construction(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.nan])

    def test_overflow_in_op(self):
        big = Tensor([1e308])
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            add(big, big)


class TestNormalize:
    def test_unit_output(self):
        v = normalize_vec(Tensor([3.0, 4.0]))
        assert np.allclose(v.data, [0.6, 0.8], atol=1e-15)

    def test_exact_for_power_of_two_norm(self):
        # exact norms let antipodal cosines reach -1.0 exactly
        u = normalize_vec(Tensor([2.0, 0.0])).data
        assert u[0] == 1.0 and u[1] == 0.0

    def test_rows(self):
        x = np.array([[3.0, 4.0], [0.0, 2.0]])
        out = normalize_rows(Tensor(x)).data
        assert np.allclose(out, [[0.6, 0.8], [0.0, 1.0]], atol=1e-15)

    def test_gradient_guarded_at_origin(self):
        z = Tensor(np.zeros(3), requires_grad=True)
        with Tape() as tape:
            tape.watch(z)
            loss = sum_all(normalize_vec(z))
        grads = backward(loss, tape)
        assert np.isfinite(grads[z]).all()


class TestMaskedMax:
    def test_first_max_takes_subgradient(self):
        v = Tensor(np.array([2.0, 5.0, 5.0, 1.0]), requires_grad=True)
        with Tape() as tape:
            tape.watch(v)
            m = masked_max_vec(v, np.array([True] * 4))
        grads = backward(m, tape)
        assert np.array_equal(grads[v], [0.0, 1.0, 0.0, 0.0])

    def test_mask_respected(self):
        v = Tensor(np.array([9.0, 1.0, 3.0]))
        out = masked_max_vec(v, np.array([False, True, True]))
        assert out.item() == 3.0

    def test_rowmax(self):
        x = Tensor(np.array([[1.0, 7.0], [4.0, 2.0]]), requires_grad=True)
        mask = np.array([[True, True], [True, False]])
        with Tape() as tape:
            tape.watch(x)
            out = masked_rowmax(x, mask)
            loss = sum_all(out)
        assert np.array_equal(out.data, [7.0, 4.0])
        grads = backward(loss, tape)
        assert np.array_equal(grads[x], [[0.0, 1.0], [1.0, 0.0]])

    def test_empty_row_rejected(self):
        with pytest.raises(ShapeError):
            masked_rowmax(Tensor(np.ones((2, 2))), np.array([[True, True], [False, False]]))


class TestGradCheck:
    def test_quadratic_bowl(self):
        x = Tensor(np.array([0.5, -1.5, 2.0]), requires_grad=True)
        rep = grad_check(lambda: sum_all(mul(x, x)), {"x": x})
        assert rep.max_rel_err < 1e-8

    def test_alignment_loss_toy(self):
        from zeroddi.dua_loss import BatchForward, align_loss

        rng = np.random.default_rng(5)
        batch = BatchForward(
            h=[Tensor(rng.normal(size=4), requires_grad=True) for _ in range(2)],
            z=[Tensor(rng.normal(size=(3, 4)), requires_grad=True) for _ in range(2)],
            labels=[0, 2],
        )
        params = {f"h{i}": t for i, t in enumerate(batch.h)}
        params.update({f"z{i}": t for i, t in enumerate(batch.z)})
        rep = grad_check(lambda: align_loss(batch, 0.9), params)
        assert rep.passed and rep.max_rel_err < 1e-4

    def test_class_uniformity_no_ties(self):
        from zeroddi.dua_loss import class_uniformity_loss

        rng = np.random.default_rng(6)
        z = [Tensor(rng.normal(size=(4, 5)), requires_grad=True) for _ in range(2)]
        rep = grad_check(
            lambda: class_uniformity_loss(z), {f"z{i}": t for i, t in enumerate(z)}
        )
        assert rep.passed

    def test_nondeterministic_f_detected(self):
        state = {"n": 0.0}

        def f():
            state["n"] += 1.0
            return Tensor(state["n"])

        with pytest.raises(NondeterministicFunctionError):
            grad_check(f, {})

    def test_fused_ops(self):
        rng = np.random.default_rng(7)
        q = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        k = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        v = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
        rep = grad_check(
            lambda: sum_all(attention_pool(q, k, v, 0.7)), {"q": q, "k": k, "v": v}
        )
        assert rep.passed
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        rep = grad_check(lambda: sum_all(linear(x, w, b)), {"w": w, "b": b, "x": x})
        assert rep.passed


class TestTapeMechanics:
    def test_no_tape_no_recording(self):
        x = Tensor(np.ones(2), requires_grad=True)
        out = mul(x, x)  # outside any tape
        assert isinstance(out, Tensor)

    def test_nested_tapes_are_lifo(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        with Tape() as outer:
            outer.watch(x)
            mul(x, x)
            with Tape() as inner:
                inner.watch(x)
                b = sum_all(mul(x, x))
            gi = backward(b, inner)
        assert np.allclose(gi[x], [4.0])

    def test_add_n_and_stack(self):
        xs = [Tensor(np.array([float(i), 1.0]), requires_grad=True) for i in range(3)]
        with Tape() as tape:
            tape.watch(*xs)
            loss = sum_all(stack_rows(xs))
        grads = backward(loss, tape)
        assert all(np.array_equal(grads[x], [1.0, 1.0]) for x in xs)
        with Tape() as tape:
            tape.watch(*xs)
            loss = sum_all(add_n(xs))
        grads = backward(loss, tape)
        assert all(np.array_equal(grads[x], [1.0, 1.0]) for x in xs)
