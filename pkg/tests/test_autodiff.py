import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from curriswap import autodiff as ad
from curriswap.autodiff import Tensor
from curriswap.errors import NonFiniteError, ShapeError, StaleTapeError, VocabularyError


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


def grads_of(fn, *arrays):
    xs = [leaf(a) for a in arrays]
    with ad.Tape() as tape:
        tape.backward(fn(*xs))
    return [x.grad for x in xs]


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.matmul(np.eye(2), a).data, a)

    def test_hand_product(self):
        out = ad.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]])
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestElementwise:
    def test_tanh_at_zero(self):
        (g,) = grads_of(lambda x: ad.sum_all(ad.tanh(x)), [0.0])
        assert ad.tanh(Tensor([0.0])).data[0] == 0.0
        assert g[0] == 1.0

    def test_sigmoid_at_zero(self):
        assert ad.elementwise("sigmoid", Tensor([0.0])).data[0] == 0.5

    def test_add(self):
        np.testing.assert_array_equal(ad.elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4, 6])

    def test_no_broadcasting(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            ad.elementwise("relu", Tensor([1.0]))

    def test_sigmoid_is_stable_for_large_inputs(self):
        y = ad.sigmoid(Tensor([-1000.0, 1000.0])).data
        np.testing.assert_array_equal(y, [0.0, 1.0])


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ad.softmax_rows(Tensor([[1.0, 1.0, 1.0]])).data, [[1 / 3] * 3], atol=1e-15)

    def test_closed_form(self):
        np.testing.assert_allclose(ad.softmax_rows(Tensor([[0.0, math.log(2)]])).data, [[1 / 3, 2 / 3]],
                                   atol=1e-15)

    def test_single_element(self):
        assert ad.softmax_rows(Tensor([[7.5]])).data[0, 0] == 1.0

    def test_mask_zeroes_entries(self):
        y = ad.softmax_rows(Tensor([[0.0, 5.0, 0.0]]), mask=[[True, False, True]]).data
        np.testing.assert_allclose(y, [[0.5, 0.0, 0.5]])

    def test_fully_masked_row(self):
        with pytest.raises(ShapeError):
            ad.softmax_rows(Tensor([[0.0, 1.0]]), mask=[[False, False]])


class TestConcatAndGather:
    def test_concat(self):
        np.testing.assert_array_equal(ad.concat_last_dim(Tensor([1.0, 2.0]), Tensor([3.0])).data, [1, 2, 3])

    def test_concat_routes_ones(self):
        ga, gb = grads_of(lambda a, b: ad.sum_all(ad.concat_last_dim(a, b)), [1.0, 2.0], [3.0])
        np.testing.assert_array_equal(ga, [1, 1])
        np.testing.assert_array_equal(gb, [1])

    def test_concat_leading_mismatch(self):
        with pytest.raises(ShapeError):
            ad.concat_last_dim(Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2))))

    def test_gather_accumulates_duplicates(self):
        table = leaf(np.arange(6.0).reshape(3, 2))
        w = np.array([[1.0, 2.0], [10.0, 20.0]])
        with ad.Tape() as tape:
            rows = ad.gather_rows(table, [0, 0])
            np.testing.assert_array_equal(rows.data[0], rows.data[1])
            tape.backward(ad.sum_all(ad.mul(rows, Tensor(w))))
        np.testing.assert_array_equal(table.grad[0], w.sum(axis=0))
        np.testing.assert_array_equal(table.grad[1:], 0.0)

    def test_gather_empty(self):
        assert ad.gather_rows(Tensor(np.ones((4, 3))), []).shape == (0, 3)

    def test_gather_out_of_range(self):
        with pytest.raises(VocabularyError):
            ad.gather_rows(Tensor(np.ones((4, 3))), [4])


class TestLosses:
    @pytest.mark.parametrize("V", [2, 5, 50])
    def test_uniform_ce_is_log_v(self, V):
        loss = ad.cross_entropy(Tensor(np.zeros((3, V))), [0, 1, V - 1])
        assert loss.item() == pytest.approx(math.log(V), abs=1e-14)

    def test_ce_hand_value(self):
        assert ad.cross_entropy(Tensor([[1.0, 0.0]]), [0]).item() == pytest.approx(math.log1p(math.exp(-1)),
                                                                                abs=1e-12)
        assert ad.cross_entropy(Tensor([[1.0, 0.0]]), [0]).item() == pytest.approx(0.31326, abs=1e-5)

    def test_masked_row_contributes_nothing(self):
        logits = np.array([[1.0, 0.0], [3.0, -2.0]])
        (g,) = grads_of(lambda z: ad.cross_entropy(z, [0, 1], mask=[1, 0]), logits)
        assert ad.cross_entropy(Tensor(logits), [0, 1], mask=[1, 0]).item() == pytest.approx(
            ad.cross_entropy(Tensor(logits[:1]), [0]).item(), abs=1e-15)
        np.testing.assert_array_equal(g[1], 0.0)

    def test_masked_row_may_hold_padding_ids(self):
        ad.cross_entropy(Tensor(np.zeros((2, 3))), [1, 99], mask=[1, 0])

    def test_ce_stable_for_huge_logits(self):
        assert ad.cross_entropy(Tensor([[1000.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-12)

    def test_mse_values(self):
        assert ad.mse(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0
        assert ad.mse(Tensor([0.0, 0.0]), Tensor([1.0, 1.0])).item() == 1.0
        assert ad.mse(Tensor([1.0, 2.0]), Tensor([3.0, 5.0])).item() == 6.5

    def test_mse_row_mask(self):
        pred = Tensor([[1.0, 1.0], [5.0, 5.0]])
        assert ad.mse(pred, Tensor(np.zeros((2, 2))), mask=[1, 0]).item() == 1.0


class TestBackward:
    def test_square(self):
        (g,) = grads_of(lambda x: ad.mul(x, x), [3.0])
        assert g[0] == 6.0

    def test_sum_tanh_at_zero(self):
        (g,) = grads_of(lambda x: ad.sum_all(ad.tanh(x)), np.zeros(4))
        np.testing.assert_array_equal(g, np.ones(4))

    def test_composite_matches_finite_differences(self, rng):
        w = rng.standard_normal((4, 3))
        targets = [0, 2, 1, 2, 0]

        def f(x):
            return ad.cross_entropy(ad.softmax_rows(ad.matmul(x, Tensor(w))), targets)
        assert ad.grad_check(f, rng.standard_normal((5, 4))) < 1e-5

    def test_reverse_construction_order(self):
        order = []
        x = leaf([1.0])
        with ad.Tape() as tape:
            a = ad.scale(x, 2.0)
            b = ad.tanh(a)
            c = ad.sum_all(b)
            for out, _, fn in tape.nodes:
                def spy(g, fn=fn, out=out):
                    order.append(out)
                    return fn(g)
                tape.nodes[[n[0] for n in tape.nodes].index(out)] = (out, _, spy)
            tape.backward(c)
        assert order == [c, b, a]

    def test_consumed_tape_is_stale(self):
        x = leaf([2.0])
        with ad.Tape() as tape:
            y = ad.mul(x, x)
            tape.backward(y)
            with pytest.raises(StaleTapeError):
                tape.backward(y)
            with pytest.raises(StaleTapeError):
                ad.add(y, y)

    def test_clear_invalidates(self):
        x = leaf([2.0])
        with ad.Tape() as tape:
            y = ad.mul(x, x)
            tape.clear()
            with pytest.raises(StaleTapeError):
                tape.backward(y)

    def test_non_scalar_loss(self):
        x = leaf([1.0, 2.0])
        with ad.Tape() as tape:
            with pytest.raises(ShapeError):
                tape.backward(ad.tanh(x))

    def test_non_finite_inputs_rejected(self):
        with pytest.raises(NonFiniteError):
            ad.tensor([np.nan])

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with ad.Tape() as tape, ad.no_grad():
            ad.tanh(x)
        assert len(tape) == 0


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        assert ad.grad_check(lambda x: ad.sum_all(ad.mul(x, x)), rng.standard_normal(6)) < 1e-7

    def test_cross_entropy_random_logits(self, rng):
        assert ad.grad_check(lambda z: ad.cross_entropy(z, [1, 0, 3]), rng.standard_normal((3, 4))) < 1e-5


class TestDropout:
    def test_identity_outside_scope(self):
        x = Tensor([1.0, 2.0])
        assert ad.dropout(x) is x

    def test_inverted_scaling_and_gradient(self):
        x = leaf(np.ones(2000))
        with ad.Tape() as tape, ad.dropout_scope(0.25, np.random.default_rng(0)):
            y = ad.dropout(x)
            tape.backward(ad.sum_all(y))
        kept = y.data != 0
        np.testing.assert_allclose(y.data[kept], 1 / 0.75)
        np.testing.assert_array_equal(x.grad, y.data)
        assert 0.2 < 1 - kept.mean() < 0.3

    def test_rate_validated(self):
        with pytest.raises(ValueError):
            with ad.dropout_scope(1.0, np.random.default_rng(0)):
                pass


# ---------------------------------------------------------------- properties

small = hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)),
                   elements=st.floats(-5, 5, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(small, st.floats(-50, 50, allow_nan=False))
def test_softmax_rows_sum_to_one_and_shift_invariant(a, c):
    y = ad.softmax_rows(Tensor(a)).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(ad.softmax_rows(Tensor(a + c)).data, y, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(small)
def test_backward_is_linear_in_the_loss(a):
    w1 = np.cos(np.arange(a.size)).reshape(a.shape)
    w2 = np.sin(np.arange(a.size)).reshape(a.shape)

    def l1(x):
        return ad.sum_all(ad.mul(ad.tanh(x), Tensor(w1)))

    def l2(x):
        return ad.sum_all(ad.mul(ad.sigmoid(x), Tensor(w2)))
    (g_sum,) = grads_of(lambda x: ad.add(l1(x), l2(x)), a)
    (g1,) = grads_of(l1, a)
    (g2,) = grads_of(l2, a)
    np.testing.assert_allclose(g_sum, g1 + g2, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=8))
def test_gather_grad_counts_duplicates(ids):
    (g,) = grads_of(lambda t: ad.sum_all(ad.gather_rows(t, ids)), np.zeros((4, 2)))
    for r in range(4):
        np.testing.assert_array_equal(g[r], ids.count(r))


@settings(max_examples=30, deadline=None)
@given(small)
def test_dropout_without_scope_is_exact_identity(a):
    np.testing.assert_array_equal(ad.dropout(Tensor(a)).data, a)
