import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curriswap import autodiff as ad
from curriswap.autodiff import Tensor
from curriswap.errors import IncompatibleError, ShapeError
from curriswap.layers import (Bridge, Decoder, Encoder, LstmParams, attend, decoder_step, encode_bidirectional,
                              lstm_cell_step, run_lstm)


def zero_lstm(D, H):
    return LstmParams(Tensor(np.zeros((4 * H, D))), Tensor(np.zeros((4 * H, H))), Tensor(np.zeros(4 * H)))


def zero_out(component):
    for _, t in component.named_params():
        t.data[...] = 0.0
    return component


class TestLstmCell:
    def test_zero_params_zero_state(self):
        h, c = lstm_cell_step(zero_lstm(3, 2), np.ones(3), np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)

    def test_zero_params_unit_cell(self):
        # all gates sigmoid(0) = 0.5, candidate tanh(0) = 0
        h, c = lstm_cell_step(zero_lstm(1, 1), [0.0], [0.0], [1.0])
        assert c.data[0] == 0.5
        assert h.data[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)
        assert h.data[0] == pytest.approx(0.23106, abs=1e-5)

    def test_shapes(self, rng):
        p = LstmParams.init(rng, 5, 3)
        h, c = lstm_cell_step(p, rng.standard_normal(5), np.zeros(3), np.zeros(3))
        assert h.shape == c.shape == (3,)

    def test_forget_bias(self, rng):
        p = LstmParams.init(rng, 2, 3)
        np.testing.assert_array_equal(p.bias.data, [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])

    def test_input_width_checked(self, rng):
        with pytest.raises(ShapeError):
            lstm_cell_step(LstmParams.init(rng, 2, 3), np.ones(4), np.zeros(3), np.zeros(3))


def make_encoder(seed=0, hidden=3, depth=1):
    return Encoder("enc", "frames", 4, 5, hidden, depth, seed=seed)


class TestEncoder:
    def test_zero_params_zero_output(self, rng):
        enc = zero_out(make_encoder())
        out = encode_bidirectional(enc, rng.standard_normal((6, 4)))
        np.testing.assert_array_equal(out.data, 0.0)

    @pytest.mark.parametrize("N", [1, 2, 7])
    def test_output_shape(self, rng, N):
        assert encode_bidirectional(make_encoder(depth=2), rng.standard_normal((N, 4))).shape == (N, 6)

    def test_forward_on_reversed_input_matches_backward_stack(self, rng):
        enc = make_encoder(seed=4)
        enc.backward_layers[0] = enc.forward_layers[0]  # shared params
        xs = rng.standard_normal((5, 4))
        out = encode_bidirectional(enc, xs).data
        fwd_on_reversed = run_lstm(enc.forward_layers[0], enc.embed_inputs(Tensor(xs[::-1][None].copy()))).data[0]
        np.testing.assert_allclose(out[:, 3:], fwd_on_reversed[::-1], atol=1e-14)

    def test_every_position_depends_on_whole_input(self, rng):
        enc = make_encoder(seed=2)
        xs = rng.standard_normal((5, 4))
        base = encode_bidirectional(enc, xs).data
        for m in range(5):
            bumped = xs.copy()
            bumped[m] += 0.1
            diff = np.abs(encode_bidirectional(enc, bumped).data - base).max(axis=1)
            assert (diff > 0).all(), f"perturbing step {m}"

    def test_padding_does_not_leak(self, rng):
        enc = make_encoder(seed=1)
        xs = rng.standard_normal((4, 4))
        alone = encode_bidirectional(enc, xs).data
        padded = np.concatenate([xs, rng.standard_normal((3, 4))])[None]
        batched = encode_bidirectional(enc, Tensor(padded), [4]).data[0, :4]
        np.testing.assert_allclose(batched, alone, atol=1e-14)

    def test_frame_width_checked(self, rng):
        with pytest.raises(ShapeError):
            encode_bidirectional(make_encoder(), rng.standard_normal((3, 5)))


class TestAttend:
    def test_single_state(self, rng):
        mem = rng.standard_normal((1, 3))
        w, c = attend(mem, rng.standard_normal(3))
        np.testing.assert_array_equal(w.data, [1.0])
        np.testing.assert_allclose(c.data, mem[0], atol=1e-15)

    def test_orthogonal_query_is_uniform(self):
        mem = np.array([[1.0, 0.0, 2.0], [3.0, 0.0, -1.0], [0.5, 0.0, 0.0]])
        w, c = attend(mem, [0.0, 1.0, 0.0])
        np.testing.assert_allclose(w.data, [1 / 3] * 3, atol=1e-15)
        np.testing.assert_allclose(c.data, mem.mean(axis=0), atol=1e-15)

    def test_closed_form_weights(self):
        w, _ = attend(np.array([[0.0], [math.log(3)]]), [1.0])
        np.testing.assert_allclose(w.data, [0.25, 0.75], atol=1e-15)

    def test_separate_keys(self):
        mem = np.array([[1.0, 2.0], [3.0, 4.0]])
        keys = np.array([[0.0], [math.log(3)]])
        w, c = attend(mem, [1.0], keys=keys)
        np.testing.assert_allclose(c.data, 0.25 * mem[0] + 0.75 * mem[1], atol=1e-14)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            attend(np.ones((2, 3)), np.ones(2))

    def test_mask_excludes_padding(self):
        w, _ = attend(np.array([[1.0], [1.0], [9.0]]), [1.0], mask=[True, True, False])
        np.testing.assert_allclose(w.data, [0.5, 0.5, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 10_000))
def test_attend_probability_and_permutation_equivariance(N, C, seed):
    r = np.random.default_rng(seed)
    mem, q = r.standard_normal((N, C)), r.standard_normal(C)
    perm = r.permutation(N)
    w, c = attend(mem, q)
    wp, cp = attend(mem[perm], q)
    assert (w.data >= 0).all()
    assert abs(w.data.sum() - 1) < 1e-9
    np.testing.assert_allclose(wp.data, w.data[perm], atol=1e-12)
    np.testing.assert_allclose(cp.data, c.data, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.floats(1.01, 20), st.integers(0, 10_000))
def test_scaling_memory_keeps_attention_argmax(N, s, seed):
    r = np.random.default_rng(seed)
    mem, q = r.standard_normal((N, 3)), r.standard_normal(3)
    w, _ = attend(mem, q)
    ws, _ = attend(mem * s, q)
    assert np.argmax(ws.data) == np.argmax(w.data)
    assert ws.data.max() >= w.data.max() - 1e-12


def make_decoder(seed=0, depth=1):
    return Decoder("dec", vocab=7, embed=4, hidden=3, depth=depth, memory_width=6, seed=seed)


class TestDecoderStep:
    def setup_state(self, dec, rng, N=4):
        mem = Tensor(rng.standard_normal((1, N, 6)))
        keys = Bridge("b", 6, 3, seed=1)(mem)
        return mem, keys, dec.initial_state(mem, [N])

    def test_zero_combine_gives_zero_h_tilde_and_bias_logits(self, rng):
        dec = make_decoder()
        dec.combine_w.data[...] = 0.0
        dec.combine_b.data[...] = 0.0
        dec.out_b.data[...] = np.arange(7.0)
        mem, keys, state = self.setup_state(dec, rng)
        h_tilde, _, _ = decoder_step(dec, ad.gather_rows(dec.embedding, [3]), state, mem, keys)
        np.testing.assert_array_equal(h_tilde.data, 0.0)
        np.testing.assert_array_equal(dec.logits(h_tilde).data[0], np.arange(7.0))

    def test_weights_sum_to_one(self, rng):
        dec = make_decoder(depth=2)
        mem, keys, state = self.setup_state(dec, rng)
        _, new_state, w = decoder_step(dec, ad.gather_rows(dec.embedding, [2]), state, mem, keys)
        assert abs(w.data.sum() - 1) < 1e-9
        assert len(new_state) == 2

    def test_full_step_gradient(self, rng):
        dec = make_decoder(seed=5)
        mem = rng.standard_normal((1, 4, 6))
        bridge = Bridge("b", 6, 3, seed=2)

        def f(m):
            keys = bridge(m)
            state = dec.initial_state(m, [4])
            h_tilde, _, _ = decoder_step(dec, ad.gather_rows(dec.embedding, [3]), state, m, keys)
            return ad.cross_entropy(dec.logits(h_tilde), [5])
        assert ad.grad_check(f, mem) < 1e-5


class TestComponents:
    def test_bridge_width_checked(self):
        with pytest.raises(IncompatibleError):
            Bridge("b", 6, 3)(Tensor(np.ones((1, 2, 4))))

    def test_state_head_requires_width(self):
        with pytest.raises(ShapeError):
            make_decoder().states(Tensor(np.ones((1, 3))))

    def test_copy_is_deep_and_equal(self):
        enc = make_encoder(seed=9)
        clone = enc.copy()
        for (k, a), (k2, b) in zip(enc.named_params(), clone.named_params()):
            assert k == k2 and a is not b
            np.testing.assert_array_equal(a.data, b.data)

    def test_from_params_rejects_missing_entries(self):
        enc = make_encoder()
        arrays = {k: t.data for k, t in enc.named_params()}
        arrays.pop("adapter.bias")
        with pytest.raises(ShapeError):
            Encoder.from_params(enc.meta(), arrays, "x")
