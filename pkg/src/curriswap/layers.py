"""Recurrent and attention building blocks.

All sequence tensors are batch-major: ``[B x N x C]``. Sequences inside a
batch are left-aligned and padded on the right; ``lengths`` gives the real
length of each row. Padding never leaks into real positions: the forward
LSTM only reads padding after the real steps, and the backward LSTM runs
over per-row reversed input so its real steps also come first.
"""
from collections import OrderedDict
from dataclasses import dataclass
import zlib

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import IncompatibleError, ShapeError

INIT_SCALE = 0.08
FORGET_BIAS = 1.0


def part_rng(seed, tag):
    """Generator keyed on a seed and a stable string tag."""
    return np.random.default_rng([int(seed), zlib.crc32(tag.encode("utf-8"))])


def _uniform(rng, shape):
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


# Input adapters are exempt from the uniform range: embeddings are N(0, 1)
# and the frame projection N(0, 1/F), so LSTM inputs start at unit scale.


def _param(data, name):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


@dataclass
class LstmParams:
    """Gate rows are ordered (input, forget, cell-candidate, output)."""

    input_weights: Tensor   # [4H x D]
    recurrent_weights: Tensor  # [4H x H]
    bias: Tensor  # [4H]

    def __post_init__(self):
        four_h, d = self.input_weights.shape
        if four_h % 4 or four_h == 0 or d == 0:
            raise ShapeError(f"input weights must be [4H x D], got {self.input_weights.shape}")
        h = four_h // 4
        if self.recurrent_weights.shape != (four_h, h):
            raise ShapeError(f"recurrent weights {self.recurrent_weights.shape} != {(four_h, h)}")
        if self.bias.shape != (four_h,):
            raise ShapeError(f"bias {self.bias.shape} != ({four_h},)")

    @property
    def hidden(self):
        return self.recurrent_weights.shape[1]

    @property
    def input_dim(self):
        return self.input_weights.shape[1]

    @classmethod
    def init(cls, rng, input_dim, hidden, prefix=""):
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = FORGET_BIAS
        return cls(_param(_uniform(rng, (4 * hidden, input_dim)), prefix + "w_in"),
                   _param(_uniform(rng, (4 * hidden, hidden)), prefix + "w_rec"),
                   _param(bias, prefix + "bias"))

    def named(self, prefix):
        return [(prefix + "w_in", self.input_weights),
                (prefix + "w_rec", self.recurrent_weights),
                (prefix + "bias", self.bias)]


def _gates_to_state(gates, c, H):
    i = ad.sigmoid(ad.slice_last(gates, 0, H))
    f = ad.sigmoid(ad.slice_last(gates, H, 2 * H))
    g = ad.tanh(ad.slice_last(gates, 2 * H, 3 * H))
    o = ad.sigmoid(ad.slice_last(gates, 3 * H, 4 * H))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def lstm_cell_step(p, x, h, c):
    """One LSTM step. Accepts single vectors ([D], [H], [H]) or batches ([B x D], ...)."""
    x, h, c = ad._as_tensor(x), ad._as_tensor(h), ad._as_tensor(c)
    if x.shape[-1] != p.input_dim or h.shape[-1] != p.hidden or c.shape != h.shape:
        raise ShapeError(f"lstm_cell_step: x {x.shape}, h {h.shape}, c {c.shape} "
                         f"do not fit D={p.input_dim}, H={p.hidden}")
    gates = ad.add(ad.linear(x, p.input_weights, p.bias), ad.linear(h, p.recurrent_weights))
    return _gates_to_state(gates, c, p.hidden)


def run_lstm(p, xs):
    """Unidirectional pass over [B x N x D]; returns the stacked hidden states [B x N x H]."""
    B, N = xs.shape[0], xs.shape[1]
    H = p.hidden
    proj = ad.linear(xs, p.input_weights, p.bias)
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    outs = []
    for t in range(N):
        gates = ad.add(ad.take_step(proj, t), ad.linear(h, p.recurrent_weights))
        h, c = _gates_to_state(gates, c, H)
        outs.append(h)
    return ad.stack_steps(outs)


class Component:
    """A named, swappable parameter group."""

    kind = "component"

    def __init__(self, name):
        self.name = name

    def named_params(self):
        raise NotImplementedError

    def params(self):
        return OrderedDict(self.named_params())

    def meta(self):
        raise NotImplementedError

    def copy(self):
        clone = type(self).from_params(self.meta(), {k: v.data.copy() for k, v in self.named_params()},
                                       self.name)
        return clone

    @classmethod
    def from_params(cls, meta, arrays, name):
        raise NotImplementedError


class Encoder(Component):
    """Input adapter followed by a stack of bidirectional LSTM layers.

    The adapter is a linear frame projection (``input_kind='frames'``) or a
    token embedding table (``input_kind='tokens'``). Output width is 2H.
    """

    kind = "encoder"

    def __init__(self, name, input_kind, input_size, embed, hidden, depth, arrays=None, seed=0):
        super().__init__(name)
        if input_kind not in ("frames", "tokens"):
            raise ValueError(f"unknown encoder input kind {input_kind!r}")
        if min(input_size, embed, hidden, depth) < 1:
            raise ShapeError("encoder dims must be positive")
        self.input_kind = input_kind
        self.input_size = input_size
        self.embed = embed
        self.hidden = hidden
        self.depth = depth
        rng = part_rng(seed, name)
        if input_kind == "frames":
            self.adapter_w = _param(rng.standard_normal((embed, input_size)) / np.sqrt(input_size), "adapter.weight")
            self.adapter_b = _param(np.zeros(embed), "adapter.bias")
            self.embedding = None
        else:
            self.embedding = _param(rng.standard_normal((input_size, embed)), "embedding")
            self.adapter_w = self.adapter_b = None
        self.forward_layers = []
        self.backward_layers = []
        for l in range(depth):
            d = embed if l == 0 else 2 * hidden
            self.forward_layers.append(LstmParams.init(rng, d, hidden, f"l{l}.fwd."))
            self.backward_layers.append(LstmParams.init(rng, d, hidden, f"l{l}.bwd."))
        if arrays is not None:
            _load_arrays(self, arrays)

    @property
    def out_width(self):
        return 2 * self.hidden

    def named_params(self):
        out = []
        if self.embedding is not None:
            out.append(("embedding", self.embedding))
        else:
            out += [("adapter.weight", self.adapter_w), ("adapter.bias", self.adapter_b)]
        for l, (f, b) in enumerate(zip(self.forward_layers, self.backward_layers)):
            out += f.named(f"l{l}.fwd.") + b.named(f"l{l}.bwd.")
        return out

    def meta(self):
        return {"input_kind": self.input_kind, "input_size": self.input_size, "embed": self.embed,
                "hidden": self.hidden, "depth": self.depth}

    @classmethod
    def from_params(cls, meta, arrays, name):
        return cls(name, meta["input_kind"], meta["input_size"], meta["embed"], meta["hidden"],
                   meta["depth"], arrays=arrays)

    def embed_inputs(self, inputs):
        if self.input_kind == "tokens":
            return ad.gather_rows(self.embedding, inputs)
        inputs = ad._as_tensor(inputs)
        if inputs.shape[-1] != self.input_size:
            raise ShapeError(f"encoder expects {self.input_size}-wide frames, got {inputs.shape}")
        return ad.linear(inputs, self.adapter_w, self.adapter_b)

    def __call__(self, inputs, lengths):
        return encode_bidirectional(self, inputs, lengths)


def encode_bidirectional(enc, inputs, lengths=None):
    """Encode a padded batch (or a single unbatched sequence) to [.. x N x 2H]."""
    if enc.input_kind == "tokens":
        inputs = np.asarray(inputs, dtype=np.int64)
        shape = inputs.shape
    else:
        inputs = ad._as_tensor(inputs)
        shape = inputs.shape
    single = len(shape) == (1 if enc.input_kind == "tokens" else 2)
    if single:
        shape = (1,) + shape
        inputs = inputs[None] if enc.input_kind == "tokens" else ad.reshape(inputs, shape)
    if shape[1] < 1:
        raise ShapeError("encode_bidirectional: empty sequence")
    if lengths is None:
        lengths = [shape[1]] * shape[0]
    x = ad.dropout(enc.embed_inputs(inputs))
    for fwd, bwd in zip(enc.forward_layers, enc.backward_layers):
        hf = run_lstm(fwd, x)
        hb = ad.reverse_steps(run_lstm(bwd, ad.reverse_steps(x, lengths)), lengths)
        x = ad.concat_last_dim(hf, hb)
    if single:
        x = ad.reshape(x, x.shape[1:])
    return x


class Bridge(Component):
    """Learned [C -> H] map from encoder states to attention keys."""

    kind = "bridge"

    def __init__(self, name, in_width, out_width, arrays=None, seed=0):
        super().__init__(name)
        if min(in_width, out_width) < 1:
            raise ShapeError("bridge dims must be positive")
        self.in_width = in_width
        self.out_width = out_width
        self.weight = _param(_uniform(part_rng(seed, name), (out_width, in_width)), "weight")
        if arrays is not None:
            _load_arrays(self, arrays)

    def named_params(self):
        return [("weight", self.weight)]

    def meta(self):
        return {"in_width": self.in_width, "out_width": self.out_width}

    @classmethod
    def from_params(cls, meta, arrays, name):
        return cls(name, meta["in_width"], meta["out_width"], arrays=arrays)

    def __call__(self, memory):
        if memory.shape[-1] != self.in_width:
            raise IncompatibleError("bridge input width", self.in_width, memory.shape[-1])
        return ad.linear(memory, self.weight)


def length_mask(lengths, n):
    return np.arange(n)[None, :] < np.asarray(lengths)[:, None]


def attend(memory, query, keys=None, mask=None):
    """Dot-product attention.

    Scores are ``dot(keys[n], query)``; the context is the weighted sum of
    ``memory`` rows (``keys`` defaults to ``memory``). Works on a single
    sequence ([N x C], [C]) or a batch ([B x N x C], [B x C]).
    """
    memory, query = ad._as_tensor(memory), ad._as_tensor(query)
    same = keys is None
    keys = memory if same else ad._as_tensor(keys)
    single = memory.ndim == 2
    if single:
        memory = ad.reshape(memory, (1,) + memory.shape)
        keys = memory if same else ad.reshape(keys, (1,) + keys.shape)
        query = ad.reshape(query, (1,) + query.shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)[None, :]
    if keys.shape[-1] != query.shape[-1]:
        raise ShapeError(f"attention width mismatch: keys {keys.shape[-1]} vs query {query.shape[-1]}")
    weights = ad.softmax_rows(ad.bmv(keys, query), mask)
    context = ad.bvm(weights, memory)
    if single:
        weights = ad.reshape(weights, weights.shape[1:])
        context = ad.reshape(context, context.shape[1:])
    return weights, context


class Decoder(Component):
    """Unidirectional attention decoder with a token head and an optional state head.

    h_tilde = tanh(W_c [context; h_top] + b_c); logits = W_y h_tilde + b_y.
    The state head (transcoder) maps h_tilde to a real vector of ``state_dim``.
    """

    kind = "decoder"

    def __init__(self, name, vocab, embed, hidden, depth, memory_width, state_dim=0,
                 arrays=None, seed=0):
        super().__init__(name)
        if min(vocab, embed, hidden, depth, memory_width) < 1:
            raise ShapeError("decoder dims must be positive")
        if memory_width % 2:
            raise ShapeError("decoder memory width must be even (bidirectional states)")
        self.vocab = vocab
        self.embed = embed
        self.hidden = hidden
        self.depth = depth
        self.memory_width = memory_width
        self.state_dim = state_dim
        rng = part_rng(seed, name)
        self.embedding = _param(rng.standard_normal((vocab, embed)), "embedding")
        self.layers = [LstmParams.init(rng, embed if l == 0 else hidden, hidden, f"l{l}.")
                       for l in range(depth)]
        half = memory_width // 2
        self.init_w = [_param(_uniform(rng, (hidden, half)), f"init{l}.weight") for l in range(depth)]
        self.init_b = [_param(np.zeros(hidden), f"init{l}.bias") for l in range(depth)]
        self.combine_w = _param(_uniform(rng, (hidden, memory_width + hidden)), "combine.weight")
        self.combine_b = _param(np.zeros(hidden), "combine.bias")
        self.out_w = _param(_uniform(rng, (vocab, hidden)), "out.weight")
        self.out_b = _param(np.zeros(vocab), "out.bias")
        self.add_state_head(state_dim, seed)
        if arrays is not None:
            _load_arrays(self, arrays)

    def add_state_head(self, state_dim, seed=0):
        self.state_dim = state_dim
        if state_dim:
            rng = part_rng(seed, self.name + "/state_head")
            self.state_w = _param(_uniform(rng, (state_dim, self.hidden)), "state.weight")
            self.state_b = _param(np.zeros(state_dim), "state.bias")
        else:
            self.state_w = self.state_b = None

    def named_params(self):
        out = [("embedding", self.embedding)]
        for l, p in enumerate(self.layers):
            out += p.named(f"l{l}.")
        for l in range(self.depth):
            out += [(f"init{l}.weight", self.init_w[l]), (f"init{l}.bias", self.init_b[l])]
        out += [("combine.weight", self.combine_w), ("combine.bias", self.combine_b),
                ("out.weight", self.out_w), ("out.bias", self.out_b)]
        if self.state_dim:
            out += [("state.weight", self.state_w), ("state.bias", self.state_b)]
        return out

    def meta(self):
        return {"vocab": self.vocab, "embed": self.embed, "hidden": self.hidden, "depth": self.depth,
                "memory_width": self.memory_width, "state_dim": self.state_dim}

    @classmethod
    def from_params(cls, meta, arrays, name):
        return cls(name, meta["vocab"], meta["embed"], meta["hidden"], meta["depth"],
                   meta["memory_width"], meta.get("state_dim", 0), arrays=arrays)

    def initial_state(self, memory, lengths):
        """Per layer: h = tanh(W [last forward state] + b), c = 0."""
        last = ad.select_steps(memory, np.asarray(lengths) - 1)
        fwd = ad.slice_last(last, 0, self.memory_width // 2)
        B = memory.shape[0]
        state = []
        for w, b in zip(self.init_w, self.init_b):
            state.append((ad.tanh(ad.linear(fwd, w, b)), Tensor(np.zeros((B, self.hidden)))))
        return state

    def logits(self, h_tilde):
        return ad.linear(h_tilde, self.out_w, self.out_b)

    def states(self, h_tilde):
        if not self.state_dim:
            raise ShapeError(f"decoder {self.name!r} has no state head")
        return ad.linear(h_tilde, self.state_w, self.state_b)

    def run_steps(self, inputs, memory, keys, mem_lengths):
        """Teacher-forced pass over input ids [B x T]; returns T per-step h_tilde tensors [B x H]."""
        inputs = np.asarray(inputs)
        mask = length_mask(mem_lengths, memory.shape[1])
        state = self.initial_state(memory, mem_lengths)
        emb = ad.dropout(ad.gather_rows(self.embedding, inputs))
        outs = []
        for t in range(inputs.shape[1]):
            h_tilde, state, _ = decoder_step(self, ad.take_step(emb, t), state, memory, keys, mask)
            outs.append(ad.dropout(h_tilde))
        return outs

    def run(self, inputs, memory, keys, mem_lengths):
        """Teacher-forced pass over input ids [B x T]; returns h_tilde [B x T x H]."""
        return ad.stack_steps(self.run_steps(inputs, memory, keys, mem_lengths))


def decoder_step(dec, prev_embedding, state, memory, keys, mask=None):
    """One decoding step.

    Returns ``(h_tilde, new_state, attention_weights)``; project ``h_tilde``
    with :meth:`Decoder.logits` for token scores. There is no input feeding:
    ``h_tilde`` is not passed to the next step.
    """
    x = prev_embedding
    new_state = []
    for p, (h, c) in zip(dec.layers, state):
        h, c = lstm_cell_step(p, x, h, c)
        new_state.append((h, c))
        x = h
    weights, context = attend(memory, x, keys=keys, mask=mask)
    h_tilde = ad.tanh(ad.linear(ad.concat_last_dim(context, x), dec.combine_w, dec.combine_b))
    return h_tilde, new_state, weights


def _load_arrays(component, arrays):
    params = component.params()
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ShapeError(f"{component.kind} {component.name!r}: missing {sorted(missing)}, "
                         f"unexpected {sorted(extra)}")
    for k, t in params.items():
        a = np.asarray(arrays[k], dtype=np.float64)
        if a.shape != t.shape:
            raise ShapeError(f"{component.kind} {component.name!r} param {k}: "
                             f"shape {a.shape} != {t.shape}")
        t.data = a.copy()


COMPONENT_TYPES = {c.kind: c for c in (Encoder, Bridge, Decoder)}
