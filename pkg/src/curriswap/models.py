"""Task models assembled from swappable encoder / bridge / decoder parts.

Plain assemblies (ASR, MT, ST, TRANSCODER) hold ``encoder``, ``bridge`` and
``decoder``. The slow-track speech translator additionally chains a
transcoder into an MT bridge and decoder:

    encoder -> bridge -> transcoder (state head) -> mt_bridge -> mt_decoder
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import BOS, EOS
from .errors import IncompatibleError, ShapeError, TaskMismatchError
from .layers import Bridge, Decoder, Encoder, decoder_step, length_mask


class TaskKind(str, Enum):
    ASR = "ASR"
    MT = "MT"
    ST = "ST"
    TRANSCODER = "TRANSCODER"


SPEECH_INPUT = (TaskKind.ASR, TaskKind.ST, TaskKind.TRANSCODER)

# Full-scale sizes; bundled plans use the desk sizes of ModelConfig.
FULL_SCALE_DIMS = {"frame_dim": 23, "embed": 128, "hidden": 512, "depth": 2}


@dataclass
class ModelConfig:
    task: TaskKind
    src_vocab: int
    tgt_vocab: int
    frame_dim: int = 23
    embed: int = 32
    hidden: int = 64
    depth: int = 1
    state_dim: int = 0
    aux_weight: float = 0.0
    seed: int = 0
    prefix: str = ""

    def __post_init__(self):
        self.task = TaskKind(self.task)


@dataclass
class Hypothesis:
    tokens: list
    attention: np.ndarray
    log_prob: float
    finished: bool = True
    states: np.ndarray = field(default=None, repr=False)


class ModelAssembly:
    def __init__(self, task, parts, aux_weight=0.0, meta=None):
        self.task = TaskKind(task)
        self.parts = OrderedDict(parts)
        self.aux_weight = float(aux_weight)
        self.meta = dict(meta or {})
        self.validate()

    @property
    def composed(self):
        return "transcoder" in self.parts

    def __getattr__(self, item):
        parts = self.__dict__.get("parts")
        if parts is not None and item in parts:
            return parts[item]
        raise AttributeError(item)

    @property
    def provenance(self):
        return {slot: comp.name for slot, comp in self.parts.items()}

    def named_params(self):
        return [(f"{slot}/{k}", t) for slot, comp in self.parts.items() for k, t in comp.named_params()]

    def params(self):
        return OrderedDict(self.named_params())

    def dims(self):
        enc = self.parts["encoder"]
        out_dec = self.parts["mt_decoder"] if self.composed else self.parts["decoder"]
        rec = {"D": enc.input_size if enc.input_kind == "frames" else None,
               "E": enc.embed, "H": enc.hidden, "depth": enc.depth, "C": enc.out_width,
               "V_in": enc.input_size if enc.input_kind == "tokens" else None,
               "V_out": out_dec.vocab}
        if self.task == TaskKind.TRANSCODER:
            rec["S"] = self.parts["decoder"].state_dim
        return rec

    def copy(self):
        return ModelAssembly(self.task, {k: v.copy() for k, v in self.parts.items()},
                             self.aux_weight, dict(self.meta))

    def validate(self):
        p = self.parts
        required = ["encoder", "bridge"] + (["transcoder", "mt_bridge", "mt_decoder"]
                                            if self.composed else ["decoder"])
        missing = [r for r in required if r not in p]
        if missing:
            raise IncompatibleError("assembly parts", required, list(p))
        enc = p["encoder"]
        want_kind = "frames" if self.task in SPEECH_INPUT else "tokens"
        if enc.input_kind != want_kind:
            raise IncompatibleError(f"{self.task.value} encoder input", want_kind, enc.input_kind)
        first_dec = p["transcoder"] if self.composed else p["decoder"]
        _check_attention(enc.out_width, p["bridge"], first_dec)
        if self.task == TaskKind.TRANSCODER and not first_dec.state_dim:
            raise IncompatibleError("transcoder state head width", ">0", 0)
        if self.composed:
            if self.task != TaskKind.ST:
                raise IncompatibleError("composed assembly task", "ST", self.task.value)
            tc = p["transcoder"]
            if not tc.state_dim:
                raise IncompatibleError("transcoder state head width", ">0", 0)
            _check_attention(tc.state_dim, p["mt_bridge"], p["mt_decoder"])

    # ------------------------------------------------------------ forward passes

    def encode(self, batch):
        enc = self.parts["encoder"]
        if enc.input_kind == "frames":
            if batch.frames is None:
                raise TaskMismatchError(f"{self.task.value} model needs frames in the batch")
            return enc(Tensor(batch.frames), batch.frame_lens), batch.frame_lens
        return enc(batch.src, batch.src_lens), batch.src_lens

    def loss_terms(self, batch, targets=None, pinned_states=None):
        """Named loss terms plus ``loss`` (their weighted total)."""
        if self.composed:
            return self._composed_terms(batch, pinned_states)
        memory, mem_lens = self.encode(batch)
        keys = self.parts["bridge"](memory)
        dec = self.parts["decoder"]
        if self.task == TaskKind.TRANSCODER:
            if targets is None:
                raise TaskMismatchError("transcoder loss needs target state sequences")
            return self._transcoder_terms(dec, memory, keys, mem_lens, batch, targets)
        gold, lens = (batch.src, batch.src_lens) if self.task == TaskKind.ASR else (batch.tgt, batch.tgt_lens)
        h_tilde = dec.run(_shift(gold), memory, keys, mem_lens)
        ce = _token_ce(dec, h_tilde, gold, lens)
        return {"ce": ce, "loss": ce}

    def _transcoder_terms(self, dec, memory, keys, mem_lens, batch, targets):
        states, h_tilde = _transcoder_pass(dec, memory, keys, mem_lens, batch.src)
        B, T, S = states.shape
        targets = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
        if targets.shape != (B, T, S):
            raise ShapeError(f"transcoder targets {targets.shape} != {(B, T, S)}")
        err = ad.mse(ad.reshape(states, (B * T, S)), Tensor(targets.reshape(B * T, S)),
                     batch.src_mask.reshape(-1))
        terms = {"mse": err, "loss": err}
        if self.aux_weight:
            # token head is a read-out for greedy inference; its loss must not shape the states
            src_ce = _token_ce(dec, h_tilde.detach(), batch.src, batch.src_lens)
            terms["src_ce"] = src_ce
            terms["loss"] = ad.add(err, ad.scale(src_ce, self.aux_weight))
        return terms

    def transcode(self, batch):
        """Teacher-forced transcoder pass: (state sequence [B x Ts x S], token-step h_tilde [B x Ts x H])."""
        memory, mem_lens = self.encode(batch)
        keys = self.parts["bridge"](memory)
        return _transcoder_pass(self.parts["transcoder"], memory, keys, mem_lens, batch.src)

    def _composed_terms(self, batch, pinned_states=None):
        terms = {}
        if pinned_states is None:
            states, h_tilde = self.transcode(batch)
            if self.aux_weight:
                terms["src_ce"] = _token_ce(self.parts["transcoder"], h_tilde.detach(), batch.src, batch.src_lens)
        else:
            states = ad._as_tensor(pinned_states)
        ce = self.translate_states(states, batch.src_lens, batch.tgt, batch.tgt_lens)
        terms["ce"] = ce
        terms["loss"] = ce if "src_ce" not in terms else ad.add(ce, ad.scale(terms["src_ce"], self.aux_weight))
        return terms

    def translate_states(self, states, state_lens, tgt, tgt_lens):
        """MT-side cross-entropy given a (transcoded) state sequence."""
        keys = self.parts["mt_bridge"](states)
        dec = self.parts["mt_decoder"]
        h_tilde = dec.run(_shift(tgt), states, keys, state_lens)
        return _token_ce(dec, h_tilde, tgt, tgt_lens)


def _check_attention(memory_width, bridge, dec):
    if bridge.in_width != memory_width:
        raise IncompatibleError(f"bridge {bridge.name!r} input width", memory_width, bridge.in_width)
    if dec.memory_width != memory_width:
        raise IncompatibleError(f"decoder {dec.name!r} context width", memory_width, dec.memory_width)
    if bridge.out_width != dec.hidden:
        raise IncompatibleError(f"bridge {bridge.name!r} output width", dec.hidden, bridge.out_width)


def _transcoder_pass(dec, memory, keys, mem_lens, src):
    """Teacher-forced over [BOS] + src[:-1]; the step that predicts token t also emits its state.
    Returns (states [B x T x S], h_tilde [B x T x H])."""
    B, T = src.shape
    h = dec.run(_shift(src), memory, keys, mem_lens)
    return ad.reshape(dec.states(ad.reshape(h, (B * T, dec.hidden))), (B, T, dec.state_dim)), h


def _shift(ids):
    ids = np.asarray(ids)
    return np.concatenate([np.full((ids.shape[0], 1), BOS, dtype=ids.dtype), ids[:, :-1]], axis=1)


def _token_ce(dec, h_tilde, gold, lens):
    B, T, H = h_tilde.shape
    logits = dec.logits(ad.reshape(h_tilde, (B * T, H)))
    mask = length_mask(lens, T).reshape(-1)
    return ad.cross_entropy(logits, np.asarray(gold).reshape(-1), mask)


def forward_teacher_forced(m, batch, targets=None):
    """Scalar training loss: masked token CE, or masked MSE for a transcoder."""
    return m.loss_terms(batch, targets=targets)["loss"]


# ---------------------------------------------------------------- construction

def _out_vocab(cfg):
    return cfg.src_vocab if cfg.task in (TaskKind.ASR, TaskKind.TRANSCODER) else cfg.tgt_vocab


def build_encoder(cfg, speech, name):
    if speech:
        return Encoder(name, "frames", cfg.frame_dim, cfg.embed, cfg.hidden, cfg.depth, seed=cfg.seed)
    return Encoder(name, "tokens", cfg.src_vocab, cfg.embed, cfg.hidden, cfg.depth, seed=cfg.seed)


def build_model(cfg):
    """Freshly initialized assembly; deterministic given ``cfg.seed``."""
    if min(cfg.src_vocab, cfg.tgt_vocab) <= 4:
        raise ShapeError("vocabularies must be larger than the 4 reserved ids")
    if min(cfg.frame_dim, cfg.embed, cfg.hidden, cfg.depth) < 1:
        raise ShapeError("model dims must be positive")
    pre = cfg.prefix or cfg.task.value.lower()
    enc = build_encoder(cfg, cfg.task in SPEECH_INPUT, f"{pre}/encoder")
    bridge = Bridge(f"{pre}/bridge", enc.out_width, cfg.hidden, seed=cfg.seed)
    state_dim = cfg.state_dim if cfg.task == TaskKind.TRANSCODER else 0
    if cfg.task == TaskKind.TRANSCODER and not state_dim:
        raise ShapeError("a transcoder needs state_dim > 0")
    dec = Decoder(f"{pre}/decoder", _out_vocab(cfg), cfg.embed, cfg.hidden, cfg.depth,
                  enc.out_width, state_dim, seed=cfg.seed)
    return ModelAssembly(cfg.task, {"encoder": enc, "bridge": bridge, "decoder": dec}, cfg.aux_weight)


def fresh_component(kind, name, seed, **meta):
    if kind == "encoder":
        return Encoder(name, meta["input_kind"], meta["input_size"], meta["embed"], meta["hidden"],
                       meta["depth"], seed=seed)
    if kind == "bridge":
        return Bridge(name, meta["in_width"], meta["out_width"], seed=seed)
    if kind == "decoder":
        return Decoder(name, meta["vocab"], meta["embed"], meta["hidden"], meta["depth"],
                       meta["memory_width"], meta.get("state_dim", 0), seed=seed)
    raise ValueError(f"unknown component kind {kind!r}")


_SLOT_KIND = {"encoder": "encoder", "bridge": "bridge", "decoder": "decoder", "transcoder": "decoder",
              "mt_bridge": "bridge", "mt_decoder": "decoder"}


def swap_component(m, part, source="fresh", task=None, seed=0, name=None, **overrides):
    """New assembly with ``part`` replaced; every other part is copied bit-for-bit.

    ``source`` is a component (or an assembly to take the same slot from), or
    ``"fresh"`` to initialize from the current part's dims updated by ``overrides``.
    """
    part = {"attention": "bridge", "attention-bridge": "bridge"}.get(part, part)
    if part not in m.parts:
        raise KeyError(f"assembly has no part {part!r}; parts are {list(m.parts)}")
    if isinstance(source, ModelAssembly):
        source = source.parts[part]
    if isinstance(source, str):
        if source != "fresh":
            raise ValueError(f"unknown component source {source!r}")
        meta = dict(m.parts[part].meta())
        meta.update(overrides)
        new = fresh_component(_SLOT_KIND[part], name or f"fresh/{part}", seed, **meta)
    else:
        new = source.copy()
    parts = OrderedDict((k, new if k == part else v.copy()) for k, v in m.parts.items())
    return ModelAssembly(task or m.task, parts, m.aux_weight, dict(m.meta))


def make_transcoder(asr, state_dim, seed=0, aux_weight=1.0):
    """ASR encoder/attention/decoder stack with an extra [H -> state_dim] state head."""
    if asr.task != TaskKind.ASR:
        raise TaskMismatchError(f"transcoder must start from an ASR model, got {asr.task.value}")
    dec = asr.parts["decoder"].copy()
    dec.add_state_head(state_dim, seed)
    parts = OrderedDict([("encoder", asr.parts["encoder"].copy()), ("bridge", asr.parts["bridge"].copy()),
                         ("decoder", dec)])
    return ModelAssembly(TaskKind.TRANSCODER, parts, aux_weight, dict(asr.meta))


def compose_slow_track(asr_enc_att, transcoder, mt_att_dec, aux_weight=None):
    """[speech encoder + attention] + [transcoder] + [MT attention + decoder] as one ST model."""
    if transcoder.task != TaskKind.TRANSCODER:
        raise TaskMismatchError(f"expected a TRANSCODER assembly, got {transcoder.task.value}")
    if mt_att_dec.task != TaskKind.MT:
        raise TaskMismatchError(f"expected an MT assembly, got {mt_att_dec.task.value}")
    parts = OrderedDict([
        ("encoder", asr_enc_att.parts["encoder"].copy()),
        ("bridge", asr_enc_att.parts["bridge"].copy()),
        ("transcoder", transcoder.parts["decoder"].copy()),
        ("mt_bridge", mt_att_dec.parts["bridge"].copy()),
        ("mt_decoder", mt_att_dec.parts["decoder"].copy()),
    ])
    meta = dict(asr_enc_att.meta)
    if "tgt_vocab" in mt_att_dec.meta:
        meta["tgt_vocab"] = mt_att_dec.meta["tgt_vocab"]
    aux = transcoder.aux_weight if aux_weight is None else aux_weight
    return ModelAssembly(TaskKind.ST, parts, aux, meta)


# ---------------------------------------------------------------- decoding

def _log_softmax(z):
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def _source_input(m, inputs):
    enc = m.parts["encoder"]
    if enc.input_kind == "frames":
        frames = np.asarray(inputs, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ShapeError(f"expected a non-empty [N x {enc.input_size}] frame matrix, got {frames.shape}")
        return Tensor(frames[None]), np.array([frames.shape[0]])
    ids = [int(t) for t in inputs]
    if not ids:
        ids = [BOS]
    elif ids[-1] != EOS:
        ids.append(EOS)
    return np.array([ids]), np.array([len(ids)])


def _greedy(dec, memory, keys, mem_lens, max_len, collect_states=False):
    state = dec.initial_state(memory, mem_lens)
    prev = BOS
    tokens, attn, states = [], [], []
    logp = 0.0
    finished = False
    for _ in range(max_len + 1):
        emb = ad.gather_rows(dec.embedding, [prev])
        h_tilde, state, w = decoder_step(dec, emb, state, memory, keys)
        lsm = _log_softmax(dec.logits(h_tilde).data[0])
        k = int(np.argmax(lsm))
        if len(tokens) == max_len and k != EOS:
            break
        if collect_states:
            states.append(dec.states(h_tilde).data[0])
        logp += float(lsm[k])
        attn.append(w.data[0])
        if k == EOS:
            finished = True
            break
        tokens.append(k)
        prev = k
    att = np.array(attn) if attn else np.zeros((0, memory.shape[1]))
    return Hypothesis(tokens, att, logp, finished, np.array(states) if collect_states else None)


def greedy_decode(m, inputs, max_len=50):
    """Argmax decoding of one input (frame matrix or source ids) to a :class:`Hypothesis`."""
    if m.task == TaskKind.TRANSCODER:
        raise TaskMismatchError("greedy_decode needs a token-output model, not a transcoder")
    with ad.no_grad():
        x, lens = _source_input(m, inputs)
        memory = m.parts["encoder"](x, lens)
        keys = m.parts["bridge"](memory)
        if not m.composed:
            return _greedy(m.parts["decoder"], memory, keys, lens, max_len)
        src_hyp = _greedy(m.parts["transcoder"], memory, keys, lens, max_len, collect_states=True)
        states = src_hyp.states
        st = Tensor(states[None])
        st_lens = np.array([states.shape[0]])
        hyp = _greedy(m.parts["mt_decoder"], st, m.parts["mt_bridge"](st), st_lens, max_len)
        hyp.states = states
        return hyp


def cascade_translate(asr, mt, frames, max_len=50):
    """ASR greedy transcript fed to MT greedy decoding."""
    if asr.task != TaskKind.ASR or mt.task != TaskKind.MT:
        raise TaskMismatchError(f"cascade needs ASR + MT, got {asr.task.value} + {mt.task.value}")
    v_asr = asr.parts["decoder"].vocab
    v_mt = mt.parts["encoder"].input_size
    if v_asr != v_mt:
        raise IncompatibleError("cascade vocabulary size", v_mt, v_asr)
    fa, fm = asr.meta.get("src_vocab"), mt.meta.get("src_vocab")
    if fa and fm and fa != fm:
        raise IncompatibleError("cascade source vocabulary fingerprint", fm, fa)
    transcript = greedy_decode(asr, frames, max_len)
    return greedy_decode(mt, transcript.tokens, max_len)
