"""Synthetic SVO->SOV parallel corpora with speech-like frames, plus corpus I/O.

Source sentences follow the role template ``S+ V O+``. The target side is a
word-by-word dictionary image of the source with the verb moved to the end,
so a sentence with ``m`` objects needs the verb moved ``m`` positions.
Each source token is "spoken" as a few noisy copies of a per-token
prototype frame.
"""
from collections import Counter
from dataclasses import asdict, dataclass, field
import hashlib
import json
import os

import numpy as np

from .errors import CorpusFormatError, ShapeError
from .layers import part_rng

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
N_RESERVED = len(RESERVED)
FRAME_DIM = 23
STD_FLOOR = 1e-6


class Vocabulary:
    """Token <-> id bijection with reserved ids PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        clash = set(tokens) & set(RESERVED)
        if clash:
            raise ValueError(f"reserved symbols cannot be vocabulary entries: {sorted(clash)}")
        self.itos = list(RESERVED) + tokens
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def tokens(self):
        return self.itos[N_RESERVED:]

    def encode(self, tokens, add_eos=False):
        ids = [self.stoi.get(t, UNK) for t in tokens]
        if add_eos:
            ids.append(EOS)
        return ids

    def decode(self, ids, strip=True):
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    @property
    def fingerprint(self):
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]


def build_vocab(sequences):
    """Frequency-descending vocabulary; ties broken lexicographically."""
    counts = Counter(t for seq in sequences for t in seq)
    if not counts:
        raise ValueError("build_vocab needs at least one token")
    for r in RESERVED:
        counts.pop(r, None)
    return Vocabulary(sorted(counts, key=lambda t: (-counts[t], t)))


@dataclass(frozen=True)
class SynthSpec:
    src_vocab: int = 54
    tgt_vocab: int = 54
    min_len: int = 3
    max_len: int = 8
    min_frames: int = 2
    max_frames: int = 5
    noise_std: float = 0.3
    frame_dim: int = FRAME_DIM
    reorder_rule: str = "svo_to_sov"
    seed: int = 0

    def validate(self):
        if self.src_vocab <= N_RESERVED + 2 or self.tgt_vocab <= N_RESERVED + 2:
            raise ValueError("vocab sizes must leave room for subject, verb and object classes")
        if self.src_vocab != self.tgt_vocab:
            raise ValueError("the synthetic dictionary is a bijection: src_vocab must equal tgt_vocab")
        if not 3 <= self.min_len <= self.max_len:
            raise ValueError(f"sentence length range [{self.min_len}, {self.max_len}] invalid (min 3)")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ValueError(f"frames-per-token range [{self.min_frames}, {self.max_frames}] invalid")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.frame_dim < 1:
            raise ValueError("frame_dim must be positive")
        if self.reorder_rule != "svo_to_sov":
            raise ValueError(f"unknown reorder rule {self.reorder_rule!r}")
        return self

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text)).validate()

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    # role classes over content ids [N_RESERVED, src_vocab)
    @property
    def n_content(self):
        return self.src_vocab - N_RESERVED

    def role_ranges(self):
        n = self.n_content
        verbs = max(1, n // 5)
        subjects = (n - verbs) // 2
        s0 = N_RESERVED
        return {"subject": (s0, s0 + subjects),
                "verb": (s0 + subjects, s0 + subjects + verbs),
                "object": (s0 + subjects + verbs, self.src_vocab)}

    def role_of(self, tok):
        for role, (lo, hi) in self.role_ranges().items():
            if lo <= tok < hi:
                return role
        raise ValueError(f"token id {tok} is not a content token")

    def dictionary(self):
        """Seeded random bijection from source content ids to target content ids."""
        perm = part_rng(self.seed, "dictionary").permutation(self.n_content)
        return {N_RESERVED + i: N_RESERVED + int(p) for i, p in enumerate(perm)}


def gen_parallel_corpus(spec, count):
    """``count`` (source, target) content-token pairs, deterministic per seed."""
    spec.validate()
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = part_rng(spec.seed, "sentences")
    roles = spec.role_ranges()
    out = []
    for _ in range(count):
        L = int(rng.integers(spec.min_len, spec.max_len + 1))
        n_subj = int(rng.integers(1, L - 1))
        n_obj = L - 1 - n_subj
        src = ([int(t) for t in rng.integers(*roles["subject"], size=n_subj)]
               + [int(rng.integers(*roles["verb"]))]
               + [int(t) for t in rng.integers(*roles["object"], size=n_obj)])
        out.append((src, translate_synthetic(src, spec)))
    return out


def _split_roles(tokens, spec):
    roles = [spec.role_of(t) for t in tokens]
    if roles.count("verb") != 1:
        raise ValueError(f"sentence must contain exactly one verb, got {roles.count('verb')}")
    v = roles.index("verb")
    if v == 0 or v == len(tokens) - 1 or any(r != "subject" for r in roles[:v]) \
            or any(r != "object" for r in roles[v + 1:]):
        raise ValueError(f"sentence does not follow the S+ V O+ template: {roles}")
    return v


def translate_synthetic(source, spec):
    """Dictionary-map each token and move the verb to the end (SVO -> SOV)."""
    source = [int(t) for t in source]
    v = _split_roles(source, spec)
    d = spec.dictionary()
    reordered = source[:v] + source[v + 1:] + [source[v]]
    return [d[t] for t in reordered]


def inverse_translate(target, spec):
    inv = {b: a for a, b in spec.dictionary().items()}
    try:
        src = [inv[int(t)] for t in target]
    except KeyError as e:
        raise ValueError(f"target token {e.args[0]} has no dictionary preimage") from None
    verb = src[-1]
    rest = src[:-1]
    n_subj = sum(1 for t in rest if spec.role_of(t) == "subject")
    out = rest[:n_subj] + [verb] + rest[n_subj:]
    _split_roles(out, spec)
    return out


def prototype(token, spec):
    return part_rng(spec.seed, f"prototype/{int(token)}").standard_normal(spec.frame_dim)


def synth_frames(tokens, spec, rng=None):
    """Frames [N x frame_dim]: k noisy prototype copies per token, k in the spec range."""
    tokens = [int(t) for t in tokens]
    if not tokens:
        raise ValueError("synth_frames needs at least one token")
    if rng is None:
        rng = part_rng(spec.seed, "frames/" + ",".join(map(str, tokens)))
    rows = []
    for t in tokens:
        k = int(rng.integers(spec.min_frames, spec.max_frames + 1))
        proto = prototype(t, spec)
        noise = rng.standard_normal((k, spec.frame_dim)) * spec.noise_std
        rows.append(proto[None, :] + noise)
    return np.concatenate(rows, axis=0)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    fingerprint: str = ""

    def apply(self, frames):
        return (np.asarray(frames, dtype=np.float64) - self.mean) / self.std

    def to_json(self):
        return json.dumps({"dim": int(self.mean.shape[0]), "mean": self.mean.tolist(),
                           "std": self.std.tolist(), "fingerprint": self.fingerprint},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64),
                   d.get("fingerprint", ""))


def frames_fingerprint(frame_list):
    h = hashlib.sha256()
    for f in frame_list:
        h.update(np.ascontiguousarray(f, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def fit_normalizer(frame_list):
    """Per-dimension mean/std over every frame of every utterance."""
    frame_list = [np.asarray(f, dtype=np.float64) for f in frame_list]
    if not frame_list:
        raise ValueError("fit_normalizer: empty corpus")
    allf = np.concatenate(frame_list, axis=0)
    if allf.shape[0] < 2:
        raise ValueError("fit_normalizer needs at least 2 frames")
    mean = allf.mean(axis=0)
    std = np.maximum(allf.std(axis=0), STD_FLOOR)
    return Normalizer(mean, std, frames_fingerprint(frame_list))


@dataclass
class ParallelExample:
    frames: np.ndarray  # raw [N x F]; may be None for text-only corpora
    src: np.ndarray     # ids ending with EOS
    tgt: np.ndarray     # ids ending with EOS

    def __post_init__(self):
        for name in ("src", "tgt"):
            seq = getattr(self, name)
            if len(seq) < 1 or seq[-1] != EOS:
                raise ValueError(f"{name} must end with EOS")
            if (seq[:-1] == PAD).any() or (seq[:-1] == EOS).any():
                raise ValueError(f"{name} contains PAD/EOS before the end")
        if self.frames is not None and self.frames.shape[0] < len(self.src) - 1:
            raise ValueError("fewer frames than source tokens")


@dataclass
class Corpus:
    examples: list
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    normalizer: Normalizer = None
    spec: SynthSpec = None
    name: str = ""
    _norm_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self):
        return len(self.examples)

    @property
    def frame_dim(self):
        for ex in self.examples:
            if ex.frames is not None:
                return ex.frames.shape[1]
        return None

    def frames(self, i):
        """Normalized frames of example ``i``."""
        f = self.examples[i].frames
        if f is None:
            raise ValueError(f"corpus {self.name!r} has no frames")
        if self.normalizer is None:
            return f
        if i not in self._norm_cache:
            self._norm_cache[i] = self.normalizer.apply(f)
        return self._norm_cache[i]

    def subset(self, idx, name=None):
        return Corpus([self.examples[i] for i in idx], self.src_vocab, self.tgt_vocab,
                      self.normalizer, self.spec, name or self.name)

    def token_count(self, side="tgt"):
        return sum(len(getattr(ex, side)) for ex in self.examples)


def synthetic_vocabs(spec):
    roles = spec.role_ranges()
    src = []
    for role, (lo, hi) in roles.items():
        src += [f"{role[:4]}{i - lo:02d}" for i in range(lo, hi)]
    tgt = [f"w{i:02d}" for i in range(spec.tgt_vocab - N_RESERVED)]
    return Vocabulary(src), Vocabulary(tgt)


def generate_corpus(spec, train=1000, dev=100, test=100):
    """Synthetic train/dev/test splits sharing vocabularies and a train-fitted normalizer."""
    spec.validate()
    sizes = {"train": train, "dev": dev, "test": test}
    if train < 1 or min(sizes.values()) < 0:
        raise ValueError(f"invalid split sizes {sizes}")
    pairs = gen_parallel_corpus(spec, sum(sizes.values()))
    frng = part_rng(spec.seed, "frames")
    examples = []
    for src, tgt in pairs:
        frames = synth_frames(src, spec, frng)
        examples.append(ParallelExample(frames, np.array(src + [EOS]), np.array(tgt + [EOS])))
    src_vocab, tgt_vocab = synthetic_vocabs(spec)
    norm = fit_normalizer([ex.frames for ex in examples[:train]])
    out = {}
    start = 0
    for name, n in sizes.items():
        out[name] = Corpus(examples[start:start + n], src_vocab, tgt_vocab, norm, spec, name)
        start += n
    return out


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    src: np.ndarray
    src_lens: np.ndarray
    tgt: np.ndarray
    tgt_lens: np.ndarray
    frames: np.ndarray = None
    frame_lens: np.ndarray = None
    index: np.ndarray = None

    @property
    def size(self):
        return self.src.shape[0]

    @property
    def src_mask(self):
        return np.arange(self.src.shape[1])[None, :] < self.src_lens[:, None]

    @property
    def tgt_mask(self):
        return np.arange(self.tgt.shape[1])[None, :] < self.tgt_lens[:, None]

    @property
    def frame_mask(self):
        return np.arange(self.frames.shape[1])[None, :] < self.frame_lens[:, None]


def _pad(seqs, fill=PAD):
    lens = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), lens.max()), fill, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lens


def collate(corpus, idx):
    idx = np.asarray(idx, dtype=np.int64)
    exs = [corpus.examples[i] for i in idx]
    src, src_lens = _pad([e.src for e in exs])
    tgt, tgt_lens = _pad([e.tgt for e in exs])
    frames = frame_lens = None
    if exs[0].frames is not None:
        fl = [corpus.frames(i) for i in idx]
        frame_lens = np.array([f.shape[0] for f in fl], dtype=np.int64)
        frames = np.zeros((len(fl), frame_lens.max(), fl[0].shape[1]))
        for i, f in enumerate(fl):
            frames[i, :f.shape[0]] = f
    return Batch(src, src_lens, tgt, tgt_lens, frames, frame_lens, idx)


def make_batches(corpus, batch_size, seed, key="frames"):
    """Length-bucketed batches in a seeded order; padded with PAD ids / zero frames."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(corpus)
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    if key == "frames" and corpus.examples[0].frames is not None:
        lengths = np.array([corpus.examples[i].frames.shape[0] for i in perm])
    else:
        lengths = np.array([len(corpus.examples[i].src) for i in perm])
    ordered = perm[np.argsort(lengths, kind="stable")]
    chunks = [ordered[i:i + batch_size] for i in range(0, n, batch_size)]
    order = rng.permutation(len(chunks))
    return [collate(corpus, chunks[j]) for j in order]


# ---------------------------------------------------------------- file I/O

def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def write_corpus(corpus, directory):
    """Write one split in the flat corpus layout (raw frames, vocab, normalizer)."""
    os.makedirs(directory, exist_ok=True)
    _write_lines(os.path.join(directory, "source.txt"),
                 [" ".join(corpus.src_vocab.decode(e.src)) for e in corpus.examples])
    _write_lines(os.path.join(directory, "target.txt"),
                 [" ".join(corpus.tgt_vocab.decode(e.tgt)) for e in corpus.examples])
    _write_lines(os.path.join(directory, "vocab.src.txt"), corpus.src_vocab.tokens)
    _write_lines(os.path.join(directory, "vocab.tgt.txt"), corpus.tgt_vocab.tokens)
    if any(e.frames is not None for e in corpus.examples):
        fdir = os.path.join(directory, "frames")
        os.makedirs(fdir, exist_ok=True)
        for i, e in enumerate(corpus.examples):
            with open(os.path.join(fdir, f"{i:06d}.f64"), "wb") as fh:
                fh.write(np.ascontiguousarray(e.frames, dtype="<f8").tobytes())
    if corpus.normalizer is not None:
        with open(os.path.join(directory, "normalizer.json"), "w") as fh:
            fh.write(corpus.normalizer.to_json() + "\n")
    if corpus.spec is not None:
        with open(os.path.join(directory, "synth_spec.json"), "w") as fh:
            fh.write(corpus.spec.to_json() + "\n")


def _read_sentences(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            toks = line.split()
            if not toks:
                raise CorpusFormatError(f"{path}:{lineno}: empty sentence")
            bad = [t for t in toks if t in RESERVED]
            if bad:
                raise CorpusFormatError(f"{path}:{lineno}: reserved symbol {bad[0]!r} in text")
            out.append(toks)
    return out


def _read_vocab(path, sentences):
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            return Vocabulary([line.rstrip("\n") for line in fh if line.strip()])
    return build_vocab(sentences)


def read_corpus(directory, frame_dim=None):
    """Read a flat corpus directory; vocab and normalizer files are optional."""
    src_txt = _read_sentences(os.path.join(directory, "source.txt"))
    tgt_txt = _read_sentences(os.path.join(directory, "target.txt"))
    if len(src_txt) != len(tgt_txt):
        raise CorpusFormatError(f"{directory}: {len(src_txt)} source lines vs {len(tgt_txt)} target lines")
    src_vocab = _read_vocab(os.path.join(directory, "vocab.src.txt"), src_txt)
    tgt_vocab = _read_vocab(os.path.join(directory, "vocab.tgt.txt"), tgt_txt)
    spec = None
    spec_path = os.path.join(directory, "synth_spec.json")
    if os.path.exists(spec_path):
        with open(spec_path) as fh:
            spec = SynthSpec.from_json(fh.read())
    normalizer = None
    norm_path = os.path.join(directory, "normalizer.json")
    if os.path.exists(norm_path):
        with open(norm_path) as fh:
            normalizer = Normalizer.from_json(fh.read())
    if frame_dim is None:
        frame_dim = (normalizer.mean.shape[0] if normalizer is not None
                     else spec.frame_dim if spec is not None else FRAME_DIM)
    fdir = os.path.join(directory, "frames")
    has_frames = os.path.isdir(fdir)
    examples = []
    for i, (s, t) in enumerate(zip(src_txt, tgt_txt)):
        frames = None
        if has_frames:
            path = os.path.join(fdir, f"{i:06d}.f64")
            with open(path, "rb") as fh:
                raw = fh.read()
            if len(raw) % (8 * frame_dim) or not raw:
                raise ShapeError(f"{path}: record {i} has {len(raw)} bytes, "
                                 f"not a whole number of {frame_dim}-wide float64 rows")
            frames = np.frombuffer(raw, dtype="<f8").reshape(-1, frame_dim).astype(np.float64)
        try:
            examples.append(ParallelExample(frames, np.array(src_vocab.encode(s, add_eos=True)),
                                            np.array(tgt_vocab.encode(t, add_eos=True))))
        except ValueError as e:
            raise CorpusFormatError(f"{directory}: record {i} (line {i + 1}): {e}") from None
    if has_frames and normalizer is None:
        normalizer = fit_normalizer([e.frames for e in examples])
    return Corpus(examples, src_vocab, tgt_vocab, normalizer, spec, os.path.basename(directory))


SPLITS = ("train", "dev", "test")


def write_splits(splits, root):
    for name, corpus in splits.items():
        write_corpus(corpus, os.path.join(root, name))


def read_splits(root):
    """Read ``root/{train,dev,test}``; the train normalizer is used for every split."""
    out = {}
    for name in SPLITS:
        d = os.path.join(root, name)
        if os.path.isdir(d):
            out[name] = read_corpus(d)
    if "train" not in out:
        raise FileNotFoundError(f"{root}: no train split")
    norm = out["train"].normalizer
    for c in out.values():
        c.normalizer = norm
    return out
