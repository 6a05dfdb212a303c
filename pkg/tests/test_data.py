import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curriswap.data import (EOS, PAD, UNK, SynthSpec, Vocabulary, build_vocab, fit_normalizer,
                            gen_parallel_corpus, generate_corpus, inverse_translate, make_batches, prototype,
                            read_corpus, read_splits, synth_frames, translate_synthetic, write_corpus,
                            write_splits)
from curriswap.errors import CorpusFormatError, ShapeError

SPEC = SynthSpec(seed=5)


class TestGeneration:
    def test_deterministic(self):
        assert gen_parallel_corpus(SPEC, 50) == gen_parallel_corpus(SPEC, 50)

    def test_one_verb_and_id_range(self):
        for src, _ in gen_parallel_corpus(SPEC, 200):
            assert sum(SPEC.role_of(t) == "verb" for t in src) == 1
            assert all(4 <= t < SPEC.src_vocab for t in src)
            assert SPEC.min_len <= len(src) <= SPEC.max_len

    def test_invalid(self):
        with pytest.raises(ValueError):
            gen_parallel_corpus(SPEC, 0)
        with pytest.raises(ValueError):
            SynthSpec(src_vocab=5, tgt_vocab=5).validate()
        with pytest.raises(ValueError):
            SynthSpec(min_len=6, max_len=4).validate()


class TestTranslate:
    def test_verb_moves_to_end(self):
        roles = SPEC.role_ranges()
        s1, v, o1, o2 = roles["subject"][0], roles["verb"][0], roles["object"][0], roles["object"][0] + 1
        d = SPEC.dictionary()
        assert translate_synthetic([s1, v, o1, o2], SPEC) == [d[s1], d[o1], d[o2], d[v]]

    def test_dictionary_is_not_identity(self):
        d = SPEC.dictionary()
        assert sorted(d.values()) == sorted(d)
        assert any(k != v for k, v in d.items())

    def test_malformed(self):
        roles = SPEC.role_ranges()
        with pytest.raises(ValueError):
            translate_synthetic([roles["object"][0], roles["verb"][0], roles["object"][0]], SPEC)

    def test_round_trip_1000(self):
        for src, tgt in gen_parallel_corpus(SynthSpec(seed=9), 1000):
            assert len(tgt) == len(src)
            assert inverse_translate(tgt, SynthSpec(seed=9)) == src

    @pytest.mark.parametrize("m", range(1, 7))
    def test_verb_displacement_equals_object_count(self, m):
        roles = SPEC.role_ranges()
        src = [roles["subject"][0], roles["verb"][0]] + [roles["object"][0]] * m
        tgt = translate_synthetic(src, SPEC)
        assert tgt.index(SPEC.dictionary()[roles["verb"][0]]) - src.index(roles["verb"][0]) == m


class TestFrames:
    def test_noiseless_frames_equal_prototypes(self):
        spec = SynthSpec(noise_std=0.0, seed=2)
        frames = synth_frames([5, 9], spec, np.random.default_rng(0))
        assert all(np.array_equal(row, prototype(5, spec)) or np.array_equal(row, prototype(9, spec))
                   for row in frames)

    @staticmethod
    def spans(tokens, spec, seed):
        # replay the generator: one span draw and one noise block per token
        r = np.random.default_rng(seed)
        out = []
        for _ in tokens:
            k = int(r.integers(spec.min_frames, spec.max_frames + 1))
            r.standard_normal((k, spec.frame_dim))
            out.append(k)
        return out

    def test_frame_count_is_sum_of_spans(self):
        tokens = [5, 6, 7, 6]
        frames = synth_frames(tokens, SPEC, np.random.default_rng(4))
        assert frames.shape == (sum(self.spans(tokens, SPEC, 4)), 23)

    def test_prototypes_pairwise_distinct(self):
        protos = np.array([prototype(t, SPEC) for t in range(4, 54)])
        d = np.linalg.norm(protos[:, None] - protos[None], axis=-1)
        assert (d[~np.eye(50, dtype=bool)] > 1e-6).all()

    def test_nearest_prototype_recovers_tokens(self):
        spec = SynthSpec(noise_std=0.0, seed=8)
        protos = np.array([prototype(t, spec) for t in range(4, 54)])
        for i, (src, _) in enumerate(gen_parallel_corpus(spec, 30)):
            frames = synth_frames(src, spec, np.random.default_rng(i))
            nearest = 4 + np.argmin(np.linalg.norm(frames[:, None] - protos[None], axis=-1), axis=1)
            np.testing.assert_array_equal(nearest, np.repeat(src, self.spans(src, spec, i)))


class TestNormalizer:
    def test_zero_mean_unit_variance(self):
        frames = [np.random.default_rng(i).normal(3.0, 2.0, (7, 23)) for i in range(10)]
        norm = fit_normalizer(frames)
        out = np.concatenate([norm.apply(f) for f in frames])
        assert np.abs(out.mean(axis=0)).max() < 1e-9
        assert np.abs(out.var(axis=0) - 1).max() < 1e-6

    def test_constant_dimension(self):
        frames = [np.ones((4, 3))]
        out = fit_normalizer(frames).apply(frames[0])
        np.testing.assert_array_equal(out, 0.0)

    def test_too_small(self):
        with pytest.raises(ValueError):
            fit_normalizer([])
        with pytest.raises(ValueError):
            fit_normalizer([np.ones((1, 3))])

    def test_order_invariance(self):
        frames = [np.random.default_rng(i).standard_normal((i + 2, 5)) for i in range(8)]
        a, b = fit_normalizer(frames), fit_normalizer(frames[::-1])
        assert np.abs(a.mean - b.mean).max() < 1e-12
        assert np.abs(a.std - b.std).max() < 1e-12


class TestVocabulary:
    def test_round_trip_and_unk(self):
        v = build_vocab([["b", "a", "c"], ["a"]])
        assert v.decode(v.encode(["a", "b", "c"])) == ["a", "b", "c"]
        assert v.encode(["zzz"]) == [UNK]

    def test_tie_break(self):
        assert build_vocab([["d", "c", "b", "a", "a"]]).tokens == ["a", "b", "c", "d"]
        assert build_vocab([["y", "x"]]).tokens == build_vocab([["x", "y"]]).tokens

    def test_reserved(self):
        with pytest.raises(ValueError):
            Vocabulary(["<s>"])


@pytest.fixture(scope="module")
def splits():
    return generate_corpus(SynthSpec(seed=6), train=40, dev=5, test=5)


class TestBatches:
    def test_conservation_and_padding(self, splits):
        train = splits["train"]
        batches = make_batches(train, 7, seed=1)
        assert sum(int(b.tgt_mask.sum()) for b in batches) == train.token_count("tgt")
        assert sum(int(b.src_mask.sum()) for b in batches) == train.token_count("src")
        for b in batches:
            assert b.src.shape[1] == b.src_lens.max()
            assert (b.src[~b.src_mask] == PAD).all()
            assert (b.frames[~b.frame_mask] == 0).all()

    def test_same_seed_same_order(self, splits):
        a = [b.index.tolist() for b in make_batches(splits["train"], 7, 3)]
        assert a == [b.index.tolist() for b in make_batches(splits["train"], 7, 3)]
        assert a != [b.index.tolist() for b in make_batches(splits["train"], 7, 4)]

    def test_bad_size(self, splits):
        with pytest.raises(ValueError):
            make_batches(splits["train"], 0, 0)


class TestIO:
    def test_round_trip(self, splits, tmp_path):
        write_splits(splits, tmp_path)
        back = read_splits(tmp_path)
        for name in splits:
            a, b = splits[name], back[name]
            assert a.src_vocab == b.src_vocab and a.tgt_vocab == b.tgt_vocab
            for x, y in zip(a.examples, b.examples):
                np.testing.assert_array_equal(x.src, y.src)
                np.testing.assert_array_equal(x.tgt, y.tgt)
                assert x.frames.tobytes() == y.frames.tobytes()
            np.testing.assert_array_equal(a.normalizer.mean, b.normalizer.mean)

    def test_wrong_frame_width(self, splits, tmp_path):
        write_corpus(splits["dev"], tmp_path)
        with open(os.path.join(tmp_path, "frames", "000002.f64"), "ab") as fh:
            fh.write(b"\0" * 8)
        with pytest.raises(ShapeError, match="record 2"):
            read_corpus(tmp_path)

    def test_missing_target(self, splits, tmp_path):
        write_corpus(splits["dev"], tmp_path)
        os.remove(os.path.join(tmp_path, "target.txt"))
        with pytest.raises(OSError):
            read_corpus(tmp_path)

    def test_reserved_symbol_in_text(self, splits, tmp_path):
        write_corpus(splits["dev"], tmp_path)
        with open(os.path.join(tmp_path, "source.txt"), "a") as fh:
            fh.write("</s>\n")
        with pytest.raises(CorpusFormatError, match="source.txt:6"):
            read_corpus(tmp_path)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_generated_sentences_end_with_eos(seed):
    spec = SynthSpec(src_vocab=12, tgt_vocab=12, seed=seed)
    c = generate_corpus(spec, train=3, dev=0, test=0)["train"]
    for ex in c.examples:
        assert ex.src[-1] == EOS and ex.tgt[-1] == EOS
        assert ex.frames.shape[0] >= len(ex.src) - 1
