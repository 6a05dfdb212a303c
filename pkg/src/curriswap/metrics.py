"""WER and sentence-level smoothed BLEU (BLEU+1)."""
from collections import Counter
import csv
from dataclasses import asdict, dataclass, field
import io
import json
import math

# tie-break order when several edit operations reach the same cost
_OPS = ("sub", "del", "ins")


@dataclass
class WerResult:
    rate: float
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions


def wer(reference, hypothesis):
    """Word error rate (S + D + I) / len(reference) by Levenshtein DP.

    Among equal-cost alignments the backtrace prefers substitution, then
    deletion, then insertion, so the reported counts are reproducible.
    """
    ref, hyp = list(reference), list(hypothesis)
    if not ref:
        raise ValueError("wer: reference must be non-empty")
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            d[i][j] = min(d[i - 1][j - 1] + cost, d[i - 1][j] + 1, d[i][j - 1] + 1)
    counts = dict.fromkeys(_OPS, 0)
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            if d[i][j] == d[i - 1][j - 1] + cost:
                counts["sub"] += cost
                i, j = i - 1, j - 1
                continue
        if i > 0 and d[i][j] == d[i - 1][j] + 1:
            counts["del"] += 1
            i -= 1
        else:
            counts["ins"] += 1
            j -= 1
    assert sum(counts.values()) == d[n][m]
    return WerResult(d[n][m] / n, counts["sub"], counts["del"], counts["ins"], n)


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuStats:
    matches: list
    totals: list
    hyp_len: int
    ref_len: int


def bleu_stats(reference, hypothesis, max_n=4):
    ref, hyp = list(reference), list(hypothesis)
    matches, totals = [], []
    for n in range(1, max_n + 1):
        h = ngram_counts(hyp, n)
        r = ngram_counts(ref, n)
        matches.append(sum(min(c, r[g]) for g, c in h.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    return BleuStats(matches, totals, len(hyp), len(ref))


def bleu_from_stats(stats, smoothing="plus1"):
    """BLEU from clipped n-gram counts.

    ``smoothing``: ``plus1`` adds one to numerator and denominator for n >= 2,
    ``all`` does so for every order, ``none`` leaves precisions raw.
    """
    if smoothing not in ("plus1", "all", "none"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    if stats.hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n, (m, c) in enumerate(zip(stats.matches, stats.totals), start=1):
        add = 1 if smoothing == "all" or (smoothing == "plus1" and n >= 2) else 0
        num, den = m + add, c + add
        if num == 0 or den == 0:
            return 0.0
        log_p += math.log(num / den)
    bp = min(1.0, math.exp(1.0 - stats.ref_len / stats.hyp_len))
    return bp * math.exp(log_p / len(stats.matches))


def bleu_plus1(reference, hypothesis, max_n=4, smoothing="plus1"):
    return bleu_from_stats(bleu_stats(reference, hypothesis, max_n), smoothing)


def token_accuracy(reference, hypothesis):
    """Position-wise matches over the longer length."""
    ref, hyp = list(reference), list(hypothesis)
    longest = max(len(ref), len(hyp))
    if longest == 0:
        return 1.0
    return sum(1 for a, b in zip(ref, hyp) if a == b) / longest


@dataclass
class EvalReport:
    metric: str
    sentences: list = field(default_factory=list)
    aggregate: float = float("nan")
    counts: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "score", "reference", "hypothesis"])
        for s in self.sentences:
            w.writerow([s["index"], repr(s["score"]), " ".join(map(str, s["reference"])),
                        " ".join(map(str, s["hypothesis"]))])
        w.writerow(["aggregate", repr(self.aggregate), "", ""])
        return buf.getvalue()


def sentence_report(metric, index, reference, hypothesis, max_n=4, smoothing="plus1"):
    ref, hyp = list(reference), list(hypothesis)
    row = {"index": index, "reference": ref, "hypothesis": hyp}
    if metric == "wer":
        r = wer(ref, hyp)
        row.update(score=r.rate, substitutions=r.substitutions, deletions=r.deletions,
                   insertions=r.insertions, ref_len=r.ref_len)
    elif metric == "bleu1":
        st = bleu_stats(ref, hyp, max_n)
        row.update(score=bleu_from_stats(st, smoothing), matches=st.matches, totals=st.totals,
                   hyp_len=st.hyp_len, ref_len=st.ref_len)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return row


def corpus_aggregate(metric, sentences, bleu_mode="mean", smoothing="plus1"):
    """WER pools edit counts over pooled reference length; BLEU+1 averages sentence scores
    (``bleu_mode='pooled'`` computes one smoothed BLEU over pooled n-gram counts)."""
    if not sentences:
        raise ValueError("corpus_aggregate needs at least one sentence")
    if metric == "wer":
        counts = {k: sum(s[k] for s in sentences) for k in ("substitutions", "deletions", "insertions", "ref_len")}
        errs = counts["substitutions"] + counts["deletions"] + counts["insertions"]
        return EvalReport("wer", list(sentences), errs / counts["ref_len"], counts)
    if metric == "bleu1":
        max_n = len(sentences[0]["matches"])
        counts = {"matches": [sum(s["matches"][n] for s in sentences) for n in range(max_n)],
                  "totals": [sum(s["totals"][n] for s in sentences) for n in range(max_n)],
                  "hyp_len": sum(s["hyp_len"] for s in sentences),
                  "ref_len": sum(s["ref_len"] for s in sentences)}
        if bleu_mode == "mean":
            agg = sum(s["score"] for s in sentences) / len(sentences)
        elif bleu_mode == "pooled":
            agg = bleu_from_stats(BleuStats(**counts), smoothing)
        else:
            raise ValueError(f"unknown bleu mode {bleu_mode!r}")
        counts["mode"] = bleu_mode
        return EvalReport("bleu1", list(sentences), agg, counts)
    raise ValueError(f"unknown metric {metric!r}")


def evaluate(metric, references, hypotheses, **kw):
    if len(references) != len(hypotheses):
        raise ValueError("references and hypotheses differ in count")
    agg_kw = {k: kw.pop(k) for k in ("bleu_mode",) if k in kw}
    rows = [sentence_report(metric, i, r, h, **kw) for i, (r, h) in enumerate(zip(references, hypotheses))]
    return corpus_aggregate(metric, rows, smoothing=kw.get("smoothing", "plus1"), **agg_kw)
