"""How hypotheses are scored.

Recognition output is scored with word error rate: the minimum number of
substitutions, deletions and insertions, divided by the reference length.
Translation output is scored with sentence BLEU+1, whose n-gram precisions
for n >= 2 get one added to numerator and denominator, so a short sentence
with no matching 4-gram still gets a useful score.

    python3 demos/02_scoring.py
"""
from curriswap.metrics import bleu_plus1, evaluate, wer

ref = "the cat sat on the mat".split()
for hyp in ("the cat sat on the mat", "the cat sat on mat", "a cat sat on the red mat", "mat the on sat cat the"):
    h = hyp.split()
    w = wer(ref, h)
    print(f"{hyp:<28} WER {w.rate:.3f} (S={w.substitutions} D={w.deletions} I={w.insertions})"
          f"   BLEU+1 {bleu_plus1(ref, h):.4f}")

refs = [r.split() for r in ("a b c d", "x y z")]
hyps = [h.split() for h in ("a b c", "x y z")]
for mode in ("mean", "pooled"):
    print(f"corpus BLEU+1, {mode} mode: {evaluate('bleu1', refs, hyps, bleu_mode=mode).aggregate:.4f}")
print(f"corpus WER (pooled edits / pooled length): {evaluate('wer', refs, hyps).aggregate:.4f}")
