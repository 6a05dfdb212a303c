"""The slow track on a small synthetic task, end to end through the library.

The corpus pairs SVO source sentences with SOV target sentences, so the verb
must travel to the end of the translation; each source token is also rendered
as 2-5 noisy feature frames. The slow track never trains speech-to-target
directly from scratch:

1. an ASR model learns frames -> source tokens;
2. its decoder is retrained as a transcoder, regressing onto the hidden states
   a trained (and frozen) MT encoder produces for the source sentence;
3. the ASR encoder, transcoder, MT attention and MT decoder are chained into
   one speech translation model and trained as a whole.

A direct speech translation model with the same epoch budget is the baseline.
Sizes here are small so the script finishes in about a minute on one core.

    python3 demos/03_slow_track.py [workdir]
"""
import os
import sys
import tempfile

from curriswap.curriculum import CurriculumPlan, load_plan, run_plan
from curriswap.data import SynthSpec, generate_corpus
from curriswap.training import evaluate_model

work = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="slow_track_")
splits = generate_corpus(SynthSpec(src_vocab=24, tgt_vocab=24, max_len=6, seed=7), train=600, dev=60, test=60)
ex = splits["train"].examples[0]
print("source ", splits["train"].src_vocab.decode(ex.src))
print("target ", splits["train"].tgt_vocab.decode(ex.tgt))
print("frames ", splits["train"].frames(0).shape)

small = {"model": {"embed": 16, "hidden": 32, "depth": 1},
         "train": {"lr": 0.003, "descend_rate": 1.8, "lr_mode": "plateau", "clip": 5.0, "batch_size": 16,
                   "dropout": 0.0}}


def shrink(name, epochs):
    d = load_plan(name).to_dict()
    d.update(small)
    for phase in d["phases"]:
        phase["epochs"] = epochs
    return CurriculumPlan.from_dict(d)


def report(phase, rec):
    print(f"  {phase:<10} epoch {rec.epoch:>2}  dev loss {rec.dev_loss:.4f}")


print("\nMT (frozen afterwards; its encoder states are the transcoder's targets)")
mt = run_plan(shrink("mt", 20), splits, os.path.join(work, "mt"), progress=report)
print("\nslow track: ASR, transcoder, composed ST")
slow = run_plan(shrink("cl1_slow", 10), splits, os.path.join(work, "cl1_slow"), progress=report)
print("\ndirect ST with the same 30-epoch budget")
direct = run_plan(shrink("direct_st", 30), splits, os.path.join(work, "direct_st"))

test = splits["test"]
print(f"\ntest BLEU+1   MT {evaluate_model(mt.models['mt'], test).aggregate:.3f}"
      f"   slow-track ST {evaluate_model(slow.models['st'], test).aggregate:.3f}"
      f"   direct ST {evaluate_model(direct.models['st'], test).aggregate:.3f}")
print(f"checkpoints and loss curves are in {work}")
