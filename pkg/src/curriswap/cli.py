"""Command line: ``gen-data``, ``train``, ``eval`` and ``report``.

Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure, 4 training diverged.
``CURRISWAP_THREADS`` caps BLAS threads (default 1, which keeps runs bitwise reproducible).
"""
import argparse
import csv
import glob
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import load_checkpoint
from .curriculum import (MERGED_LOG, PhaseFailure, bundled_plans, load_plan, read_merged, run_plan)
from .data import SynthSpec, generate_corpus, read_splits, write_splits
from .errors import CheckpointError, CorpusFormatError, CurriswapError, NonFiniteError
from .models import TaskKind
from .training import DivergenceError, evaluate_cascade, evaluate_model

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
EVAL_SUFFIX = ".eval.json"

log = logging.getLogger("curriswap")


def _threads():
    raw = os.environ.get("CURRISWAP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"CURRISWAP_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"CURRISWAP_THREADS must be a positive integer, got {n}")
    return n


def cmd_gen_data(args):
    with open(args.spec, encoding="utf-8") as fh:
        spec = SynthSpec.from_json(fh.read())
    if args.seed is not None:
        spec = SynthSpec.from_json(json.dumps({**json.loads(spec.to_json()), "seed": args.seed}))
    spec.validate()
    if args.count < 1:
        raise ValueError(f"--count must be at least 1, got {args.count}")
    for flag in ("dev", "test"):
        if getattr(args, flag) is not None and getattr(args, flag) < 0:
            raise ValueError(f"--{flag} must be non-negative")
    held_out = max(1, args.count // 10)
    sizes = {"train": args.count,
             "dev": held_out if args.dev is None else args.dev,
             "test": held_out if args.test is None else args.test}
    splits = generate_corpus(spec, **sizes)
    write_splits(splits, args.out)
    print(f"wrote {sizes['train']}/{sizes['dev']}/{sizes['test']} sentences to {args.out}")
    return EXIT_OK


def _parse_refs(items):
    refs = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ValueError(f"--ref expects NAME=PATH, got {item!r}")
        refs[name] = path
    return refs


def cmd_train(args):
    plan = load_plan(args.plan)
    if args.seed is not None:
        plan.seed = args.seed
    splits = read_splits(args.corpus)

    def progress(phase, rec):
        extra = f" {rec.metric_name}={rec.metric_value:.4f}" if rec.metric_value is not None else ""
        print(f"[{phase}] epoch {rec.epoch} train {rec.train_loss:.4f} dev {rec.dev_loss:.4f} "
              f"lr {rec.lr:.3g} ({rec.seconds:.1f}s){extra}", flush=True)

    extra = {"corpus_dir": os.path.abspath(args.corpus), "plan_source": args.plan,
             "threads": _threads(), "version": __version__}
    result = run_plan(plan, splits, args.out, _parse_refs(args.ref), progress, extra)
    print(f"final checkpoint: {result.checkpoint}")
    return EXIT_OK


def _write_report(report, out_dir, stem):
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, stem)
    with open(base + EVAL_SUFFIX, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(base + ".eval.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv())
    return base + EVAL_SUFFIX


def cmd_eval(args):
    splits = read_splits(args.corpus)
    if args.split not in splits:
        raise CorpusFormatError(f"{args.corpus}: no {args.split!r} split")
    corpus = splits[args.split]
    kw = {"bleu_mode": args.bleu_mode} if args.metric == "bleu1" else {}
    if args.cascade:
        if args.metric == "wer":
            raise ValueError("a cascade produces translations; use --metric bleu1")
        asr, mt = (load_checkpoint(p) for p in args.cascade)
        report = evaluate_cascade(asr, mt, corpus, **kw)
        stem = f"cascade.{args.split}.bleu1"
        out_dir = args.out or os.path.dirname(os.path.abspath(args.cascade[1]))
    else:
        if not args.ckpt:
            raise ValueError("eval needs --ckpt (or --cascade ASR MT)")
        m = load_checkpoint(args.ckpt)
        if m.task == TaskKind.TRANSCODER:
            raise ValueError("a transcoder emits states, not tokens; evaluate the composed model instead")
        for key, vocab in (("src_vocab", corpus.src_vocab), ("tgt_vocab", corpus.tgt_vocab)):
            if key in m.meta and m.meta[key] != vocab.fingerprint:
                raise ValueError(f"checkpoint {key} fingerprint {m.meta[key]} does not match the corpus "
                                 f"({vocab.fingerprint})")
        metric = args.metric or ("wer" if m.task == TaskKind.ASR else "bleu1")
        report = evaluate_model(m, corpus, metric, **kw)
        stem = f"{os.path.splitext(os.path.basename(args.ckpt))[0]}.{args.split}.{metric}"
        out_dir = args.out or os.path.dirname(os.path.abspath(args.ckpt))
    path = _write_report(report, out_dir, stem)
    print(f"{report.metric} {report.aggregate:.6f}  ({len(report.sentences)} sentences, report {path})")
    return EXIT_OK


def _system_names(dirs):
    names = [os.path.basename(os.path.normpath(d)) for d in dirs]
    if len(set(names)) == len(names):
        return names
    return [os.path.normpath(d) for d in dirs]


def collect_report(dirs):
    """Loss curves and evaluation summaries of run directories.

    Returns ``(curves, summary)``: ``curves`` has one row per system, phase and
    epoch; ``summary`` has one row per phase (final dev loss and end metric)
    and one per evaluation report found in the directory.
    """
    curves, summary = [], []
    for d, system in zip(dirs, _system_names(dirs)):
        merged = os.path.join(d, MERGED_LOG)
        if not os.path.isfile(merged):
            raise FileNotFoundError(f"{d}: no training log ({MERGED_LOG})")
        for lg in read_merged(merged):
            for r in lg.records:
                curves.append({"system": system, "phase": lg.phase, "epoch": r.epoch,
                               "train_loss": r.train_loss, "dev_loss": r.dev_loss, "lr": r.lr,
                               "metric_name": r.metric_name, "metric_value": r.metric_value,
                               "seconds": r.seconds})
            last = lg.records[-1]
            summary.append({"system": system, "item": f"phase:{lg.phase}", "epochs": len(lg.records),
                            "first_dev": lg.records[0].dev_loss, "final_dev": last.dev_loss,
                            "metric": last.metric_name or None, "value": last.metric_value})
        for path in sorted(glob.glob(os.path.join(d, "*" + EVAL_SUFFIX))):
            with open(path, encoding="utf-8") as fh:
                rep = json.load(fh)
            summary.append({"system": system, "item": "eval:" + os.path.basename(path)[:-len(EVAL_SUFFIX)],
                            "epochs": None, "first_dev": None, "final_dev": None,
                            "metric": rep["metric"], "value": rep["aggregate"]})
    return curves, summary


CURVE_COLS = ["system", "phase", "epoch", "train_loss", "dev_loss", "lr", "metric_name", "metric_value",
              "seconds"]
SUMMARY_COLS = ["system", "item", "epochs", "first_dev", "final_dev", "metric", "value"]


def _cell(v):
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def _write_csv(path, cols, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r[c]) for c in cols])


def cmd_report(args):
    curves, summary = collect_report(args.dirs)

    def fmt(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    table = [SUMMARY_COLS] + [[fmt(r[c]) for c in SUMMARY_COLS] for r in summary]
    widths = [max(len(row[i]) for row in table) for i in range(len(SUMMARY_COLS))]
    for row in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "report_loss_curves.csv"), CURVE_COLS, curves)
        _write_csv(os.path.join(args.out, "report_summary.csv"), SUMMARY_COLS, summary)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump({"systems": _system_names(args.dirs), "summary": summary, "loss_curves": curves},
                      fh, indent=1, sort_keys=True)
            fh.write("\n")
        print(f"wrote report to {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="curriswap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic reordering corpus with speech-like frames")
    g.add_argument("--spec", required=True, help="JSON corpus spec (vocab sizes, lengths, noise, reorder rule)")
    g.add_argument("--count", required=True, type=int, help="training sentences")
    g.add_argument("--dev", type=int, help="dev sentences (default count/10)")
    g.add_argument("--test", type=int, help="test sentences (default count/10)")
    g.add_argument("--seed", type=int, help="overrides the seed in the spec")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run a curriculum plan")
    t.add_argument("--plan", required=True,
                   help=f"plan file, or a bundled plan name ({', '.join(bundled_plans())})")
    t.add_argument("--corpus", required=True, help="directory with train/dev/test splits")
    t.add_argument("--out", required=True)
    t.add_argument("--ref", action="append", metavar="NAME=PATH", help="override a checkpoint ref of the plan")
    t.add_argument("--seed", type=int, help="overrides the plan seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy-decode a split and score it")
    e.add_argument("--ckpt")
    e.add_argument("--corpus", required=True)
    e.add_argument("--metric", choices=["wer", "bleu1"])
    e.add_argument("--split", default="test")
    e.add_argument("--cascade", nargs=2, metavar=("ASR", "MT"), help="ASR then MT checkpoints")
    e.add_argument("--bleu-mode", choices=["mean", "pooled"], default="mean")
    e.add_argument("--out", help="report directory (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="summarize loss curves and evaluation reports of run directories")
    r.add_argument("dirs", nargs="+", help="run directories; each must hold a training log")
    r.add_argument("--out", help="write report_loss_curves.csv, report_summary.csv and report.json here")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except (DivergenceError, NonFiniteError) as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except PhaseFailure as e:
        code = EXIT_IO if isinstance(e.cause, (OSError, CheckpointError, CorpusFormatError)) else EXIT_INVALID
        print(f"error: {e}", file=sys.stderr)
        return code
    except (OSError, CheckpointError, CorpusFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (CurriswapError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
