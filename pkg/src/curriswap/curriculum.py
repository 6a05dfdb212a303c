"""Curriculum plans: phases that build, swap and compose components, train them and checkpoint.

A plan is JSON::

    {"name": "cl1_fast", "seed": 0,
     "model": {"embed": 32, "hidden": 64, "depth": 1},
     "train": {"lr": 0.001, "dropout": 0.2, ...},
     "refs": {"mt": "../mt/mt.ckpt"},
     "phases": [{"name": "asr", "task": "ASR", "loss": "ce", "epochs": 15},
                {"name": "st", "task": "ST", "loss": "ce", "epochs": 30,
                 "sources": {"encoder": "asr:encoder", "bridge": "asr:bridge"}}]}

A source is ``"fresh"`` or ``"<phase or ref>:<slot>"``. Slots not listed are fresh.
Listing ``transcoder`` makes the phase a composed speech translator.
"""
import csv
import hashlib
from dataclasses import asdict, dataclass, field, fields
import importlib.resources
import io
import json
import logging
import os
import time
import zlib

import numpy as np

from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .errors import CheckpointError, CurriswapError, IncompatibleError, PlanError
from .layers import Bridge, Decoder, Encoder
from .models import SPEECH_INPUT, ModelAssembly, TaskKind
from .optim import LR_FLOOR, OptimizerState, lr_schedule_update
from .training import (BATCH_SIZE, CLIP_NORM, DivergenceError, evaluate_loss, evaluate_model,
                       train_epoch)

log = logging.getLogger(__name__)

PLAIN_SLOTS = ("encoder", "bridge", "decoder")
COMPOSED_SLOTS = ("encoder", "bridge", "transcoder", "mt_bridge", "mt_decoder")
LOSS_FOR_TASK = {TaskKind.ASR: "ce", TaskKind.MT: "ce", TaskKind.ST: "ce", TaskKind.TRANSCODER: "mse"}
METRICS = ("auto", "wer", "bleu1", "none")
LOG_HEADER = ["epoch", "train_loss", "dev_loss", "lr", "seconds", "metric_name", "metric_value"]
MERGED_LOG = "loss_curves.csv"
RUN_CONFIG = "run_config.json"


class PhaseFailure(CurriswapError):
    """A phase aborted; ``cause`` holds the original error."""

    def __init__(self, phase, cause):
        self.phase = phase
        self.cause = cause
        super().__init__(f"phase {phase!r} failed: {cause}")


# ---------------------------------------------------------------- plan schema

@dataclass
class TrainSettings:
    lr: float = 0.001
    descend_rate: float = 1.8
    lr_mode: str = "plateau"
    lr_floor: float = LR_FLOOR
    clip: float = CLIP_NORM
    batch_size: int = BATCH_SIZE
    dropout: float = 0.0


@dataclass
class ModelDims:
    embed: int = 32
    hidden: int = 64
    depth: int = 1
    state_dim: int = 0


@dataclass
class Phase:
    name: str
    task: TaskKind
    loss: str
    epochs: int = 15
    sources: dict = field(default_factory=dict)
    freeze: tuple = ()
    data: dict = field(default_factory=lambda: {"train": "train", "dev": "dev"})
    seed: int = None
    targets: str = None
    aux_weight: float = None
    metric: str = "auto"

    @property
    def composed(self):
        return "transcoder" in self.sources

    @property
    def slots(self):
        return COMPOSED_SLOTS if self.composed else PLAIN_SLOTS

    def reads(self):
        """Checkpoint names this phase depends on."""
        names = [s.split(":", 1)[0] for s in self.sources.values() if s != "fresh"]
        if self.targets:
            names.append(self.targets)
        return names

    def to_dict(self):
        d = {"name": self.name, "task": self.task.value, "loss": self.loss, "epochs": self.epochs,
             "sources": dict(self.sources), "freeze": list(self.freeze), "data": dict(self.data),
             "metric": self.metric}
        for k in ("seed", "targets", "aux_weight"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d


def _known_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise PlanError(f"{where}: expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise PlanError(f"{where}: unknown keys {extra}")


def _typed(cls, obj, where):
    _known_keys(obj, [f.name for f in fields(cls)], where)
    out = cls()
    for f in fields(cls):
        if f.name in obj:
            v = obj[f.name]
            want = type(getattr(out, f.name))
            if want is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if not isinstance(v, want) or isinstance(v, bool):
                raise PlanError(f"{where}.{f.name}: expected {want.__name__}, got {v!r}")
            setattr(out, f.name, v)
    return out


@dataclass
class CurriculumPlan:
    name: str
    phases: list
    seed: int = 0
    model: ModelDims = field(default_factory=ModelDims)
    train: TrainSettings = field(default_factory=TrainSettings)
    refs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        _known_keys(d, ["name", "seed", "model", "train", "refs", "phases", "description"], "plan")
        if not isinstance(d.get("name"), str) or not d["name"]:
            raise PlanError("plan: 'name' must be a non-empty string")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise PlanError(f"plan.seed must be a non-negative integer, got {seed!r}")
        refs = d.get("refs", {})
        if not isinstance(refs, dict) or not all(isinstance(v, str) for v in refs.values()):
            raise PlanError("plan.refs must map names to checkpoint paths")
        phases = d.get("phases")
        if not isinstance(phases, list) or not phases:
            raise PlanError("plan.phases must be a non-empty list")
        plan = cls(d["name"], [_parse_phase(p, i) for i, p in enumerate(phases)], seed,
                   _typed(ModelDims, d.get("model", {}), "plan.model"),
                   _typed(TrainSettings, d.get("train", {}), "plan.train"), dict(refs))
        plan.validate()
        return plan

    def to_dict(self):
        return {"name": self.name, "seed": self.seed, "model": asdict(self.model),
                "train": asdict(self.train), "refs": dict(self.refs),
                "phases": [p.to_dict() for p in self.phases]}

    def validate(self):
        """Static checks: names, loss kinds, slots, freeze sets and the phase DAG."""
        t = self.train
        if t.lr <= 0 or t.descend_rate < 1 or t.lr_floor < 0 or t.batch_size < 1 or t.clip < 0:
            raise PlanError(f"plan.train has out-of-range values: {asdict(t)}")
        if t.lr_mode not in ("plateau", "epoch", "none"):
            raise PlanError(f"plan.train.lr_mode must be plateau, epoch or none, got {t.lr_mode!r}")
        if not 0.0 <= t.dropout < 1.0:
            raise PlanError(f"plan.train.dropout must be in [0, 1), got {t.dropout}")
        if min(self.model.embed, self.model.hidden, self.model.depth) < 1 or self.model.state_dim < 0:
            raise PlanError(f"plan.model dims must be positive: {asdict(self.model)}")
        order = {}
        for i, p in enumerate(self.phases):
            if p.name in order or p.name in self.refs:
                raise PlanError(f"phase name {p.name!r} is used twice")
            order[p.name] = i
        for i, p in enumerate(self.phases):
            for dep in p.reads():
                if dep in self.refs:
                    continue
                if dep not in order:
                    raise PlanError(f"phase {p.name!r}: unresolved source {dep!r}")
                if order[dep] >= i:
                    raise PlanError(f"phase {p.name!r} reads {dep!r}, which does not run before it")
            for slot, src in p.sources.items():
                if src == "fresh":
                    continue
                dep, dep_slot = src.split(":", 1)
                if dep in order and dep_slot not in self.phases[order[dep]].slots:
                    raise PlanError(f"phase {p.name!r}: {dep!r} has no slot {dep_slot!r}")
            if p.targets in order and self.phases[order[p.targets]].task != TaskKind.MT:
                raise PlanError(f"phase {p.name!r}: transcoder targets must come from an MT phase")


def _parse_phase(d, index):
    where = f"phases[{index}]"
    _known_keys(d, [f.name for f in fields(Phase)], where)
    for key in ("name", "task", "loss"):
        if not isinstance(d.get(key), str) or not d[key]:
            raise PlanError(f"{where}: {key!r} must be a non-empty string")
    name = d["name"]
    where = f"phase {name!r}"
    if ":" in name:
        raise PlanError(f"{where}: names may not contain ':'")
    try:
        task = TaskKind(d["task"].upper())
    except ValueError:
        raise PlanError(f"{where}: unknown task {d['task']!r}") from None
    loss = {"cross-entropy": "ce", "cross_entropy": "ce"}.get(d["loss"].lower(), d["loss"].lower())
    if loss != LOSS_FOR_TASK[task]:
        raise PlanError(f"{where}: a {task.value} phase trains with {LOSS_FOR_TASK[task]!r}, not {d['loss']!r}")
    epochs = d.get("epochs", 15)
    if not isinstance(epochs, int) or isinstance(epochs, bool) or epochs < 1:
        raise PlanError(f"{where}: epoch budget must be an integer >= 1, got {epochs!r}")
    sources = d.get("sources", {})
    if not isinstance(sources, dict):
        raise PlanError(f"{where}: sources must be an object")
    composed = "transcoder" in sources
    slots = COMPOSED_SLOTS if composed else PLAIN_SLOTS
    for slot, src in sources.items():
        if slot not in slots:
            raise PlanError(f"{where}: unknown slot {slot!r} (slots: {list(slots)})")
        if not isinstance(src, str) or (src != "fresh" and (src.count(":") != 1 or src.startswith(":")
                                                            or src.endswith(":"))):
            raise PlanError(f"{where}: source for {slot!r} must be 'fresh' or '<name>:<slot>', got {src!r}")
    if composed and task != TaskKind.ST:
        raise PlanError(f"{where}: only ST phases can chain a transcoder")
    freeze = d.get("freeze", [])
    if not isinstance(freeze, list) or any(f not in slots for f in freeze):
        raise PlanError(f"{where}: freeze must list slots from {list(slots)}, got {freeze!r}")
    if len(freeze) == len(slots):
        raise PlanError(f"{where}: every slot is frozen; nothing would train")
    data = d.get("data", {"train": "train", "dev": "dev"})
    if not isinstance(data, dict) or set(data) != {"train", "dev"} or not all(isinstance(v, str) for v in data.values()):
        raise PlanError(f"{where}: data must name the 'train' and 'dev' splits")
    targets = d.get("targets")
    if (task == TaskKind.TRANSCODER) != (targets is not None):
        raise PlanError(f"{where}: 'targets' (an MT checkpoint) is required for TRANSCODER phases only")
    if targets is not None and not isinstance(targets, str):
        raise PlanError(f"{where}: targets must be a checkpoint name")
    seed = d.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        raise PlanError(f"{where}: seed must be a non-negative integer")
    aux = d.get("aux_weight")
    if aux is not None and (not isinstance(aux, (int, float)) or isinstance(aux, bool) or aux < 0):
        raise PlanError(f"{where}: aux_weight must be a non-negative number")
    metric = d.get("metric", "auto")
    if metric not in METRICS:
        raise PlanError(f"{where}: metric must be one of {METRICS}")
    if metric == "wer" and task != TaskKind.ASR or metric == "bleu1" and task not in (TaskKind.MT, TaskKind.ST):
        raise PlanError(f"{where}: metric {metric!r} does not apply to {task.value}")
    return Phase(name, task, loss, epochs, dict(sources), tuple(freeze), dict(data), seed, targets,
                 None if aux is None else float(aux), metric)


def bundled_plans():
    root = importlib.resources.files("curriswap") / "plans"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def load_plan(path_or_name):
    """Read a plan file; a bare name (``cl1_fast`` or ``cl1_fast.json``) falls back to the bundled plans."""
    text = None
    if os.path.exists(path_or_name):
        with open(path_or_name, encoding="utf-8") as fh:
            text = fh.read()
    else:
        base = os.path.basename(path_or_name)
        base = base if base.endswith(".json") else base + ".json"
        if base in bundled_plans() and os.path.dirname(path_or_name) == "":
            text = (importlib.resources.files("curriswap") / "plans" / base).read_text(encoding="utf-8")
    if text is None:
        raise FileNotFoundError(f"no plan file {path_or_name!r} (bundled: {', '.join(bundled_plans())})")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise PlanError(f"{path_or_name}: invalid JSON ({e})") from None
    return CurriculumPlan.from_dict(d)


# ---------------------------------------------------------------- logs

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    lr: float
    seconds: float
    metric_name: str = ""
    metric_value: float = None

    def row(self):
        return [str(self.epoch), repr(self.train_loss), repr(self.dev_loss), repr(self.lr),
                f"{self.seconds:.3f}", self.metric_name,
                "" if self.metric_value is None else repr(self.metric_value)]


@dataclass
class TrainLog:
    phase: str
    records: list = field(default_factory=list)

    def append(self, rec):
        if rec.epoch != len(self.records) + 1:
            raise ValueError(f"epoch {rec.epoch} breaks the contiguous sequence of {self.phase!r}")
        self.records.append(rec)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, phase=""):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != LOG_HEADER:
            raise ValueError(f"not a training log: header {rows[0] if rows else None}")
        out = cls(phase)
        for r in rows[1:]:
            out.append(EpochRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]), r[5],
                                   float(r[6]) if r[6] else None))
        return out


def merged_csv(logs):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["phase"] + LOG_HEADER)
    for lg in logs:
        for r in lg.records:
            w.writerow([lg.phase] + r.row())
    return buf.getvalue()


def read_merged(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["phase"] + LOG_HEADER:
        raise ValueError(f"{path}: not a merged loss-curve table")
    logs = {}
    for r in rows[1:]:
        lg = logs.setdefault(r[0], TrainLog(r[0]))
        lg.append(EpochRecord(int(r[1]), float(r[2]), float(r[3]), float(r[4]), float(r[5]), r[6],
                              float(r[7]) if r[7] else None))
    return list(logs.values())


# ---------------------------------------------------------------- assembly

class Registry:
    """Checkpoints by name: plan refs (paths) plus the outputs of finished phases."""

    def __init__(self, paths=None):
        self.paths = dict(paths or {})
        self._models = {}

    def add(self, name, path, model=None):
        self.paths[name] = path
        if model is not None:
            self._models[name] = model

    def model(self, name):
        if name not in self._models:
            if name not in self.paths:
                raise PlanError(f"unresolved checkpoint {name!r}")
            try:
                self._models[name] = load_checkpoint(self.paths[name])
            except FileNotFoundError:
                raise PlanError(f"checkpoint {name!r} not found at {self.paths[name]}") from None
        return self._models[name]

    def part(self, ref):
        name, slot = ref.split(":", 1)
        m = self.model(name)
        if slot not in m.parts:
            raise PlanError(f"checkpoint {name!r} has no slot {slot!r} (slots: {list(m.parts)})")
        return m.parts[slot].copy()


def corpus_meta(corpus):
    meta = {"src_vocab": corpus.src_vocab.fingerprint, "tgt_vocab": corpus.tgt_vocab.fingerprint}
    if corpus.normalizer is not None:
        meta["normalizer"] = json.loads(corpus.normalizer.to_json())
    return meta


def _check_vocab(name, m, meta):
    for key in ("src_vocab", "tgt_vocab"):
        if key in m.meta and key in meta and m.meta[key] != meta[key]:
            raise IncompatibleError(f"checkpoint {name!r} {key} fingerprint", meta[key], m.meta[key])


def phase_seed(plan, phase):
    return plan.seed if phase.seed is None else phase.seed


def epoch_seed(plan, phase, epoch):
    rng = np.random.default_rng([phase_seed(plan, phase), zlib.crc32(phase.name.encode()), epoch])
    return int(rng.integers(2 ** 62))


def assemble_phase(plan, phase, registry, corpus):
    """Build the phase's assembly from fresh parts and registry checkpoints; width errors surface here."""
    dims = plan.model
    seed = phase_seed(plan, phase)
    n_src, n_tgt = len(corpus.src_vocab), len(corpus.tgt_vocab)
    speech = phase.task in SPEECH_INPUT
    for dep in set(phase.reads()):
        _check_vocab(dep, registry.model(dep), corpus_meta(corpus))
    given = {slot: registry.part(src) for slot, src in phase.sources.items() if src != "fresh"}

    def fresh_name(slot):
        return f"{plan.name}/{phase.name}/{slot}"

    parts = {}
    enc = given.get("encoder")
    if enc is None:
        size = corpus.frame_dim if speech else n_src
        enc = Encoder(fresh_name("encoder"), "frames" if speech else "tokens", size, dims.embed, dims.hidden,
                      dims.depth, seed=seed)
    parts["encoder"] = enc
    targets_width = None
    if phase.task == TaskKind.TRANSCODER:
        mt = registry.model(phase.targets)
        if mt.task != TaskKind.MT:
            raise PlanError(f"phase {phase.name!r}: targets {phase.targets!r} is a {mt.task.value} model")
        targets_width = mt.parts["encoder"].out_width
    first = "transcoder" if phase.composed else "decoder"
    dec = given.get(first)
    if dec is None:
        vocab = n_src if phase.task in (TaskKind.ASR, TaskKind.TRANSCODER) or phase.composed else n_tgt
        state_dim = targets_width or (dims.state_dim or 2 * dims.hidden if phase.composed else 0)
        dec = Decoder(fresh_name(first), vocab, dims.embed, dims.hidden, dims.depth, enc.out_width,
                      state_dim, seed=seed)
    elif targets_width and not dec.state_dim:
        dec.add_state_head(targets_width, seed)
    parts["bridge"] = given.get("bridge") or Bridge(fresh_name("bridge"), enc.out_width, dec.hidden, seed=seed)
    parts[first] = dec
    if phase.composed:
        mdec = given.get("mt_decoder") or Decoder(fresh_name("mt_decoder"), n_tgt, dims.embed, dims.hidden,
                                                  dims.depth, dec.state_dim, seed=seed)
        parts["mt_bridge"] = given.get("mt_bridge") or Bridge(fresh_name("mt_bridge"), dec.state_dim,
                                                              mdec.hidden, seed=seed)
        parts["mt_decoder"] = mdec
    if phase.aux_weight is not None:
        aux = phase.aux_weight
    else:
        aux = 1.0 if phase.task == TaskKind.TRANSCODER or phase.composed else 0.0
    meta = corpus_meta(corpus)
    return ModelAssembly(phase.task, [(s, parts[s]) for s in phase.slots], aux, meta)


def check_plan(plan, splits, registry):
    """Fail-fast dry run: resolve every ref and assemble every phase with untrained parts."""
    for phase in plan.phases:
        for split in phase.data.values():
            if split not in splits:
                raise PlanError(f"phase {phase.name!r}: corpus has no split {split!r} "
                                f"(splits: {sorted(splits)})")
    for name, path in registry.paths.items():
        if not os.path.exists(path):
            raise PlanError(f"checkpoint ref {name!r} not found at {path}")
        read_header(path)
    dry = Registry(registry.paths)
    for phase in plan.phases:
        try:
            m = assemble_phase(plan, phase, dry, splits[phase.data["train"]])
        except (CurriswapError, ValueError) as e:
            raise PhaseFailure(phase.name, e) from e
        dry.add(phase.name, None, m)


# ---------------------------------------------------------------- execution

def default_metric_name(m):
    if m.task == TaskKind.ASR:
        return "wer"
    if m.task in (TaskKind.MT, TaskKind.ST):
        return "bleu1"
    return None


def run_phase(plan, phase, registry, splits, out_dir, progress=None):
    """Assemble, train for the epoch budget with the lr schedule, save checkpoint and log.

    Returns ``(checkpoint path, TrainLog, model)``.
    """
    settings = plan.train
    train_set, dev_set = splits[phase.data["train"]], splits[phase.data["dev"]]
    m = assemble_phase(plan, phase, registry, train_set)
    mt = registry.model(phase.targets) if phase.task == TaskKind.TRANSCODER else None
    metric = default_metric_name(m) if phase.metric == "auto" else (None if phase.metric == "none" else phase.metric)
    opt = OptimizerState(lr=settings.lr)
    devs = []
    tlog = TrainLog(phase.name)
    for epoch in range(1, phase.epochs + 1):
        t0 = time.perf_counter()
        try:
            tl = train_epoch(m, train_set, opt, epoch_seed(plan, phase, epoch), settings.batch_size,
                             settings.clip, mt, phase.freeze, settings.dropout)
        except DivergenceError as e:
            e.phase = phase.name
            e.args = (f"phase {phase.name!r}, epoch {epoch}: {e.args[0]}",)
            raise
        dl = evaluate_loss(m, dev_set, settings.batch_size, mt)
        lr_used = opt.lr
        value = None
        if metric and epoch == phase.epochs:
            value = evaluate_model(m, dev_set, metric).aggregate
        devs.append(dl)
        lr_schedule_update(opt, devs, settings.descend_rate, settings.lr_mode, settings.lr_floor)
        rec = EpochRecord(epoch, tl, dl, lr_used, time.perf_counter() - t0, metric if value is not None else "",
                          value)
        tlog.append(rec)
        log.info("%s epoch %d train %.4f dev %.4f lr %.3g", phase.name, epoch, tl, dl, lr_used)
        if progress:
            progress(phase.name, rec)
    path = os.path.join(out_dir, f"{phase.name}.ckpt")
    save_checkpoint(m, path, opt, meta={"plan": plan.name, "phase": phase.name})
    with open(os.path.join(out_dir, f"{phase.name}.log.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(tlog.to_csv())
    registry.add(phase.name, path, m)
    return path, tlog, m


@dataclass
class PlanResult:
    checkpoint: str
    logs: list
    checkpoints: dict
    models: dict


def resolve_refs(plan, out_dir, overrides=None):
    """Plan refs are relative to the output directory; ``overrides`` win and are used as given."""
    paths = {k: os.path.normpath(os.path.join(out_dir, v)) for k, v in plan.refs.items()}
    for k, v in (overrides or {}).items():
        if k not in plan.refs:
            raise PlanError(f"plan {plan.name!r} declares no ref {k!r} (refs: {sorted(plan.refs)})")
        paths[k] = v
    return paths


def run_plan(plan, splits, out_dir, refs=None, progress=None, extra_config=None):
    """Validate, then run every phase in order; writes checkpoints, per-phase logs,
    the merged loss-curve table and the resolved run configuration into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    registry = Registry(resolve_refs(plan, out_dir, refs))
    check_plan(plan, splits, registry)
    config = {"plan": plan.to_dict(), "refs": dict(registry.paths),
              "corpus": {k: {"sentences": len(v), "src_vocab": v.src_vocab.fingerprint,
                             "tgt_vocab": v.tgt_vocab.fingerprint} for k, v in sorted(splits.items())}}
    config.update(extra_config or {})
    with open(os.path.join(out_dir, RUN_CONFIG), "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=1, sort_keys=True)
    logs, ckpts, models = [], {}, {}
    for phase in plan.phases:
        try:
            path, tlog, m = run_phase(plan, phase, registry, splits, out_dir, progress)
        except DivergenceError:
            raise
        except (CurriswapError, ValueError, CheckpointError) as e:
            raise PhaseFailure(phase.name, e) from e
        logs.append(tlog)
        ckpts[phase.name] = path
        models[phase.name] = m
        with open(os.path.join(out_dir, MERGED_LOG), "w", encoding="utf-8", newline="") as fh:
            fh.write(merged_csv(logs))
    return PlanResult(ckpts[plan.phases[-1].name], logs, ckpts, models)


def frozen_hash(m):
    """Content hash of all parameter payloads of an assembly."""
    h = hashlib.sha256()
    for k, t in m.named_params():
        h.update(k.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


__all__ = ["CurriculumPlan", "Phase", "TrainSettings", "ModelDims", "TrainLog", "EpochRecord", "Registry",
           "PhaseFailure", "PlanResult", "load_plan", "bundled_plans", "assemble_phase", "check_plan",
           "run_phase", "run_plan", "merged_csv", "read_merged", "frozen_hash"]
