"""Attention seq2seq on a numpy autodiff tape, with module-swapping curricula for speech translation."""
__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check, no_grad, tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .curriculum import CurriculumPlan, TrainLog, load_plan, run_phase, run_plan
from .data import Corpus, SynthSpec, Vocabulary, generate_corpus, read_splits, write_splits
from .metrics import bleu_plus1, evaluate, wer
from .models import (ModelAssembly, ModelConfig, TaskKind, build_model, cascade_translate,
                     compose_slow_track, greedy_decode, make_transcoder, swap_component)
from .optim import OptimizerState, adam_step, lr_schedule_update
from .training import train_epoch, transcoder_targets

__all__ = [
    "Tensor", "backward", "grad_check", "no_grad", "tensor", "load_checkpoint", "save_checkpoint",
    "CurriculumPlan", "TrainLog", "load_plan", "run_phase", "run_plan", "Corpus", "SynthSpec",
    "Vocabulary", "generate_corpus", "read_splits", "write_splits", "bleu_plus1", "evaluate", "wer",
    "ModelAssembly", "ModelConfig", "TaskKind", "build_model", "cascade_translate", "compose_slow_track",
    "greedy_decode", "make_transcoder", "swap_component", "OptimizerState", "adam_step",
    "lr_schedule_update", "train_epoch", "transcoder_targets",
]
