"""Desk-scale multi-stream attention-fusion speech recognition.

Joint CTC/attention models with one encoder per stream, stream-level
attention fusion, a two-stage training strategy (pooled feature-extractor
training, then frozen-component fusion training), joint beam-search
decoding with optional shallow LM fusion, conventional fusion baselines,
and a synthetic multi-stream corpus that makes every mechanism testable.
"""

from .autodiff import LOG_ZERO, ShapeMismatchError, Tape, Tensor, backward
from .beamsearch import BeamConfig, DecodeResult, decode
from .corpus import AugmentPolicy, CorpusSpec, CorruptionProfile, generate_corpus, spec_augment
from .ctc import CtcPrefixScorer, ctc_loss, multi_stream_ctc
from .data import FeatureSequence, LabelSequence, StreamBundle
from .model import ModelConfig, MtlConfig, MultiStreamModel, attention_xent
from .nn import AttentionConfig, DecoderConfig, EncoderConfig
from .params import ParameterStore
from .scoring import score
from .training import (
    FREEZE_PRESETS,
    FreezePlan,
    TrainConfig,
    train_joint,
    train_stage1,
    train_stage2,
)

__version__ = "0.1.0"
