"""Cross-entropy training loop, optimizers, and checkpoint serialization.

Training is fully deterministic given the seed: parameter init, the
per-epoch shuffle, batch order, and the gradient reduction order are all
fixed. Each epoch ends with a full pass over the train and validation
parts; the checkpoint with the best monitored metric (earliest epoch on
ties) is returned. The test part is never touched here.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from . import autodiff as ad
from . import models
from .autodiff import Tensor
from .corpus import LabeledRecord, SplitDataset
from .errors import (
    CorruptCheckpoint,
    EmptySplit,
    NonfiniteLoss,
    ShapeMismatch,
    VersionUnsupported,
)
from .models import ModelConfig, ModelParams
from .textprep import TokenSequence, Vocabulary, encode_sequence

CHECKPOINT_MAGIC = b"ATXC"
CHECKPOINT_VERSION = 1

OPTIMIZERS = ("adam", "sgd")
BEST_BY = ("validation_accuracy", "validation_loss")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    select_best_by: str = "validation_accuracy"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.select_best_by not in BEST_BY:
            raise ValueError(f"select_best_by must be one of {BEST_BY}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    validation_loss: float
    validation_accuracy: float


def cross_entropy(probs, label) -> float:
    """-ln(probs[label]), clamped at 1e-12 so degenerate rows stay finite."""
    p = float(np.asarray(probs)[int(label)])
    return -math.log(max(p, 1e-12))


# --- optimizers ---------------------------------------------------------------

class Sgd:
    def __init__(self, params: Sequence[Tensor], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    """Bias-corrected Adam: the t=1 update is lr * g / (|g| + eps)."""

    def __init__(self, params: Sequence[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / correct1
            v_hat = self.v[i] / correct2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(params: Sequence[Tensor], config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(params, config.learning_rate)
    return Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)


# --- checkpoints ----------------------------------------------------------------

@dataclass
class ModelCheckpoint:
    """Everything needed to predict: config, preprocessing state, weights."""

    config: ModelConfig
    vocab: Vocabulary
    stopwords: frozenset[str]
    truncate: str
    tensors: dict[str, np.ndarray]
    epoch: int
    version: int = CHECKPOINT_VERSION


def save_checkpoint(ckpt: ModelCheckpoint, sink: str | Path | BinaryIO) -> None:
    """Binary layout: magic ATXC, u32 version, length-prefixed canonical
    JSON metadata, length-prefixed vocabulary TSV, then named tensors in
    the shared binary format. Little-endian throughout."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as handle:
            save_checkpoint(ckpt, handle)
        return
    meta = dict(ckpt.config.to_json_dict(), epoch=ckpt.epoch,
                truncate=ckpt.truncate, stopwords=sorted(ckpt.stopwords))
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    vocab_blob = ckpt.vocab.to_tsv().encode("utf-8")
    sink.write(CHECKPOINT_MAGIC)
    sink.write(struct.pack("<I", ckpt.version))
    sink.write(struct.pack("<Q", len(meta_blob)))
    sink.write(meta_blob)
    sink.write(struct.pack("<Q", len(vocab_blob)))
    sink.write(vocab_blob)
    names = sorted(ckpt.tensors)
    sink.write(struct.pack("<I", len(names)))
    for name in names:
        encoded = name.encode("utf-8")
        sink.write(struct.pack("<Q", len(encoded)))
        sink.write(encoded)
        ad.write_tensor(sink, ckpt.tensors[name])


def load_checkpoint(source: str | Path | BinaryIO) -> ModelCheckpoint:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as handle:
            return load_checkpoint(handle)
    try:
        magic = ad._read_exact(source, 4)
        if magic != CHECKPOINT_MAGIC:
            raise CorruptCheckpoint(f"bad magic {magic!r}")
        version = struct.unpack("<I", ad._read_exact(source, 4))[0]
        if version != CHECKPOINT_VERSION:
            raise VersionUnsupported(f"checkpoint version {version} not supported")
        meta_len = struct.unpack("<Q", ad._read_exact(source, 8))[0]
        meta = json.loads(ad._read_exact(source, meta_len).decode("utf-8"))
        vocab_len = struct.unpack("<Q", ad._read_exact(source, 8))[0]
        vocab_text = ad._read_exact(source, vocab_len).decode("utf-8")
        n_tensors = struct.unpack("<I", ad._read_exact(source, 4))[0]
        tensors = {}
        for _ in range(n_tensors):
            name_len = struct.unpack("<Q", ad._read_exact(source, 8))[0]
            name = ad._read_exact(source, name_len).decode("utf-8")
            tensors[name] = ad.read_tensor(source)
    except (EOFError, UnicodeDecodeError, json.JSONDecodeError, struct.error,
            OverflowError, MemoryError, ValueError) as exc:
        raise CorruptCheckpoint(f"truncated or garbled checkpoint: {exc}") from None

    epoch = meta.pop("epoch", 0)
    truncate = meta.pop("truncate", "head")
    stopwords = frozenset(meta.pop("stopwords", []))
    try:
        config = ModelConfig(**meta)
    except (TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"bad embedded config: {exc}") from None
    vocab = Vocabulary.from_tsv(vocab_text, max_size=config.vocab_size)

    expected = models.expected_parameter_shapes(config)
    if set(tensors) != set(expected):
        raise CorruptCheckpoint("tensor names do not match the embedded config")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != shape:
            raise CorruptCheckpoint(
                f"{name}: declared shape {tuple(tensors[name].shape)} != expected {shape}")
    return ModelCheckpoint(config, vocab, stopwords, truncate, tensors, epoch, version)


def params_from_checkpoint(ckpt: ModelCheckpoint, requires_grad: bool = False) -> ModelParams:
    return models.build_params(ckpt.config, ckpt.tensors, requires_grad=requires_grad)


# --- the loop -------------------------------------------------------------------

def _encode_all(records: Sequence[LabeledRecord], vocab: Vocabulary,
                max_len: int, truncate: str) -> list[TokenSequence]:
    return [encode_sequence(r.summary, vocab, max_len, truncate) for r in records]


def _dataset_metrics(params: ModelParams, sequences: Sequence[TokenSequence],
                     labels: Sequence[int]) -> tuple[float, float]:
    total_loss = 0.0
    correct = 0
    for seq, label in zip(sequences, labels):
        probs = models.forward_probs(params, seq)
        total_loss += cross_entropy(probs, label)
        if int(np.argmax(probs)) == label:
            correct += 1
    n = len(sequences)
    return total_loss / n, correct / n


def _improved(candidate: EpochRecord, best: EpochRecord | None, by: str) -> bool:
    if best is None:
        return True
    if by == "validation_loss":
        return candidate.validation_loss < best.validation_loss
    return candidate.validation_accuracy > best.validation_accuracy


def train(model_config: ModelConfig, train_config: TrainConfig, split: SplitDataset,
          vocab: Vocabulary, stopwords: frozenset[str] = frozenset(),
          truncate: str = "head") -> tuple[ModelCheckpoint, list[EpochRecord]]:
    """Train on split.train, monitor split.validation, return the best
    checkpoint and the per-epoch history.

    Record summaries are expected to be cleansed already (cleansing is
    idempotent, so passing raw text through the same cleanser first is
    equivalent). `stopwords` and `truncate` are embedded into the
    checkpoint so prediction can reproduce preprocessing exactly.
    """
    if not (len(split.train) and len(split.validation) and len(split.test)):
        raise EmptySplit("all three split parts must be non-empty")

    max_len = model_config.max_len
    train_seqs = _encode_all(split.train, vocab, max_len, truncate)
    train_labels = [int(r.label) for r in split.train]
    val_seqs = _encode_all(split.validation, vocab, max_len, truncate)
    val_labels = [int(r.label) for r in split.validation]

    params = models.init_params(model_config, train_config.seed)
    named = models.named_parameters(params)
    tensors = [t for _, t in named]
    optimizer = make_optimizer(tensors, train_config)
    rng = np.random.default_rng(train_config.seed)
    n = len(train_seqs)
    batch = train_config.batch_size

    history: list[EpochRecord] = []
    best: EpochRecord | None = None
    best_tensors: dict[str, np.ndarray] = {}

    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            chosen = order[start:start + batch]
            for t in tensors:
                t.zero_grad()
            total = None
            for idx in chosen:
                seq = train_seqs[idx]
                features = models.encode_features(params, seq)
                mask = _dropout_mask(model_config, rng)
                logits = models.head_logits(features, params.head, mask)
                sample_loss = ad.softmax_cross_entropy(logits, train_labels[idx])
                total = sample_loss if total is None else ad.add(total, sample_loss)
            loss = ad.mul(total, Tensor(1.0 / len(chosen)))
            if not np.isfinite(loss.data):
                raise NonfiniteLoss(f"loss is {float(loss.data)} at epoch {epoch}, "
                                    f"batch {start // batch}")
            ad.backward(loss)
            optimizer.step()

        train_loss, train_acc = _dataset_metrics(params, train_seqs, train_labels)
        val_loss, val_acc = _dataset_metrics(params, val_seqs, val_labels)
        record = EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc)
        history.append(record)
        if _improved(record, best, train_config.select_best_by):
            best = record
            best_tensors = {name: t.data.copy() for name, t in named}

    checkpoint = ModelCheckpoint(model_config, vocab, frozenset(stopwords),
                                 truncate, best_tensors, best.epoch)
    return checkpoint, history


def _dropout_mask(config: ModelConfig, rng: np.random.Generator) -> Tensor | None:
    if config.dropout_rate <= 0.0:
        return None
    keep = 1.0 - config.dropout_rate
    mask = (rng.random(config.head_units) < keep) / keep
    return Tensor(mask)


# --- history CSV ------------------------------------------------------------------

HISTORY_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"


def history_to_csv(history: Sequence[EpochRecord]) -> str:
    lines = [HISTORY_HEADER]
    for r in history:
        lines.append(f"{r.epoch},{r.train_loss!r},{r.train_accuracy!r},"
                     f"{r.validation_loss!r},{r.validation_accuracy!r}")
    return "\n".join(lines) + "\n"


def history_from_csv(text: str) -> list[EpochRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    records = []
    for line in lines[1:]:
        epoch, tl, ta, vl, va = line.split(",")
        records.append(EpochRecord(int(epoch), float(tl), float(ta), float(vl), float(va)))
    return records
