"""Hashed linear sequence tagger.

A per-token multinomial logistic model over signed-hashed sparse features,
trained with mini-batch SGD under a linear learning-rate decay to zero.
The dev set is decoded after every epoch and the epoch with the best strict
micro F1 is kept.  Decoding is greedy left to right; the previous predicted
label is a feature, and training uses the gold previous label.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_open
from .errors import ConfigError, DataError, HistonerError
from .ner_corpus import OUTSIDE, AnnotatedSentence, label_inventory
from .scorer import strict_micro_f1
from .wordpiece import WordpieceVocab

log = logging.getLogger(__name__)

FEATURE_VERSION = 1
DEFAULT_HASH_BITS = 20
BOS, EOS, START = "<BOS>", "<EOS>", "<START>"


class TrainingError(HistonerError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 10
    learning_rate: float = 0.5
    seed: int = 1
    hash_bits: int = DEFAULT_HASH_BITS
    labels: list[str] | None = None
    vocab_path: str | None = None
    warmup: bool = False

    def __post_init__(self) -> None:
        if self.batch_size <= 0 or self.epochs <= 0 or self.learning_rate <= 0:
            raise ConfigError("batch_size, epochs and learning_rate must be positive")
        if not 4 <= self.hash_bits <= 26:
            raise ConfigError("hash_bits must be between 4 and 26")
        if self.warmup:
            raise ConfigError("learning-rate warmup is not implemented")

    def to_dict(self) -> dict:
        return asdict(self)


class LinearDecay:
    """``lr(t) = lr0 * (1 - t / T)``; updates use t = 0 .. T-1 and lr(T) == 0."""

    def __init__(self, lr0: float, total_steps: int):
        if total_steps <= 0:
            raise ValueError("total_steps must be positive")
        self.lr0 = lr0
        self.total_steps = total_steps

    def __call__(self, t: int) -> float:
        if not 0 <= t <= self.total_steps:
            raise ValueError(f"step {t} outside [0, {self.total_steps}]")
        return self.lr0 * (1.0 - t / self.total_steps)


def word_shape(token: str) -> str:
    out = []
    for ch in token:
        c = "X" if ch.isupper() else "x" if ch.islower() else "d" if ch.isdigit() else ch
        if not out or out[-1] != c:
            out.append(c)
    return "".join(out)


def _pieces(token: str, vocab: WordpieceVocab | None) -> list[str]:
    if vocab is None:
        return [token]
    return vocab.tokenize(token) or [token]


def static_features(tokens: Sequence[str], position: int, vocab: WordpieceVocab | None) -> list[str]:
    tok = tokens[position]
    pieces = _pieces(tok, vocab)
    feats = ["BIAS", f"FIRST={pieces[0]}"]
    feats += [f"WP={p}" for p in pieces]
    feats += [f"W={tok}", f"LW={tok.lower()}", f"SHAPE={word_shape(tok)}"]
    for off in (-2, -1, 1, 2):
        j = position + off
        if j < 0:
            other = BOS
        elif j >= len(tokens):
            other = EOS
        else:
            other = tokens[j]
        feats.append(f"W{off:+d}={other}")
    return feats


def featurize(
    tokens: Sequence[str], position: int, vocab: WordpieceVocab | None, prev_label: str | None = None
) -> list[str]:
    """Feature strings for one token; ``prev_label=None`` means sentence start."""
    return static_features(tokens, position, vocab) + [f"PREV={prev_label or START}"]


@lru_cache(maxsize=1 << 20)
def _hash(feature: str) -> int:
    return int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little")


def hash_feature(feature: str, bits: int) -> tuple[int, float]:
    h = _hash(feature)
    return h & ((1 << bits) - 1), (1.0 if h >> 63 else -1.0)


def hash_features(features: Sequence[str], bits: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = [hash_feature(f, bits) for f in features]
    return np.array([i for i, _ in pairs], dtype=np.int64), np.array([s for _, s in pairs])


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def example_loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, idx: np.ndarray, sign: np.ndarray, label: int
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy of one example and its dense gradients (for checking)."""
    scores = (weights[idx] * sign[:, None]).sum(axis=0) + bias
    p = _softmax(scores)
    loss = -math.log(p[label])
    g = p.copy()
    g[label] -= 1.0
    gw = np.zeros_like(weights)
    np.add.at(gw, idx, sign[:, None] * g[None, :])
    return loss, gw, g


@dataclass
class TaggerModel:
    labels: list[str]
    weights: np.ndarray
    bias: np.ndarray
    hash_bits: int
    vocab_tokens: list[str] | None = None
    feature_version: int = FEATURE_VERSION
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._vocab = WordpieceVocab(self.vocab_tokens) if self.vocab_tokens else None

    @property
    def vocab(self) -> WordpieceVocab | None:
        return self._vocab

    def digest(self) -> str:
        return weights_digest(self.weights, self.bias)

    def copy(self) -> TaggerModel:
        return TaggerModel(
            list(self.labels), self.weights.copy(), self.bias.copy(), self.hash_bits,
            self.vocab_tokens, self.feature_version, json.loads(json.dumps(self.provenance)),
        )

    def save(self, path: str | Path) -> None:
        rows = np.flatnonzero(np.any(self.weights != 0, axis=1))
        meta = {
            "labels": self.labels,
            "hash_bits": self.hash_bits,
            "feature_version": self.feature_version,
            "vocab_tokens": self.vocab_tokens,
            "provenance": self.provenance,
        }
        with atomic_open(path, "wb") as fh:
            np.savez(fh, rows=rows, values=self.weights[rows], bias=self.bias, meta=np.array(json.dumps(meta)))

    @classmethod
    def load(cls, path: str | Path) -> TaggerModel:
        try:
            with np.load(path, allow_pickle=False) as z:
                meta = json.loads(str(z["meta"]))
                weights = np.zeros((1 << meta["hash_bits"], len(meta["labels"])))
                weights[z["rows"]] = z["values"]
                bias = z["bias"].copy()
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot load tagger model {path}: {exc}") from exc
        return cls(
            meta["labels"], weights, bias, meta["hash_bits"], meta["vocab_tokens"],
            meta["feature_version"], meta["provenance"],
        )


def weights_digest(weights: np.ndarray, bias: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(weights).tobytes())
    h.update(np.ascontiguousarray(bias).tobytes())
    return h.hexdigest()


@dataclass
class _Encoded:
    idx: np.ndarray
    sign: np.ndarray
    starts: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


def _encode(
    sentences: Sequence[AnnotatedSentence], vocab, bits: int, label_index: dict[str, int]
) -> _Encoded:
    idx_parts, sign_parts, starts, ys = [], [], [], []
    offset = 0
    for s in sentences:
        for i in range(len(s.tokens)):
            prev = s.labels[i - 1] if i else None
            ix, sg = hash_features(featurize(s.tokens, i, vocab, prev), bits)
            idx_parts.append(ix)
            sign_parts.append(sg)
            starts.append(offset)
            offset += len(ix)
            ys.append(label_index[s.labels[i]])
    return _Encoded(
        np.concatenate(idx_parts), np.concatenate(sign_parts),
        np.array(starts, dtype=np.int64), np.array(ys, dtype=np.int64),
    )


def predict(model: TaggerModel, sentences: Sequence[AnnotatedSentence]) -> list[AnnotatedSentence]:
    """Greedy left-to-right decoding, feeding back the previous predicted label."""
    if model.feature_version != FEATURE_VERSION:
        raise ConfigError(
            f"model uses feature version {model.feature_version}, this build uses {FEATURE_VERSION}"
        )
    if not model.labels or model.weights.shape[1] != len(model.labels):
        raise ConfigError("model label inventory does not match its weight matrix")
    bits, vocab = model.hash_bits, model.vocab
    prev_cache = {lab: hash_feature(f"PREV={lab}", bits) for lab in model.labels}
    start = hash_feature(f"PREV={START}", bits)
    out = []
    for s in sentences:
        labels: list[str] = []
        for i in range(len(s.tokens)):
            ix, sg = hash_features(static_features(s.tokens, i, vocab), bits)
            pi, ps = prev_cache[labels[-1]] if labels else start
            scores = (model.weights[ix] * sg[:, None]).sum(axis=0) + model.bias
            scores = scores + ps * model.weights[pi]
            labels.append(model.labels[int(np.argmax(scores))])
        out.append(AnnotatedSentence(list(s.tokens), labels, s.language, s.doc_id))
    return out


@dataclass
class TrainResult:
    model: TaggerModel
    history: list[float]
    best_epoch: int
    batch_losses: list[list[float]]
    lr_trace: list[float]

    @property
    def best_f1(self) -> float:
        return self.history[self.best_epoch - 1]


def resolve_labels(
    config: TrainConfig, train: Sequence[AnnotatedSentence], dev: Sequence[AnnotatedSentence],
    init: TaggerModel | None,
) -> list[str]:
    seen = label_inventory(train) | label_inventory(dev)
    if init is not None:
        labels = list(init.labels)
    elif config.labels:
        labels = list(config.labels)
    else:
        labels = [OUTSIDE] + sorted(seen - {OUTSIDE})
    missing = seen - set(labels)
    if missing:
        raise DataError(f"labels {sorted(missing)} are not in the model inventory {labels}")
    return labels


def train(
    config: TrainConfig,
    train_set: Sequence[AnnotatedSentence],
    dev_set: Sequence[AnnotatedSentence],
    *,
    vocab: WordpieceVocab | None = None,
    init: TaggerModel | None = None,
) -> TrainResult:
    """Train from zeros, or from a copy of ``init`` (multi-stage fine-tuning)."""
    if not train_set or not dev_set:
        raise DataError("training and development sets must be non-empty")
    if vocab is None and init is not None:
        vocab = init.vocab
    if init is not None and init.hash_bits != config.hash_bits:
        raise ConfigError(f"init model uses {init.hash_bits} hash bits, config asks for {config.hash_bits}")
    labels = resolve_labels(config, train_set, dev_set, init)
    label_index = {l: i for i, l in enumerate(labels)}
    bits = config.hash_bits
    data = _encode(train_set, vocab, bits, label_index)
    n, n_labels = len(data), len(labels)

    if init is not None:
        weights, bias = init.weights.copy(), init.bias.copy()
    else:
        weights, bias = np.zeros((1 << bits, n_labels)), np.zeros(n_labels)
    init_digest = weights_digest(weights, bias)
    base_weights = weights.copy()
    rows = np.unique(data.idx)

    batches_per_epoch = math.ceil(n / config.batch_size)
    schedule = LinearDecay(config.learning_rate, batches_per_epoch * config.epochs)
    vocab_tokens = vocab.tokens if vocab is not None else None

    history: list[float] = []
    batch_losses: list[list[float]] = []
    lr_trace: list[float] = []
    best_epoch, best_f1 = 0, -1.0
    best_rows, best_bias = weights[rows].copy(), bias.copy()
    lengths = np.diff(np.append(data.starts, len(data.idx)))
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        losses = []
        for b0 in range(0, n, config.batch_size):
            ex = order[b0:b0 + config.batch_size]
            seg_len = lengths[ex]
            pos = np.concatenate([np.arange(data.starts[e], data.starts[e] + l) for e, l in zip(ex, seg_len)])
            idx, sgn = data.idx[pos], data.sign[pos]
            contrib = weights[idx] * sgn[:, None]
            seg_starts = np.concatenate([[0], np.cumsum(seg_len)[:-1]])
            scores = np.add.reduceat(contrib, seg_starts, axis=0) + bias
            p = _softmax(scores)
            y = data.y[ex]
            with np.errstate(divide="ignore", invalid="ignore"):
                loss = float(-np.mean(np.log(p[np.arange(len(ex)), y])))
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {step}: lr={schedule(step):.3g}, "
                    f"max|w|={np.abs(weights).max():.3g}"
                )
            losses.append(loss)
            g = p
            g[np.arange(len(ex)), y] -= 1.0
            g /= len(ex)
            lr = schedule(step)
            lr_trace.append(lr)
            owner = np.repeat(np.arange(len(ex)), seg_len)
            np.add.at(weights, idx, -lr * sgn[:, None] * g[owner])
            bias -= lr * g.sum(axis=0)
            step += 1
        batch_losses.append(losses)
        model = TaggerModel(labels, weights, bias, bits, vocab_tokens)
        f1 = 100.0 * strict_micro_f1(dev_set, predict(model, dev_set))
        history.append(f1)
        log.debug("epoch %d: mean loss %.4f dev strict F1 %.2f", epoch, float(np.mean(losses)), f1)
        if f1 > best_f1:
            best_epoch, best_f1 = epoch, f1
            best_rows, best_bias = weights[rows].copy(), bias.copy()
    lr_trace.append(schedule(step))

    final_w = base_weights
    final_w[rows] = best_rows
    provenance = {
        "config": config.to_dict(),
        "best_epoch": best_epoch,
        "history": history,
        "init_digest": init_digest,
        "parent_digest": init.digest() if init is not None else None,
        "total_steps": step,
    }
    model = TaggerModel(labels, final_w, best_bias, bits, vocab_tokens, FEATURE_VERSION, provenance)
    return TrainResult(model, history, best_epoch, batch_losses, lr_trace)
