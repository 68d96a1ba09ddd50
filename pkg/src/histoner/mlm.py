"""Masked-LM pretraining instances and pretraining budget arithmetic.

Instance creation follows the reference BERT procedure: documents are packed
into ``[CLS] A [SEP] B [SEP]`` pairs with 50% random-next B segments and a 10%
chance of a shorter target length, then masked with the 80/10/10 rule.
Every (document, duplication round) pair draws from its own RNG stream, so
output does not depend on how documents are scheduled across workers.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from ._io import atomic_open, dumps_line
from .errors import ConfigError, DataError
from .wordpiece import CLS, MASK, PREFIX, SEP, SPECIALS, WordpieceVocab

MAX_SEQ_LEN = 512
MAX_PREDICTIONS = 75
MAX_PREDICTIONS_64K = 76
MLM_PROB = 0.15
DUPE_FACTOR = 5
SHORT_SEQ_PROB = 0.1

MASK_KIND, KEEP_KIND, RANDOM_KIND = "mask", "keep", "random"


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def max_predictions_for(vocab_mode: str) -> int:
    return {"32k": MAX_PREDICTIONS, "64k": MAX_PREDICTIONS_64K}[vocab_mode]


@dataclass
class TokenizedDocument:
    id: str
    sentences: list[list[str]]
    language: str = ""


@dataclass
class MlmInstance:
    token_ids: list[int]
    segment_ids: list[int]
    is_random_next: bool
    masked_positions: list[int]
    masked_label_ids: list[int]

    def to_json(self) -> str:
        return dumps_line(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> MlmInstance:
        return cls(**d)


@dataclass
class MaskResult:
    token_ids: list[int]
    positions: list[int]
    label_ids: list[int]
    kinds: list[str] = field(default_factory=list)


def tokenize_documents(docs: Iterable, vocab: WordpieceVocab, **kw) -> list[TokenizedDocument]:
    """One sentence per non-blank line of each document's text."""
    out = []
    for doc in docs:
        sents = [vocab.tokenize(line, **kw) for line in doc.text.splitlines()]
        sents = [s for s in sents if s]
        if sents:
            out.append(TokenizedDocument(doc.id, sents, getattr(doc, "language", "")))
    return out


def num_to_mask(n_maskable: int, mlm_prob: float, max_predictions: int) -> int:
    return min(max_predictions, max(1, round_half_away(mlm_prob * n_maskable)))


def mask_tokens(
    token_ids: Sequence[int],
    vocab: WordpieceVocab,
    mlm_prob: float,
    max_predictions: int,
    rng: random.Random,
    *,
    whole_word: bool = False,
) -> MaskResult:
    """Choose and corrupt masked positions for one packed instance."""
    cls_id, sep_id, mask_id = vocab.index[CLS], vocab.index[SEP], vocab.index[MASK]
    cand: list[list[int]] = []
    for i, tid in enumerate(token_ids):
        if tid in (cls_id, sep_id):
            continue
        if whole_word and cand and vocab.tokens[tid].startswith(PREFIX):
            cand[-1].append(i)
        else:
            cand.append([i])
    n_maskable = sum(len(c) for c in cand)
    output = list(token_ids)
    if n_maskable == 0:
        return MaskResult(output, [], [])
    rng.shuffle(cand)
    budget = num_to_mask(n_maskable, mlm_prob, max_predictions)
    n_regular = len(vocab) - len(SPECIALS)
    chosen: list[tuple[int, str]] = []
    for group in cand:
        if len(chosen) >= budget:
            break
        if len(chosen) + len(group) > budget:
            continue
        for idx in group:
            if rng.random() < 0.8:
                output[idx], kind = mask_id, MASK_KIND
            elif rng.random() < 0.5:
                kind = KEEP_KIND
            else:
                output[idx] = len(SPECIALS) + rng.randrange(n_regular) if n_regular else mask_id
                kind = RANDOM_KIND
            chosen.append((idx, kind))
    chosen.sort()
    return MaskResult(
        output,
        [i for i, _ in chosen],
        [token_ids[i] for i, _ in chosen],
        [k for _, k in chosen],
    )


def _truncate_pair(a: list, b: list, max_tokens: int, rng: random.Random) -> None:
    while len(a) + len(b) > max_tokens:
        longer = a if len(a) > len(b) else b
        if rng.random() < 0.5:
            del longer[0]
        else:
            longer.pop()


def stream_seed(seed: int, doc_id: str, dupe: int) -> int:
    digest = hashlib.sha256(f"{doc_id}\x00{dupe}".encode("utf-8")).digest()
    return seed ^ int.from_bytes(digest[:8], "big")


def instances_from_document(
    docs: Sequence[TokenizedDocument],
    doc_index: int,
    vocab: WordpieceVocab,
    rng: random.Random,
    *,
    max_seq_len: int = MAX_SEQ_LEN,
    max_predictions: int = MAX_PREDICTIONS,
    mlm_prob: float = MLM_PROB,
    short_seq_prob: float = SHORT_SEQ_PROB,
    whole_word: bool = False,
    with_kinds: bool = False,
) -> list:
    document = docs[doc_index].sentences
    max_tokens = max_seq_len - 3
    target = max_tokens
    if rng.random() < short_seq_prob:
        target = rng.randint(2, max_tokens)

    out = []
    chunk: list[list[str]] = []
    length = 0
    i = 0
    while i < len(document):
        chunk.append(document[i])
        length += len(document[i])
        if i == len(document) - 1 or length >= target:
            if chunk:
                a_end = rng.randint(1, len(chunk) - 1) if len(chunk) >= 2 else 1
                tokens_a = [t for seg in chunk[:a_end] for t in seg]
                tokens_b: list[str] = []
                if len(chunk) == 1 or rng.random() < 0.5:
                    is_random_next = True
                    target_b = target - len(tokens_a)
                    rand_index = doc_index
                    for _ in range(10):
                        rand_index = rng.randint(0, len(docs) - 1)
                        if rand_index != doc_index:
                            break
                    other = docs[rand_index].sentences
                    for seg in other[rng.randint(0, len(other) - 1):]:
                        tokens_b.extend(seg)
                        if len(tokens_b) >= target_b:
                            break
                    i -= len(chunk) - a_end
                else:
                    is_random_next = False
                    tokens_b = [t for seg in chunk[a_end:] for t in seg]
                _truncate_pair(tokens_a, tokens_b, max_tokens, rng)
                if tokens_a and tokens_b:
                    tokens = [CLS, *tokens_a, SEP, *tokens_b, SEP]
                    segment_ids = [0] * (len(tokens_a) + 2) + [1] * (len(tokens_b) + 1)
                    ids = [vocab.id_of(t) for t in tokens]
                    m = mask_tokens(ids, vocab, mlm_prob, max_predictions, rng, whole_word=whole_word)
                    inst = MlmInstance(m.token_ids, segment_ids, is_random_next, m.positions, m.label_ids)
                    out.append((inst, m.kinds) if with_kinds else inst)
            chunk = []
            length = 0
        i += 1
    return out


def build_instances(
    docs: Sequence[TokenizedDocument],
    vocab: WordpieceVocab,
    *,
    max_seq_len: int = MAX_SEQ_LEN,
    max_predictions: int = MAX_PREDICTIONS,
    mlm_prob: float = MLM_PROB,
    dupe_factor: int = DUPE_FACTOR,
    seed: int = 12345,
    short_seq_prob: float = SHORT_SEQ_PROB,
    whole_word: bool = False,
    shuffle: bool = True,
    with_kinds: bool = False,
) -> list:
    """All instances for ``dupe_factor`` passes over ``docs``.

    Output is ordered by (duplication round, document) and then shuffled with
    ``random.Random(seed)`` when ``shuffle`` is set.  ``with_kinds`` returns
    ``(instance, replacement kinds)`` pairs for diagnostics.
    """
    if max_predictions <= 0:
        raise ConfigError("max_predictions must be positive")
    if max_predictions > max_seq_len:
        raise ConfigError("max_predictions cannot exceed max_seq_len")
    if not 0.0 < mlm_prob < 1.0:
        raise ConfigError("mlm_prob must be in (0, 1)")
    if max_seq_len < 5:
        raise ConfigError("max_seq_len too small for [CLS] A [SEP] B [SEP]")
    docs = [d for d in docs if d.sentences]
    if not docs:
        raise DataError("cannot build pretraining instances from an empty corpus")
    instances = []
    for dupe in range(dupe_factor):
        for k, doc in enumerate(docs):
            rng = random.Random(stream_seed(seed, doc.id, dupe))
            instances.extend(
                instances_from_document(
                    docs, k, vocab, rng,
                    max_seq_len=max_seq_len, max_predictions=max_predictions, mlm_prob=mlm_prob,
                    short_seq_prob=short_seq_prob, whole_word=whole_word, with_kinds=with_kinds,
                )
            )
    if shuffle:
        random.Random(seed).shuffle(instances)
    return instances


def shard_name(language: str, index: int) -> str:
    return f"pretrain-{language}-{index:05}.jsonl"


def shard_instances(
    instances: Iterable[MlmInstance], out_dir: str | Path, chunk_bytes: int, *, language: str = "xx"
) -> list[Path]:
    """Write instances as JSON Lines shards of at most ``chunk_bytes`` each."""
    if chunk_bytes <= 0:
        raise ConfigError("chunk_bytes must be positive")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc
    paths: list[Path] = []
    buf: list[bytes] = []
    size = 0

    def flush() -> None:
        path = out_dir / shard_name(language, len(paths))
        with atomic_open(path, "wb") as fh:
            fh.write(b"".join(buf))
        paths.append(path)

    for inst in instances:
        line = inst.to_json().encode("utf-8")
        if len(line) > chunk_bytes:
            raise ConfigError(f"instance of {len(line)} bytes exceeds chunk size {chunk_bytes}")
        if buf and size + len(line) > chunk_bytes:
            flush()
            buf, size = [], 0
        buf.append(line)
        size += len(line)
    if buf:
        flush()
    return paths


def read_shards(paths: Iterable[str | Path]) -> Iterator[MlmInstance]:
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            for line in fh:
                yield MlmInstance.from_dict(json.loads(line))


@dataclass(frozen=True)
class PretrainBudget:
    steps: int
    batch_size: int
    seq_len: int
    corpus_subtokens: int

    @property
    def subtokens_seen(self) -> int:
        return self.steps * self.batch_size * self.seq_len

    @property
    def epochs(self) -> float:
        return self.subtokens_seen / self.corpus_subtokens

    @property
    def epochs_rounded(self) -> float:
        return round_half_away(self.epochs * 10) / 10

    def summary(self) -> str:
        return (
            f"{self.subtokens_seen / 1e9:.1f}B subtokens seen over a "
            f"{self.corpus_subtokens / 1e9:.1f}B-subtoken corpus = {self.epochs_rounded:.1f} epochs"
        )


def pretraining_budget(steps: int, batch_size: int, seq_len: int, corpus_subtokens: int) -> PretrainBudget:
    if corpus_subtokens <= 0:
        raise ConfigError("corpus_subtokens must be positive")
    if min(steps, batch_size, seq_len) <= 0:
        raise ConfigError("steps, batch_size and seq_len must be positive")
    return PretrainBudget(steps, batch_size, seq_len, corpus_subtokens)
