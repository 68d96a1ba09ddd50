"""Cased wordpiece vocabularies.

Training merges adjacent pieces by the likelihood score
``freq(xy) / (freq(x) * freq(y))`` until the vocabulary is full.  Tokenizing
is BERT-style: whitespace/punctuation pre-split, then greedy longest match
first with ``##`` continuation pieces.  Nothing is lowercased or
accent-stripped.
"""

from __future__ import annotations

import logging
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from ._io import csv_text, write_text_atomic
from .corpus import normalize_long_s
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PREFIX = "##"
MAX_WORD_CHARS = 100


def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def pre_tokenize(text: str) -> list[str]:
    """Split on unicode whitespace, then isolate every punctuation character."""
    words: list[str] = []
    for chunk in text.split():
        buf: list[str] = []
        for ch in chunk:
            if _is_punctuation(ch):
                if buf:
                    words.append("".join(buf))
                    buf = []
                words.append(ch)
            else:
                buf.append(ch)
        if buf:
            words.append("".join(buf))
    return words


class WordpieceVocab:
    """Ordered token inventory; the line index in ``vocab.txt`` is the id."""

    def __init__(self, tokens: Sequence[str], prefix: str = PREFIX):
        self.tokens = list(tokens)
        self.prefix = prefix
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            dupes = [t for t, n in Counter(self.tokens).items() if n > 1]
            raise DataError(f"duplicate vocabulary entries: {dupes[:5]}")
        if tuple(self.tokens[: len(SPECIALS)]) != SPECIALS:
            raise DataError(f"vocabulary must start with {SPECIALS}")
        for t in self.tokens:
            if not t or any(ch.isspace() for ch in t) or t == prefix:
                raise DataError(f"invalid vocabulary entry {t!r}")
        self._max_len = max((len(t) for t in self.tokens), default=1)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WordpieceVocab) and self.tokens == other.tokens

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def single_chars(self) -> tuple[set[str], set[str]]:
        """(word-initial characters, continuation characters) in the vocabulary."""
        initial, cont = set(), set()
        p = len(self.prefix)
        for t in self.tokens[len(SPECIALS):]:
            if t.startswith(self.prefix) and len(t) == p + 1:
                cont.add(t[p:])
            elif len(t) == 1:
                initial.add(t)
        return initial, cont

    def tokenize_word(self, word: str, max_chars: int = MAX_WORD_CHARS) -> list[str]:
        if max_chars and len(word) > max_chars:
            return [UNK]
        pieces: list[str] = []
        start, n = 0, len(word)
        while start < n:
            end = min(n, start + self._max_len)
            piece = None
            while start < end:
                sub = word[start:end] if start == 0 else self.prefix + word[start:end]
                if sub in self.index:
                    piece = sub
                    break
                end -= 1
            if piece is None:
                return [UNK]
            pieces.append(piece)
            start = end
        return pieces

    def tokenize(
        self, text: str, *, normalize_long_s: bool = False, max_chars: int = MAX_WORD_CHARS
    ) -> list[str]:
        if normalize_long_s:
            text = _normalize(text)
        out: list[str] = []
        for word in pre_tokenize(text):
            out.extend(self.tokenize_word(word, max_chars))
        return out

    def encode(self, text: str, **kw) -> list[int]:
        return [self.index[t] for t in self.tokenize(text, **kw)]

    def save(self, path: str | Path) -> None:
        write_text_atomic(path, "".join(t + "\n" for t in self.tokens))

    @classmethod
    def load(cls, path: str | Path) -> WordpieceVocab:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read vocabulary {path}: {exc}") from exc
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))


_normalize = normalize_long_s


def tokenize(text: str, vocab: WordpieceVocab, **kw) -> list[str]:
    return vocab.tokenize(text, **kw)


def count_words(texts: Iterable[str], *, normalize_long_s: bool = False) -> Counter:
    """Pre-tokenized word frequencies; shards merge with ``Counter.__add__``."""
    counts: Counter = Counter()
    for text in texts:
        if normalize_long_s:
            text = _normalize(text)
        counts.update(pre_tokenize(text))
    return counts


def _initial_split(word: str) -> list[str]:
    return [word[0]] + [PREFIX + ch for ch in word[1:]]


def _pairs(split: list[str]) -> Iterator[tuple[str, str]]:
    return zip(split, split[1:])


def train_vocab(
    texts: Iterable[str] | Mapping[str, int],
    vocab_size: int,
    min_frequency: int = 2,
    *,
    normalize_long_s: bool = False,
) -> WordpieceVocab:
    """Train a cased wordpiece vocabulary.

    ``texts`` is either raw text or an already-merged word-frequency mapping.
    The whole character alphabet is always included.  Each step merges the
    pair with the highest ``freq(xy) / (freq(x) * freq(y))`` among pairs seen
    at least ``min_frequency`` times, ties broken by the lexicographically
    smallest pair.  Stops at ``vocab_size`` tokens or when no pair qualifies.
    """
    if min_frequency < 1:
        raise ConfigError("min_frequency must be positive")
    word_counts = Counter(texts) if isinstance(texts, Mapping) else count_words(
        texts, normalize_long_s=normalize_long_s
    )
    if not word_counts:
        raise DataError("cannot train a vocabulary on an empty corpus")

    words = sorted(word_counts)
    freqs = [word_counts[w] for w in words]
    splits = [_initial_split(w) for w in words]
    alphabet = sorted({p for s in splits for p in s})
    if vocab_size < len(SPECIALS) + len(alphabet):
        raise ConfigError(
            f"vocab_size {vocab_size} is smaller than specials + alphabet "
            f"({len(SPECIALS)} + {len(alphabet)})"
        )
    tokens = list(SPECIALS) + alphabet
    known = set(tokens)

    piece_freq: Counter = Counter()
    pair_freq: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)

    def account(i: int, sign: int) -> None:
        f = freqs[i] * sign
        split = splits[i]
        for p in split:
            piece_freq[p] += f
        for pair in _pairs(split):
            pair_freq[pair] += f
            if sign > 0:
                where[pair].add(i)

    for i in range(len(words)):
        account(i, +1)

    while len(tokens) < vocab_size:
        best = None
        best_num = best_den = 0
        for pair, f in pair_freq.items():
            if f < min_frequency:
                continue
            den = piece_freq[pair[0]] * piece_freq[pair[1]]
            # exact rational comparison f/den vs best_num/best_den
            lhs, rhs = f * best_den, best_num * den
            if best is None or lhs > rhs or (lhs == rhs and pair < best):
                best, best_num, best_den = pair, f, den
        if best is None:
            break
        a, b = best
        merged = a + b[len(PREFIX):]
        for i in sorted(where.pop(best, ())):
            split = splits[i]
            if not any(p == best for p in _pairs(split)):
                continue
            account(i, -1)
            new: list[str] = []
            j = 0
            while j < len(split):
                if j + 1 < len(split) and split[j] == a and split[j + 1] == b:
                    new.append(merged)
                    j += 2
                else:
                    new.append(split[j])
                    j += 1
            splits[i] = new
            account(i, +1)
        for key in [k for k, v in pair_freq.items() if v == 0]:
            del pair_freq[key]
            where.pop(key, None)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    log.info("trained wordpiece vocabulary with %d tokens", len(tokens))
    return WordpieceVocab(tokens)


@dataclass
class TokenizerStats:
    word_count: int = 0
    subword_count: int = 0
    unk_count: int = 0

    @property
    def sfr(self) -> float:
        if self.word_count == 0:
            raise ZeroDivisionError("subword fertility of an empty dataset is undefined")
        return self.subword_count / self.word_count

    @property
    def unk_portion(self) -> float:
        if self.subword_count == 0:
            raise ZeroDivisionError("UNK portion of an empty dataset is undefined")
        return self.unk_count / self.subword_count

    def __add__(self, other: TokenizerStats) -> TokenizerStats:
        return TokenizerStats(
            self.word_count + other.word_count,
            self.subword_count + other.subword_count,
            self.unk_count + other.unk_count,
        )


def tokenizer_stats(
    sentences: Iterable[Sequence[str]],
    vocab: WordpieceVocab,
    *,
    normalize_long_s: bool = False,
    max_chars: int = MAX_WORD_CHARS,
) -> TokenizerStats:
    """Subword fertility and UNK portion over pre-tokenized sentences.

    Each dataset word is run through the full tokenizer (so embedded
    punctuation splits too); words that produce no pieces are not counted.
    """
    stats = TokenizerStats()
    for sent in sentences:
        for word in sent:
            pieces = vocab.tokenize(word, normalize_long_s=normalize_long_s, max_chars=max_chars)
            if not pieces:
                continue
            stats.word_count += 1
            stats.subword_count += len(pieces)
            stats.unk_count += sum(1 for p in pieces if p == UNK)
    if stats.word_count == 0:
        raise DataError("tokenizer statistics need at least one word")
    return stats


def stats_by_language(
    datasets: Mapping[str, Iterable[Sequence[str]]], vocab: WordpieceVocab, **kw
) -> dict[str, TokenizerStats]:
    return {lang: tokenizer_stats(sents, vocab, **kw) for lang, sents in sorted(datasets.items())}


def stats_csv(per_language: Mapping[str, TokenizerStats]) -> str:
    rows = [
        (lang, f"{s.sfr:.4f}", f"{s.unk_portion:.6f}", s.word_count, s.subword_count, s.unk_count)
        for lang, s in per_language.items()
    ]
    return csv_text(["language", "sfr", "unk_portion", "words", "subwords", "unks"], rows)
