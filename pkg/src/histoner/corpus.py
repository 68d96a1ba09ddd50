"""Raw OCR corpus handling: ingestion, confidence filtering, per-year
character statistics, long-s normalization, upsampling and size balancing.

Documents travel as JSON Lines with the fields of :class:`Document`.  All
byte counts are UTF-8 bytes of ``text``; "GB" means 10**9 bytes.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from ._io import csv_text
from .errors import DataError

log = logging.getLogger(__name__)

GB = 10**9
LONG_S = "ſ"
UNKNOWN_YEAR = "unknown"


@dataclass(frozen=True)
class Document:
    id: str
    language: str
    text: str
    year: int | None = None
    word_confidences: tuple[float, ...] | None = None

    @property
    def n_bytes(self) -> int:
        return len(self.text.encode("utf-8"))

    @property
    def mean_confidence(self) -> float | None:
        if not self.word_confidences:
            return None
        return math.fsum(self.word_confidences) / len(self.word_confidences)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.word_confidences is not None:
            d["word_confidences"] = list(self.word_confidences)
        return d


@dataclass(frozen=True)
class RecordError:
    source: str
    line: int
    message: str

    def __str__(self) -> str:
        return f"{self.source}:{self.line}: {self.message}"


@dataclass
class IngestResult:
    documents: list[Document]
    errors: list[RecordError]

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)


def _validate_record(rec: object, languages: frozenset[str] | None) -> Document:
    if not isinstance(rec, dict):
        raise ValueError("record is not a JSON object")
    text = rec.get("text")
    lang = rec.get("language")
    if not isinstance(text, str):
        raise ValueError("missing or non-string 'text'")
    if not isinstance(lang, str) or not lang:
        raise ValueError("missing 'language'")
    if languages is not None and lang not in languages:
        raise ValueError(f"language {lang!r} not in configured set {sorted(languages)}")
    doc_id = rec.get("id")
    if doc_id is None:
        raise ValueError("missing 'id'")
    year = rec.get("year")
    if year is not None:
        if isinstance(year, bool) or not isinstance(year, (int, str)):
            raise ValueError(f"bad year {year!r}")
        try:
            year = int(year)
        except ValueError:
            raise ValueError(f"bad year {year!r}") from None
    confs = rec.get("word_confidences")
    if confs is not None:
        if not isinstance(confs, list):
            raise ValueError("'word_confidences' must be a list")
        confs = tuple(float(c) for c in confs)
        bad = [c for c in confs if not (0.0 <= c <= 1.0)]
        if bad:
            raise ValueError(f"confidence out of [0,1]: {bad[0]}")
        n_words = len(text.split())
        if len(confs) != n_words:
            raise ValueError(f"confidence count {len(confs)} != word count {n_words}")
    return Document(id=str(doc_id), language=lang, text=text, year=year, word_confidences=confs)


def ingest(
    path: str | Path,
    fmt: str = "jsonl",
    *,
    languages: Iterable[str] | None = None,
    language: str | None = None,
) -> IngestResult:
    """Read a corpus into documents sorted by id.

    ``fmt="jsonl"`` reads one Document per line; bad lines become
    :class:`RecordError` entries instead of being dropped silently.
    ``fmt="plaintext-dir"`` reads every ``*.txt`` file in a directory, using
    the file stem as id and ``language`` for all documents.
    """
    path = Path(path)
    langs = frozenset(languages) if languages is not None else None
    docs: list[Document] = []
    errors: list[RecordError] = []
    if fmt == "jsonl":
        if not path.is_file():
            raise DataError(f"cannot read corpus file: {path}")
        try:
            fh = open(path, encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read corpus file: {path}: {exc}") from exc
        with fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    docs.append(_validate_record(json.loads(line), langs))
                except (ValueError, TypeError) as exc:
                    errors.append(RecordError(str(path), lineno, str(exc)))
    elif fmt == "plaintext-dir":
        if not path.is_dir():
            raise DataError(f"not a directory: {path}")
        if not language:
            raise DataError("plaintext-dir ingestion needs a language")
        for f in sorted(path.glob("*.txt")):
            docs.append(Document(id=f.stem, language=language, text=f.read_text(encoding="utf-8")))
    else:
        raise ValueError(f"unknown corpus format {fmt!r}")
    docs.sort(key=lambda d: d.id)
    for err in errors:
        log.warning("skipping malformed record %s", err)
    return IngestResult(docs, errors)


def select(
    docs: Iterable[Document],
    *,
    languages: Iterable[str] | None = None,
    year_range: tuple[int, int] | None = None,
) -> Iterator[Document]:
    """Metadata predicates: language tag and inclusive publication year range."""
    langs = set(languages) if languages is not None else None
    for d in docs:
        if langs is not None and d.language not in langs:
            continue
        if year_range is not None and (d.year is None or not year_range[0] <= d.year <= year_range[1]):
            continue
        yield d


@dataclass
class FilterReport:
    threshold: float
    kept_bytes: int = 0
    dropped_bytes: int = 0
    unscored_bytes: int = 0
    kept_docs: int = 0
    dropped_docs: int = 0
    unscored_docs: int = 0

    @property
    def input_bytes(self) -> int:
        return self.kept_bytes + self.dropped_bytes + self.unscored_bytes

    def __add__(self, other: FilterReport) -> FilterReport:
        if other.threshold != self.threshold:
            raise ValueError("cannot merge reports for different thresholds")
        return FilterReport(
            self.threshold,
            self.kept_bytes + other.kept_bytes,
            self.dropped_bytes + other.dropped_bytes,
            self.unscored_bytes + other.unscored_bytes,
            self.kept_docs + other.kept_docs,
            self.dropped_docs + other.dropped_docs,
            self.unscored_docs + other.unscored_docs,
        )


def iter_filter(
    docs: Iterable[Document], threshold: float, report: FilterReport, *, unit: str = "document"
) -> Iterator[Document]:
    """Streaming confidence filter; ``report`` is updated as documents pass.

    With ``unit="document"`` a document survives iff its mean word confidence
    is at least ``threshold``.  With ``unit="word"`` low-confidence words are
    removed and the document is kept if any word survives.  Documents without
    confidences are always passed through and tallied as unscored.
    """
    if unit not in ("document", "word"):
        raise ValueError(f"unknown filter unit {unit!r}")
    for doc in docs:
        size = doc.n_bytes
        if not doc.word_confidences:
            report.unscored_bytes += size
            report.unscored_docs += 1
            yield doc
            continue
        if unit == "document":
            if doc.mean_confidence >= threshold:
                report.kept_bytes += size
                report.kept_docs += 1
                yield doc
            else:
                report.dropped_bytes += size
                report.dropped_docs += 1
            continue
        pairs = [(w, c) for w, c in zip(doc.text.split(), doc.word_confidences) if c >= threshold]
        if not pairs:
            report.dropped_bytes += size
            report.dropped_docs += 1
            continue
        kept = Document(
            id=doc.id,
            language=doc.language,
            year=doc.year,
            text=" ".join(w for w, _ in pairs),
            word_confidences=tuple(c for _, c in pairs),
        )
        report.kept_bytes += kept.n_bytes
        report.dropped_bytes += size - kept.n_bytes
        report.kept_docs += 1
        yield kept


def filter_by_confidence(
    docs: Iterable[Document], threshold: float, *, unit: str = "document"
) -> tuple[list[Document], FilterReport]:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0,1], got {threshold}")
    report = FilterReport(threshold)
    kept = list(iter_filter(docs, threshold, report, unit=unit))
    return kept, report


@dataclass
class CorpusStats:
    chars_per_year: Counter = field(default_factory=Counter)
    total_chars: int = 0
    total_bytes: int = 0
    doc_count: int = 0

    def add(self, doc: Document) -> None:
        n = len(doc.text)
        self.chars_per_year[doc.year if doc.year is not None else UNKNOWN_YEAR] += n
        self.total_chars += n
        self.total_bytes += doc.n_bytes
        self.doc_count += 1

    def __add__(self, other: CorpusStats) -> CorpusStats:
        return CorpusStats(
            self.chars_per_year + other.chars_per_year,
            self.total_chars + other.total_chars,
            self.total_bytes + other.total_bytes,
            self.doc_count + other.doc_count,
        )

    def rows(self) -> list[tuple[int | str, int]]:
        years = sorted(k for k in self.chars_per_year if k != UNKNOWN_YEAR)
        rows = [(y, self.chars_per_year[y]) for y in years]
        if UNKNOWN_YEAR in self.chars_per_year:
            rows.append((UNKNOWN_YEAR, self.chars_per_year[UNKNOWN_YEAR]))
        return rows

    def to_csv(self) -> str:
        return csv_text(["year", "chars"], self.rows())


def chars_per_year(docs: Iterable[Document]) -> CorpusStats:
    """Histogram of unicode code points per publication year."""
    stats = CorpusStats()
    for doc in docs:
        stats.add(doc)
    return stats


def upsample_factor(corpus_bytes: int, target_bytes: int) -> int:
    if corpus_bytes <= 0:
        raise ValueError("cannot upsample an empty corpus")
    if target_bytes < 0:
        raise ValueError("target_bytes must be non-negative")
    return max(1, -(-target_bytes // corpus_bytes))


def upsample(docs: Sequence[Document], n: int) -> Iterator[Document]:
    """Concatenate the document sequence ``n`` times, in order."""
    for _ in range(n):
        yield from docs


@dataclass(frozen=True)
class BalanceRow:
    language: str
    bytes: int
    share: float
    flagged: bool


def balance_report(per_language_bytes: Mapping[str, int], ratio: float = 0.5) -> list[BalanceRow]:
    """Per-language sizes and shares.

    A language is flagged when its size differs from the mean language size
    by more than ``ratio`` times that mean.
    """
    if not per_language_bytes:
        raise ValueError("balance report needs at least one language")
    total = sum(per_language_bytes.values())
    mean = total / len(per_language_bytes)
    rows = []
    for lang in sorted(per_language_bytes):
        b = per_language_bytes[lang]
        share = b / total if total else 0.0
        flagged = mean > 0 and abs(b - mean) > ratio * mean
        rows.append(BalanceRow(lang, b, share, flagged))
    return rows


def balance_csv(rows: Sequence[BalanceRow]) -> str:
    body = [(r.language, r.bytes, f"{r.share:.6f}") for r in rows]
    body.append(("total", sum(r.bytes for r in rows), "1.000000"))
    return csv_text(["language", "bytes", "share"], body)


def normalize_long_s(text: str) -> str:
    return text.replace(LONG_S, "s")
