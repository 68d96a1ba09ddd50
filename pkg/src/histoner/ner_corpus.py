"""NER datasets: HIPE-2022 TSV and two-column CoNLL readers, IOB span
extraction and multilingual merging."""

from __future__ import annotations

import json
import logging
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ._io import atomic_open, dumps_line
from .corpus import normalize_long_s as _normalize_long_s
from .errors import DataError

log = logging.getLogger(__name__)

DEFAULT_COLUMN = "NE-COARSE-LIT"
TOKEN_COLUMN = "TOKEN"
MISC_COLUMN = "MISC"
OUTSIDE = "O"
DOC_MARKER = "# hipe2022:document_id"
SEGMENT_MARKER = "# segment"


@dataclass
class AnnotatedSentence:
    tokens: list[str]
    labels: list[str]
    language: str = ""
    doc_id: str = ""

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.labels):
            raise DataError(f"{len(self.tokens)} tokens but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.tokens)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, order=True)
class EntitySpan:
    start: int
    end: int
    type: str

    def overlaps(self, other: EntitySpan) -> bool:
        return self.start < other.end and other.start < self.end

    def __len__(self) -> int:
        return self.end - self.start


@dataclass
class Repair:
    position: int
    original: str
    replacement: str


def split_label(label: str) -> tuple[str, str | None]:
    """``"B-pers"`` -> ``("B", "pers")``; ``"O"`` -> ``("O", None)``."""
    if label in (OUTSIDE, "_", ""):
        return OUTSIDE, None
    prefix, sep, etype = label.partition("-")
    if not sep or prefix not in ("B", "I") or not etype:
        raise DataError(f"not an IOB label: {label!r}")
    return prefix, etype


def spans_from_iob(
    labels: Sequence[str], repairs: list[Repair] | None = None
) -> list[EntitySpan]:
    """Maximal ``B-X (I-X)*`` runs as half-open spans.

    An ``I-X`` that does not continue an ``X`` entity is read as ``B-X``; each
    such upgrade is appended to ``repairs`` when a list is given.
    """
    spans: list[EntitySpan] = []
    start, cur = None, None
    for i, label in enumerate(labels):
        prefix, etype = split_label(label)
        if prefix == "I" and cur != etype:
            if repairs is not None:
                repairs.append(Repair(i, label, f"B-{etype}"))
            prefix = "B"
        if prefix == "I":
            continue
        if cur is not None:
            spans.append(EntitySpan(start, i, cur))
            start, cur = None, None
        if prefix == "B":
            start, cur = i, etype
    if cur is not None:
        spans.append(EntitySpan(start, len(labels), cur))
    return spans


def spans_to_iob(spans: Iterable[EntitySpan], length: int) -> list[str]:
    labels = [OUTSIDE] * length
    for s in spans:
        if not 0 <= s.start < s.end <= length:
            raise ValueError(f"span {s} outside sentence of length {length}")
        labels[s.start] = f"B-{s.type}"
        for i in range(s.start + 1, s.end):
            labels[i] = f"I-{s.type}"
    return labels


def repair_iob(labels: Sequence[str]) -> list[str]:
    return spans_to_iob(spans_from_iob(labels), len(labels))


def sentence_spans(sentence: AnnotatedSentence) -> list[EntitySpan]:
    return spans_from_iob(sentence.labels)


def _read_lines(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def parse_hipe_tsv(
    path: str | Path,
    column: str = DEFAULT_COLUMN,
    *,
    normalize_long_s: bool = False,
    language: str = "",
    split_on_segments: bool = False,
) -> list[AnnotatedSentence]:
    """Read a HIPE-2022 style TSV file.

    Sentences end at blank lines, at tokens whose MISC column contains
    ``EndOfSentence``, and at document boundaries (``# hipe2022:document_id``
    comments).  With ``split_on_segments`` a ``# segment...`` comment also
    closes the running sentence.
    """
    lines = _read_lines(path)
    header: list[str] | None = None
    sentences: list[AnnotatedSentence] = []
    doc_id = ""
    toks: list[str] = []
    labs: list[str] = []

    def close() -> None:
        nonlocal toks, labs
        if toks:
            sentences.append(AnnotatedSentence(toks, labs, language, doc_id))
        toks, labs = [], []

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            close()
            continue
        if line.startswith("#"):
            if line.startswith(DOC_MARKER):
                close()
                doc_id = line.split("=", 1)[1].strip() if "=" in line else ""
            elif split_on_segments and line.startswith(SEGMENT_MARKER):
                close()
            continue
        cells = line.split("\t")
        if header is None:
            header = cells
            if TOKEN_COLUMN not in header:
                raise DataError(f"{path}:{lineno}: header lacks a {TOKEN_COLUMN} column")
            if column not in header:
                raise DataError(f"{path}:{lineno}: no column named {column!r} (have {header})")
            tok_i, lab_i = header.index(TOKEN_COLUMN), header.index(column)
            misc_i = header.index(MISC_COLUMN) if MISC_COLUMN in header else None
            continue
        if len(cells) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} columns, found {len(cells)}")
        token = cells[tok_i]
        if normalize_long_s:
            token = _normalize_long_s(token)
        label = cells[lab_i]
        if label == "_":
            label = OUTSIDE
        try:
            split_label(label)
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        toks.append(token)
        labs.append(label)
        if misc_i is not None and "EndOfSentence" in cells[misc_i]:
            close()
    close()
    return sentences


def parse_conll(
    path: str | Path, *, normalize_long_s: bool = False, language: str = "", doc_id: str = ""
) -> list[AnnotatedSentence]:
    """Two-column ``token<TAB>tag`` files with blank-line sentence breaks."""
    sentences: list[AnnotatedSentence] = []
    toks: list[str] = []
    labs: list[str] = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip() or line.startswith("-DOCSTART-"):
            if toks:
                sentences.append(AnnotatedSentence(toks, labs, language, doc_id))
                toks, labs = [], []
            continue
        cells = line.split("\t")
        if len(cells) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 tab-separated columns, found {len(cells)}")
        token, label = cells
        try:
            split_label(label)
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        toks.append(_normalize_long_s(token) if normalize_long_s else token)
        labs.append(label)
    if toks:
        sentences.append(AnnotatedSentence(toks, labs, language, doc_id))
    return sentences


def load_dataset(path: str | Path, fmt: str | None = None, **kw) -> list[AnnotatedSentence]:
    """Dispatch on ``fmt`` or the file suffix (.tsv = HIPE, .conll/.txt = CoNLL, .jsonl)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    fmt = fmt or {".tsv": "hipe", ".jsonl": "jsonl"}.get(path.suffix, "conll")
    if fmt == "hipe":
        return parse_hipe_tsv(path, **kw)
    if fmt == "conll":
        kw.pop("column", None)
        return parse_conll(path, **kw)
    if fmt == "jsonl":
        return read_jsonl_dataset(path)
    raise ValueError(f"unknown dataset format {fmt!r}")


def write_hipe_tsv(sentences: Sequence[AnnotatedSentence], path: str | Path, column: str = DEFAULT_COLUMN) -> None:
    """Serialize back to TSV; every sentence end is marked ``EndOfSentence``."""
    with atomic_open(path) as fh:
        fh.write(f"{TOKEN_COLUMN}\t{column}\t{MISC_COLUMN}\n")
        doc = None
        for s in sentences:
            if s.doc_id != doc:
                doc = s.doc_id
                fh.write(f"{DOC_MARKER} = {doc}\n")
            for i, (t, l) in enumerate(zip(s.tokens, s.labels)):
                misc = "EndOfSentence" if i == len(s) - 1 else "_"
                fh.write(f"{t}\t{l}\t{misc}\n")


def write_jsonl_dataset(sentences: Iterable[AnnotatedSentence], path: str | Path) -> None:
    with atomic_open(path) as fh:
        for s in sentences:
            fh.write(dumps_line(s.to_dict()))


def read_jsonl_dataset(path: str | Path) -> list[AnnotatedSentence]:
    out = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if line.strip():
            try:
                out.append(AnnotatedSentence(**json.loads(line)))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def entity_types(sentences: Iterable[AnnotatedSentence]) -> set[str]:
    return {s.type for sent in sentences for s in spans_from_iob(sent.labels)}


def label_inventory(sentences: Iterable[AnnotatedSentence]) -> set[str]:
    return {l for s in sentences for l in s.labels}


@dataclass
class DatasetSummary:
    sentences: int = 0
    tokens: int = 0
    entities: Counter = field(default_factory=Counter)
    repairs: int = 0


def summarize(sentences: Iterable[AnnotatedSentence]) -> DatasetSummary:
    out = DatasetSummary()
    for s in sentences:
        repairs: list[Repair] = []
        out.sentences += 1
        out.tokens += len(s)
        out.entities.update(span.type for span in spans_from_iob(s.labels, repairs))
        out.repairs += len(repairs)
    return out


class LabelInventoryError(DataError):
    pass


def merge_multilingual(datasets: Sequence[Sequence[AnnotatedSentence]]) -> list[AnnotatedSentence]:
    """Concatenate datasets ordered by (language, doc_id), original order within.

    Differing entity-type sets are merged as a union with a warning.  Types
    that clash only in letter case are treated as a conflict.
    """
    inventories = [entity_types(d) for d in datasets]
    union = set().union(*inventories) if inventories else set()
    by_fold: dict[str, set[str]] = {}
    for t in union:
        by_fold.setdefault(t.casefold(), set()).add(t)
    clashes = {k: sorted(v) for k, v in by_fold.items() if len(v) > 1}
    if clashes:
        raise LabelInventoryError(f"conflicting entity type spellings: {clashes}")
    for i, inv in enumerate(inventories):
        missing = union - inv
        if missing:
            msg = f"dataset {i} lacks entity types {sorted(missing)}; using the union inventory"
            warnings.warn(msg, stacklevel=2)
            log.warning(msg)
    merged = [s for d in datasets for s in d]
    merged.sort(key=lambda s: (s.language, s.doc_id))
    return merged
