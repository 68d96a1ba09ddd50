"""Attribute-aided evaluation.

Test entities (or sentences) get an attribute value computed against the
training set, are split into equal-frequency buckets, and each bucket is
scored with strict F1.  The report correlates bucket mean attribute value
with bucket F1 (Spearman, average ranks for ties), tests the correlation
with an exact two-sided permutation test over bucket orderings and gives
the population standard deviation of the bucket F1s.

Attributes:

    tCon  share of the token's most frequent training label (entity: mean over tokens)
    eCon  same for the whole entity surface form; non-entity occurrences count as "O"
    tFre  training frequency of the token (entity: mean over tokens)
    eFre  training frequency of the entity surface form as a token n-gram
    eLen  entity length in tokens
    sLen  sentence length in tokens
    oDen  fraction of sentence tokens never seen in training
    eDen  fraction of sentence tokens inside a gold entity
"""

from __future__ import annotations

import itertools
import json
import math
import random
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

from ._io import csv_text
from .ner_corpus import OUTSIDE, AnnotatedSentence, EntitySpan, spans_from_iob
from .scorer import Counts, check_alignment, match_strict

ENTITY_KINDS = ("tCon", "eCon", "tFre", "eFre", "eLen")
SENTENCE_KINDS = ("sLen", "oDen", "eDen")
KINDS = ENTITY_KINDS + SENTENCE_KINDS
EXACT_PERMUTATION_LIMIT = 8
ALPHA = 0.05


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown attribute {kind!r}; expected one of {KINDS}")


class TrainingStats:
    """Token and entity-surface statistics of a training set."""

    def __init__(self, train: Sequence[AnnotatedSentence]):
        self.train = train
        self.token_labels: dict[str, Counter] = defaultdict(Counter)
        for s in train:
            for tok, lab in zip(s.tokens, s.labels):
                self.token_labels[tok][lab] += 1
        self._surface: dict[tuple[str, ...], Counter] = {}

    def token_frequency(self, tok: str) -> int:
        c = self.token_labels.get(tok)
        return sum(c.values()) if c else 0

    def token_consistency(self, tok: str) -> float:
        c = self.token_labels.get(tok)
        if not c:
            return 0.0
        return max(c.values()) / sum(c.values())

    def seen(self, tok: str) -> bool:
        return tok in self.token_labels

    def prepare_surfaces(self, surfaces: set[tuple[str, ...]]) -> None:
        todo = {s for s in surfaces if s not in self._surface}
        if not todo:
            return
        for s in todo:
            self._surface[s] = Counter()
        lengths = sorted({len(s) for s in todo})
        for sent in self.train:
            span_type = {(sp.start, sp.end): sp.type for sp in spans_from_iob(sent.labels)}
            toks = sent.tokens
            for n in lengths:
                for i in range(len(toks) - n + 1):
                    key = tuple(toks[i:i + n])
                    if key in todo:
                        self._surface[key][span_type.get((i, i + n), OUTSIDE)] += 1

    def surface_counter(self, surface: tuple[str, ...]) -> Counter:
        if surface not in self._surface:
            self.prepare_surfaces({surface})
        return self._surface[surface]


def span_value(kind: str, sentence: AnnotatedSentence, span: EntitySpan, stats: TrainingStats) -> float:
    toks = sentence.tokens[span.start:span.end]
    if kind == "eLen":
        return float(len(toks))
    if kind == "tCon":
        return sum(stats.token_consistency(t) for t in toks) / len(toks)
    if kind == "tFre":
        return sum(stats.token_frequency(t) for t in toks) / len(toks)
    c = stats.surface_counter(tuple(toks))
    total = sum(c.values())
    if kind == "eFre":
        return float(total)
    if kind == "eCon":
        return max(c.values()) / total if total else 0.0
    raise ValueError(f"{kind!r} is not an entity-level attribute")


def sentence_value(kind: str, sentence: AnnotatedSentence, stats: TrainingStats) -> float:
    n = len(sentence.tokens)
    if kind == "sLen":
        return float(n)
    if n == 0:
        return 0.0
    if kind == "oDen":
        return sum(1 for t in sentence.tokens if not stats.seen(t)) / n
    if kind == "eDen":
        return sum(len(s) for s in spans_from_iob(sentence.labels)) / n
    raise ValueError(f"{kind!r} is not a sentence-level attribute")


def compute_attribute(
    kind: str,
    train: Sequence[AnnotatedSentence],
    test: Sequence[AnnotatedSentence],
    stats: TrainingStats | None = None,
) -> list[float]:
    """One value per gold test entity (reading order) or per test sentence."""
    _check_kind(kind)
    stats = stats or TrainingStats(train)
    if kind in SENTENCE_KINDS:
        return [sentence_value(kind, s, stats) for s in test]
    spans = [(s, sp) for s in test for sp in spans_from_iob(s.labels)]
    if kind in ("eCon", "eFre"):
        stats.prepare_surfaces({tuple(s.tokens[sp.start:sp.end]) for s, sp in spans})
    return [span_value(kind, s, sp, stats) for s, sp in spans]


@dataclass
class Bucketing:
    assignment: list[int]
    edges: list[tuple[float, float]]
    requested: int

    @property
    def n_buckets(self) -> int:
        return len(self.edges)

    @property
    def collapsed(self) -> bool:
        return self.n_buckets < self.requested

    def bucket_of(self, value: float) -> int:
        """Bucket for a value that was not part of the bucketed sample."""
        for k, (_, hi) in enumerate(self.edges):
            if value <= hi:
                return k
        return len(self.edges) - 1


def bucketize(values: Sequence[float], n_buckets: int = 4) -> Bucketing:
    """Equal-frequency buckets over sorted values; a tie run always lands
    entirely in the lowest bucket it touches, so buckets may collapse."""
    if n_buckets < 2:
        raise ValueError("n_buckets must be at least 2")
    if not values:
        raise ValueError("cannot bucketize an empty list")
    s = sorted(values)
    n = len(s)
    uppers: list[float] = []
    for i in range(1, n_buckets):
        c = math.ceil(i * n / n_buckets)
        if c == 0:
            continue
        edge = s[c - 1]
        if edge == s[-1]:
            break
        if uppers and edge <= uppers[-1]:
            continue
        uppers.append(edge)
    uppers.append(s[-1])

    def which(v: float) -> int:
        for k, hi in enumerate(uppers):
            if v <= hi:
                return k
        return len(uppers) - 1

    assignment = [which(v) for v in values]
    edges = []
    for k, hi in enumerate(uppers):
        lo = min(v for v, a in zip(values, assignment) if a == k)
        edges.append((lo, hi))
    if len(edges) < n_buckets:
        warnings.warn(
            f"only {len(edges)} of {n_buckets} buckets are populated after tie collapsing",
            stacklevel=2,
        )
    return Bucketing(assignment, edges, n_buckets)


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks, tied values share the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        r = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = r
        i = j + 1
    return ranks


def _pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    sxx = sum(a * a for a in dx)
    syy = sum(b * b for b in dy)
    if sxx == 0 or syy == 0:
        return None
    return sum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson correlation of average ranks; ``None`` when either side is constant."""
    if len(x) != len(y):
        raise ValueError("spearman_rho needs equal-length inputs")
    if len(x) < 2:
        return None
    rho = _pearson(average_ranks(x), average_ranks(y))
    return None if rho is None else max(-1.0, min(1.0, rho))


def permutation_p_value(
    x: Sequence[float], y: Sequence[float], *, n_resamples: int = 20000, seed: int = 0
) -> float | None:
    """Two-sided permutation p-value of Spearman's rho.

    Exact enumeration of all orderings up to ``EXACT_PERMUTATION_LIMIT``
    units, otherwise a seeded Monte Carlo estimate.
    """
    observed = spearman_rho(x, y)
    if observed is None:
        return None
    rx, ry = average_ranks(x), average_ranks(y)
    n = len(x)
    mx, my = sum(rx) / n, sum(ry) / n
    dx = [a - mx for a in rx]
    dy = [b - my for b in ry]
    norm = math.sqrt(sum(a * a for a in dx) * sum(b * b for b in dy))
    target = abs(observed) - 1e-12

    def extreme(perm: Sequence[float]) -> bool:
        return abs(sum(a * b for a, b in zip(dx, perm)) / norm) >= target

    if n <= EXACT_PERMUTATION_LIMIT:
        hits = total = 0
        for perm in itertools.permutations(dy):
            total += 1
            hits += extreme(perm)
        return hits / total
    rng = random.Random(seed)
    perm = list(dy)
    hits = 0
    for _ in range(n_resamples):
        rng.shuffle(perm)
        hits += extreme(perm)
    return (hits + 1) / (n_resamples + 1)


def _pstdev(xs: Sequence[float]) -> float:
    if not xs:
        return 0.0
    m = sum(xs) / len(xs)
    return math.sqrt(sum((v - m) ** 2 for v in xs) / len(xs))


@dataclass
class BucketRow:
    index: int
    lo: float
    hi: float
    count: int
    mean_value: float
    counts: Counts
    flagged: bool = False

    @property
    def f1(self) -> float:
        return self.counts.f1


@dataclass
class BucketReport:
    attribute: str
    buckets: list[BucketRow]
    spearman_rho: float | None
    p_value: float | None
    f1_stddev: float
    level: str = "bucket"
    alpha: float = ALPHA
    warnings: list[str] = field(default_factory=list)

    @property
    def bucket_edges(self) -> list[float]:
        return [b.hi for b in self.buckets]

    @property
    def significant(self) -> bool:
        return self.p_value is not None and self.p_value < self.alpha

    def rows(self) -> list[tuple]:
        return [
            (self.attribute, b.index, f"{b.lo:g}", f"{b.hi:g}", b.count, f"{b.f1:.4f}")
            for b in self.buckets
        ]

    def summary(self) -> dict:
        return {
            "attribute": self.attribute,
            "level": self.level,
            "spearman_rho": self.spearman_rho,
            "p_value": self.p_value,
            "f1_stddev": self.f1_stddev,
            "significant": self.significant,
            "flagged_buckets": [b.index for b in self.buckets if b.flagged],
            "warnings": self.warnings,
        }


def reports_csv(reports: Sequence[BucketReport]) -> str:
    return csv_text(
        ["attribute", "bucket", "lo", "hi", "count", "f1"],
        [row for r in reports for row in r.rows()],
    )


def reports_json(reports: Sequence[BucketReport]) -> str:
    return json.dumps([r.summary() for r in reports], indent=2) + "\n"


def attribute_report(
    kind: str,
    gold: Sequence[AnnotatedSentence],
    pred: Sequence[AnnotatedSentence],
    train: Sequence[AnnotatedSentence],
    n_buckets: int = 4,
    *,
    level: str = "bucket",
    alpha: float = ALPHA,
    seed: int = 0,
) -> BucketReport:
    """Bucketed strict F1 for one attribute.

    Entity attributes: a gold entity counts TP/FN in its own bucket; an
    unmatched prediction counts FP in the bucket its own attribute value
    falls into.  Sentence attributes: every sentence contributes all its
    strict counts to its bucket.  Buckets without gold entities are flagged
    and left out of the correlation and spread.  ``level="raw"`` correlates
    the per-unit attribute values with per-unit outcomes instead.
    """
    _check_kind(kind)
    if level not in ("bucket", "raw"):
        raise ValueError(f"unknown level {level!r}")
    check_alignment(gold, pred)
    stats = TrainingStats(train)
    gold_spans = [spans_from_iob(s.labels) for s in gold]
    pred_spans = [spans_from_iob(s.labels) for s in pred]
    matches = [match_strict(g, p) for g, p in zip(gold_spans, pred_spans)]

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if kind in SENTENCE_KINDS:
            values = [sentence_value(kind, s, stats) for s in gold]
            if not values:
                raise ValueError("no test sentences to evaluate")
            bk = bucketize(values, n_buckets)
            counts = [Counts() for _ in bk.edges]
            unit_outcome = []
            for k, (g, p, m) in enumerate(zip(gold_spans, pred_spans, matches)):
                c = Counts(len(m), len(p) - len(m), len(g) - len(m))
                counts[bk.assignment[k]] += c
                unit_outcome.append(c.f1)
            gold_in_bucket = [c.gold for c in counts]
        else:
            if kind in ("eCon", "eFre"):
                stats.prepare_surfaces({
                    tuple(s.tokens[sp.start:sp.end])
                    for sents, all_spans in ((gold, gold_spans), (pred, pred_spans))
                    for s, spans in zip(sents, all_spans)
                    for sp in spans
                })
            units = [(k, i) for k, g in enumerate(gold_spans) for i in range(len(g))]
            values = [span_value(kind, gold[k], gold_spans[k][i], stats) for k, i in units]
            if not values:
                raise ValueError("no gold entities to evaluate")
            bk = bucketize(values, n_buckets)
            counts = [Counts() for _ in bk.edges]
            unit_outcome = []
            matched_gold = [{i for i, _ in m} for m in matches]
            matched_pred = [{j for _, j in m} for m in matches]
            for u, (k, i) in enumerate(units):
                hit = i in matched_gold[k]
                b = bk.assignment[u]
                counts[b] += Counts(tp=1) if hit else Counts(fn=1)
                unit_outcome.append(1.0 if hit else 0.0)
            for k, p in enumerate(pred_spans):
                for j, sp in enumerate(p):
                    if j not in matched_pred[k]:
                        counts[bk.bucket_of(span_value(kind, pred[k], sp, stats))] += Counts(fp=1)
            gold_in_bucket = [c.gold for c in counts]
    notes = [str(w.message) for w in caught]

    buckets = []
    for b, (lo, hi) in enumerate(bk.edges):
        members = [v for v, a in zip(values, bk.assignment) if a == b]
        buckets.append(BucketRow(
            index=b, lo=lo, hi=hi, count=len(members),
            mean_value=sum(members) / len(members), counts=counts[b],
            flagged=gold_in_bucket[b] == 0,
        ))
    usable = [b for b in buckets if not b.flagged]
    if any(b.flagged for b in buckets):
        notes.append("buckets without gold entities excluded from correlation")
    f1s = [b.f1 for b in usable]
    if level == "bucket":
        xs = [b.mean_value for b in usable]
        ys = f1s
        rho = spearman_rho(xs, ys) if len(set(ys)) >= 2 else None
        p = permutation_p_value(xs, ys, seed=seed) if rho is not None else None
    else:
        rho = spearman_rho(values, unit_outcome)
        p = permutation_p_value(values, unit_outcome, seed=seed) if rho is not None else None
    return BucketReport(kind, buckets, rho, p, _pstdev(f1s), level, alpha, notes)
