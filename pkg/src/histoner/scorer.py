"""Entity-level precision/recall/F1 under strict and fuzzy matching.

Strict: a prediction is correct iff a gold span has the same boundaries and
type.  Fuzzy: same type and at least one shared token; gold spans are taken
in reading order and each matched to the first unmatched overlapping
prediction.  Matching is one-to-one in both regimes.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ._io import csv_text
from .errors import DataError
from .ner_corpus import AnnotatedSentence, EntitySpan, spans_from_iob

STRICT, FUZZY = "strict", "fuzzy"
REGIMES = (STRICT, FUZZY)
ALL = "ALL"
METRICS = ("precision", "recall", "f1")


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def gold(self) -> int:
        return self.tp + self.fn

    @property
    def pred(self) -> int:
        return self.tp + self.fp

    @property
    def precision(self) -> float:
        return self.tp / self.pred if self.pred else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: Counts) -> Counts:
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
        }


@dataclass
class RegimeScores:
    regime: str
    micro: Counts = field(default_factory=Counts)
    per_type: dict[str, Counts] = field(default_factory=dict)


@dataclass
class EvalReport:
    regimes: dict[str, RegimeScores]
    n_sentences: int = 0

    def __getitem__(self, regime: str) -> RegimeScores:
        return self.regimes[regime]

    def f1(self, regime: str = STRICT, etype: str = ALL) -> float:
        r = self.regimes[regime]
        return (r.micro if etype == ALL else r.per_type[etype]).f1

    def to_dict(self) -> dict:
        return {
            "n_sentences": self.n_sentences,
            **{
                name: {
                    "micro": r.micro.to_dict(),
                    "per_type": {t: c.to_dict() for t, c in sorted(r.per_type.items())},
                }
                for name, r in self.regimes.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def rows(self) -> list[tuple]:
        """``regime,type,precision,recall,f1,tp,fp,fn`` with percentages to one decimal."""
        out = []
        for name, r in self.regimes.items():
            items = [(ALL, r.micro)] + sorted(r.per_type.items())
            for etype, c in items:
                out.append((
                    name, etype, f"{100 * c.precision:.1f}", f"{100 * c.recall:.1f}",
                    f"{100 * c.f1:.1f}", c.tp, c.fp, c.fn,
                ))
        return out

    def to_csv(self) -> str:
        return csv_text(["regime", "type", "precision", "recall", "f1", "tp", "fp", "fn"], self.rows())


def match_strict(gold: Sequence[EntitySpan], pred: Sequence[EntitySpan]) -> list[tuple[int, int]]:
    """Index pairs ``(gold_i, pred_j)`` of exact matches, one-to-one."""
    free: dict[EntitySpan, list[int]] = {}
    for j, p in enumerate(pred):
        free.setdefault(p, []).append(j)
    pairs = []
    for i, g in enumerate(gold):
        js = free.get(g)
        if js:
            pairs.append((i, js.pop(0)))
    return pairs


def match_fuzzy(gold: Sequence[EntitySpan], pred: Sequence[EntitySpan]) -> list[tuple[int, int]]:
    g_order = sorted(range(len(gold)), key=lambda i: (gold[i].start, gold[i].end))
    p_order = sorted(range(len(pred)), key=lambda j: (pred[j].start, pred[j].end))
    used: set[int] = set()
    pairs = []
    for i in g_order:
        g = gold[i]
        for j in p_order:
            if j not in used and pred[j].type == g.type and pred[j].overlaps(g):
                used.add(j)
                pairs.append((i, j))
                break
    return pairs


MATCHERS = {STRICT: match_strict, FUZZY: match_fuzzy}


def _regimes(regime: str | Iterable[str]) -> tuple[str, ...]:
    if isinstance(regime, str):
        regs = REGIMES if regime == "both" else (regime,)
    else:
        regs = tuple(regime)
    for r in regs:
        if r not in MATCHERS:
            raise ValueError(f"unknown regime {r!r}")
    return regs


def score_spans(
    gold: Sequence[Sequence[EntitySpan]],
    pred: Sequence[Sequence[EntitySpan]],
    regime: str | Iterable[str] = "both",
) -> EvalReport:
    """Score per-sentence span lists; ``gold[k]`` and ``pred[k]`` belong together."""
    if len(gold) != len(pred):
        raise DataError(f"{len(gold)} gold sentences but {len(pred)} predicted")
    report = EvalReport({}, len(gold))
    for name in _regimes(regime):
        matcher = MATCHERS[name]
        tp: Counter = Counter()
        n_gold: Counter = Counter()
        n_pred: Counter = Counter()
        for g, p in zip(gold, pred):
            n_gold.update(s.type for s in g)
            n_pred.update(s.type for s in p)
            tp.update(g[i].type for i, _ in matcher(g, p))
        per_type = {
            t: Counts(tp[t], n_pred[t] - tp[t], n_gold[t] - tp[t])
            for t in sorted(set(n_gold) | set(n_pred))
        }
        micro = sum(per_type.values(), Counts())
        report.regimes[name] = RegimeScores(name, micro, per_type)
    return report


def check_alignment(gold: Sequence[AnnotatedSentence], pred: Sequence[AnnotatedSentence]) -> None:
    if len(gold) != len(pred):
        raise DataError(f"gold has {len(gold)} sentences, prediction has {len(pred)}")
    for k, (g, p) in enumerate(zip(gold, pred)):
        if g.tokens != p.tokens:
            detail = next(
                (f"token {i}: {a!r} vs {b!r}" for i, (a, b) in enumerate(zip(g.tokens, p.tokens)) if a != b),
                f"length {len(g.tokens)} vs {len(p.tokens)}",
            )
            raise DataError(f"sentence {k} is misaligned ({detail})")


def score(
    gold: Sequence[AnnotatedSentence],
    pred: Sequence[AnnotatedSentence],
    regime: str | Iterable[str] = "both",
) -> EvalReport:
    check_alignment(gold, pred)
    return score_spans(
        [spans_from_iob(s.labels) for s in gold],
        [spans_from_iob(s.labels) for s in pred],
        regime,
    )


def strict_micro_f1(gold: Sequence[AnnotatedSentence], pred: Sequence[AnnotatedSentence]) -> float:
    return score(gold, pred, STRICT).f1(STRICT)


def report_diff(a: EvalReport, b: EvalReport) -> dict[tuple[str, str, str], float]:
    """Cell-wise ``a - b`` in percentage points for every shared regime/type."""
    delta = {}
    for name in a.regimes:
        if name not in b.regimes:
            raise ValueError(f"regime {name!r} missing from second report")
        ra, rb = a[name], b[name]
        cells = [(ALL, ra.micro, rb.micro)]
        cells += [(t, ra.per_type[t], rb.per_type.get(t, Counts())) for t in sorted(ra.per_type)]
        cells += [(t, Counts(), rb.per_type[t]) for t in sorted(set(rb.per_type) - set(ra.per_type))]
        for etype, ca, cb in cells:
            for m in METRICS:
                delta[(name, etype, m)] = 100 * (getattr(ca, m) - getattr(cb, m))
    return delta


def diff_rows(delta: dict[tuple[str, str, str], float]) -> list[tuple[str, str, str, str]]:
    return [(r, t, m, f"{v:+.2f}") for (r, t, m), v in sorted(delta.items())]
