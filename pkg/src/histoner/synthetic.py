"""Small deterministic datasets for tests, demos and the acceptance suite."""

from __future__ import annotations

import random
from typing import Sequence

from .corpus import Document
from .ner_corpus import OUTSIDE, AnnotatedSentence

PERSONS = ("Anna", "Karl", "Marie", "Johann", "Louise", "Pierre", "Heinrich", "Sophie")
PLACES = ("Paris", "Berlin", "Genf", "Lyon", "Bern", "Wien", "Basel", "Rouen")
ORGS = ("Ullstein", "Havas", "Reuters", "Cotta")

_TEMPLATES = {
    "de": ("{P} wohnt in {L} .", "Der Verlag {O} sitzt in {L} .", "Gestern kam {P} nach {L} zurück .",
           "{P} schrieb an {P2} ."),
    "fr": ("{P} habite à {L} .", "La maison {O} est à {L} .", "Hier {P} est rentré à {L} .",
           "{P} a écrit à {P2} ."),
    "en": ("{P} lives in {L} .", "The firm {O} is in {L} .", "Yesterday {P} returned to {L} .",
           "{P} wrote to {P2} ."),
}

_TYPES = {"P": "pers", "P2": "pers", "L": "loc", "O": "org"}


def _fill(template: str, rng: random.Random, persons: Sequence[str], places: Sequence[str]) -> tuple[list, list]:
    tokens, labels = [], []
    for word in template.split():
        slot = word[1:-1] if word.startswith("{") else None
        if slot is None:
            tokens.append(word)
            labels.append(OUTSIDE)
            continue
        pool = {"P": persons, "P2": persons, "L": places, "O": ORGS}[slot]
        tokens.append(rng.choice(pool))
        labels.append(f"B-{_TYPES[slot]}")
    return tokens, labels


def tagging_sentences(
    n: int,
    *,
    language: str = "de",
    seed: int = 0,
    persons: Sequence[str] = PERSONS,
    places: Sequence[str] = PLACES,
) -> list[AnnotatedSentence]:
    """Template sentences whose entities are drawn from closed name lists."""
    rng = random.Random(f"{language}:{seed}")
    templates = _TEMPLATES[language]
    out = []
    for k in range(n):
        tokens, labels = _fill(templates[k % len(templates)], rng, persons, places)
        out.append(AnnotatedSentence(tokens, labels, language, f"{language}-{seed}-{k // 5:03d}"))
    return out


def separable_tagging(seed: int = 0) -> tuple[list[AnnotatedSentence], list[AnnotatedSentence]]:
    """20 training and 10 development sentences that a linear tagger can fit exactly."""
    return tagging_sentences(20, seed=seed), tagging_sentences(10, seed=seed + 1000)


def transferable_tagging(
    languages: Sequence[str] = ("de", "fr"), n_train: int = 12, n_dev: int = 12, seed: int = 0
) -> dict[str, tuple[list[AnnotatedSentence], list[AnnotatedSentence]]]:
    """Per-language (train, dev) pairs sharing the same entity inventory.

    Each language sees only half the names in its own training data while
    its dev set uses all of them, so a model trained on the merged languages
    carries knowledge across.
    """
    out = {}
    for k, lang in enumerate(languages):
        half = slice(0, 4) if k % 2 == 0 else slice(4, 8)
        train = tagging_sentences(n_train, language=lang, seed=seed, persons=PERSONS[half], places=PLACES[half])
        dev = tagging_sentences(n_dev, language=lang, seed=seed + 1000)
        out[lang] = (train, dev)
    return out


_WORDS = (
    "die", "Zeitung", "berichtet", "über", "den", "Markt", "in", "der", "Stadt", "und", "das",
    "Wetter", "am", "Sonntag", "mit", "einem", "Artikel", "vom", "Rathaus",
)


def confidence_corpus(
    n_docs: int = 60, *, seed: int = 0, language: str = "de", unscored_every: int = 0
) -> list[Document]:
    """Documents with per-word OCR confidences spread over [0.4, 1.0].

    Document quality levels are spaced so that mean confidences are distinct,
    which makes kept bytes strictly decrease as the threshold rises past each
    level.  With ``unscored_every=k`` every k-th document has no confidences.
    """
    rng = random.Random(seed)
    docs = []
    for i in range(n_docs):
        n_words = rng.randint(20, 60)
        words = [rng.choice(_WORDS) for _ in range(n_words)]
        centre = 0.45 + 0.5 * i / max(n_docs - 1, 1)
        confs = tuple(round(min(1.0, max(0.0, centre + rng.uniform(-0.05, 0.05))), 3) for _ in words)
        if unscored_every and i % unscored_every == unscored_every - 1:
            confs = ()
        docs.append(Document(
            id=f"{language}-{i:04d}", language=language, text=" ".join(words),
            year=1850 + i % 50, word_confidences=confs,
        ))
    return docs
