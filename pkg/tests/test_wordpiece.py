from __future__ import annotations

from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from histoner.errors import ConfigError, DataError
from histoner.wordpiece import (
    PREFIX,
    SPECIALS,
    UNK,
    TokenizerStats,
    WordpieceVocab,
    count_words,
    pre_tokenize,
    stats_by_language,
    stats_csv,
    tokenize,
    tokenizer_stats,
    train_vocab,
)


def vocab(*tokens):
    return WordpieceVocab(list(SPECIALS) + list(tokens))


# Independent trainer: recounts every frequency from scratch at each step.
def naive_train(word_counts, vocab_size, min_frequency=2):
    splits = {w: [w[0]] + [PREFIX + c for c in w[1:]] for w in word_counts}
    tokens = list(SPECIALS) + sorted({p for s in splits.values() for p in s})
    while len(tokens) < vocab_size:
        piece, pair = Counter(), Counter()
        for w, s in splits.items():
            for p in s:
                piece[p] += word_counts[w]
            for x, y in zip(s, s[1:]):
                pair[(x, y)] += word_counts[w]
        cands = [(-Fraction(f, piece[p[0]] * piece[p[1]]), p) for p, f in pair.items() if f >= min_frequency]
        if not cands:
            break
        _, (a, b) = min(cands)
        merged = a + b[len(PREFIX):]
        for w, s in splits.items():
            out, j = [], 0
            while j < len(s):
                if j + 1 < len(s) and s[j] == a and s[j + 1] == b:
                    out.append(merged)
                    j += 2
                else:
                    out.append(s[j])
                    j += 1
            splits[w] = out
        if merged not in tokens:
            tokens.append(merged)
    return tokens


class TestPreTokenize:
    def test_punctuation_is_isolated(self):
        assert pre_tokenize("Hallo, Welt!  (1890)") == ["Hallo", ",", "Welt", "!", "(", "1890", ")"]

    def test_unicode_whitespace(self):
        assert pre_tokenize("a b\tc\n") == ["a", "b", "c"]


class TestVocab:
    def test_specials_have_fixed_ids(self):
        v = vocab("a")
        assert [v.index[s] for s in SPECIALS] == [0, 1, 2, 3, 4]

    def test_rejects_duplicates_and_missing_specials(self):
        with pytest.raises(DataError):
            vocab("a", "a")
        with pytest.raises(DataError):
            WordpieceVocab(["a", "b"])

    def test_file_round_trip_is_bit_exact(self, tmp_path):
        v = train_vocab(["Die Zeitung die Zeitungen der Zeit"] * 3, 40)
        v.save(tmp_path / "vocab.txt")
        raw = (tmp_path / "vocab.txt").read_bytes()
        assert raw == "".join(t + "\n" for t in v.tokens).encode()
        assert WordpieceVocab.load(tmp_path / "vocab.txt") == v

    def test_load_missing(self, tmp_path):
        with pytest.raises(DataError, match="nope.txt"):
            WordpieceVocab.load(tmp_path / "nope.txt")


class TestTokenize:
    def test_greedy_longest_match(self):
        v = vocab("un", "##aff", "##able", "u", "##a")
        assert tokenize("unaffable", v) == ["un", "##aff", "##able"]

    def test_unknown_first_character(self):
        assert tokenize("xyz", vocab("a")) == [UNK]

    def test_unmatchable_remainder_is_unk(self):
        assert tokenize("abc", vocab("a", "##b")) == [UNK]

    def test_exact_word_is_one_piece(self):
        assert tokenize("Zeitung", vocab("Zeitung", "Z")) == ["Zeitung"]

    def test_word_length_cap(self):
        v = vocab("a", "##a")
        assert tokenize("a" * 101, v) == [UNK]
        assert tokenize("a" * 100, v) == ["a"] + ["##a"] * 99
        assert v.tokenize("a" * 101, max_chars=0) == ["a"] + ["##a"] * 100

    def test_case_sensitive(self):
        v = vocab("Die", "die")
        assert tokenize("Die die", v) == ["Die", "die"]

    def test_long_s_flag(self):
        v = vocab("Wasser")
        assert tokenize("Waſſer", v) == [UNK]
        assert v.tokenize("Waſſer", normalize_long_s=True) == ["Wasser"]


class TestTrain:
    def test_one_merge_step(self):
        v = train_vocab(["ab ab ab"], 8)
        assert v.tokens == [*SPECIALS, "##b", "a", "ab"]

    def test_alphabet_only_budget(self):
        v = train_vocab(["abc abc bca"], 5 + 5)
        alphabet = {"a", "b", "##b", "##c", "##a"}
        assert set(v.tokens[5:]) == alphabet and v.size == 10

    def test_deterministic_files(self, tmp_path):
        corpus = ["der die das Der Die Das dieser diese"] * 4
        train_vocab(corpus, 30).save(tmp_path / "a.txt")
        train_vocab(corpus, 30).save(tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_never_lowercases(self):
        v = train_vocab(["Die die Die die"], 20)
        assert "D" in v and "d" in v
        assert tokenize("Die", v) != tokenize("die", v)

    def test_errors(self):
        with pytest.raises(DataError):
            train_vocab([], 10)
        with pytest.raises(ConfigError):
            train_vocab(["abc"], 7)

    def test_min_frequency_blocks_rare_pairs(self):
        v = train_vocab(["xy"], 100, min_frequency=2)
        assert "xy" not in v
        assert "xy" in train_vocab(["xy"], 100, min_frequency=1)

    def test_frequency_mapping_equals_text(self):
        texts = ["der Hund und der Mund", "und der Bund"]
        assert train_vocab(texts, 25) == train_vocab(count_words(texts), 25)

    @settings(max_examples=80, deadline=None)
    @given(
        st.dictionaries(st.text("abcAB", min_size=1, max_size=6), st.integers(1, 5), min_size=1, max_size=8),
        st.integers(0, 15),
        st.integers(1, 3),
    )
    def test_matches_naive_trainer(self, counts, extra, min_freq):
        alphabet = {w[0] for w in counts} | {PREFIX + c for w in counts for c in w[1:]}
        size = len(SPECIALS) + len(alphabet) + extra
        assert train_vocab(counts, size, min_freq).tokens == naive_train(counts, size, min_freq)


class TestStats:
    def test_two_words_one_and_two_pieces(self):
        v = vocab("Haus", "Zeit", "##ung")
        s = tokenizer_stats([["Haus", "Zeitung"]], v)
        assert (s.word_count, s.subword_count, s.unk_count) == (2, 3, 0)
        assert s.sfr == 1.5 and s.unk_portion == 0.0

    def test_unk_quarter(self):
        v = vocab("a", "##b", "##c")
        s = tokenizer_stats([["abc", "ab", "x"]], v)
        assert s.subword_count == 6
        s = tokenizer_stats([["abc", "x"]], v)
        assert (s.subword_count, s.unk_count, s.unk_portion) == (4, 1, 0.25)

    def test_empty_dataset(self):
        with pytest.raises(DataError):
            tokenizer_stats([[]], vocab("a"))
        with pytest.raises(ZeroDivisionError):
            TokenizerStats().sfr

    def test_per_language_csv(self):
        v = vocab("a", "##b")
        stats = stats_by_language({"fr": [["ab"]], "de": [["a", "c"]]}, v)
        assert list(stats) == ["de", "fr"]
        assert stats_csv(stats).splitlines() == [
            "language,sfr,unk_portion,words,subwords,unks",
            "de,1.0000,0.500000,2,2,1",
            "fr,2.0000,0.000000,1,2,0",
        ]

    def test_long_s_normalization_removes_unks(self):
        v = train_vocab(["Das Wasser ist das Wasser der Stadt"] * 2, 60)
        data = [["Waſſer", "iſt", "das", "Waſſer"]]
        before = tokenizer_stats(data, v)
        after = tokenizer_stats(data, v, normalize_long_s=True)
        assert before.unk_portion == 0.75
        assert after.unk_portion == 0.0


_word = st.text(st.characters(codec="utf-8", exclude_categories=("Z", "C", "P")), min_size=1, max_size=8)


def _random_vocab(chars):
    pieces = set()
    for w in chars:
        pieces.add(w[0])
        pieces.update(PREFIX + c for c in w[1:])
        pieces.add(w[: max(1, len(w) // 2)])
    return WordpieceVocab(list(SPECIALS) + sorted(pieces))


@given(st.lists(_word, min_size=1, max_size=10), st.data())
def test_round_trip_and_greedy_dominance(words, data):
    v = _random_vocab(data.draw(st.lists(st.sampled_from(words), max_size=len(words))))
    for w in words:
        pieces = v.tokenize_word(w)
        if pieces == [UNK]:
            continue
        assert pieces[0] + "".join(p[len(PREFIX):] for p in pieces[1:]) == w
        longest = max(k for k in range(1, len(w) + 1) if w[:k] in v)
        assert len(pieces[0]) == longest


@given(st.lists(st.lists(_word, min_size=1, max_size=5), min_size=1, max_size=5), st.data())
def test_sfr_at_least_one(sents, data):
    words = [w for s in sents for w in s]
    v = _random_vocab(data.draw(st.lists(st.sampled_from(words), max_size=len(words))))
    assert tokenizer_stats(sents, v).sfr >= 1.0


@given(st.lists(st.lists(_word, min_size=1, max_size=5), min_size=1, max_size=5))
def test_full_alphabet_means_no_unks(sents):
    chars = {c for s in sents for w in s for c in w}
    v = WordpieceVocab(list(SPECIALS) + sorted(chars | {PREFIX + c for c in chars}))
    assert tokenizer_stats(sents, v, max_chars=0).unk_portion == 0.0


def test_adding_a_prefix_token_can_raise_fertility():
    # Greedy longest match is not monotone in the vocabulary: "ab" steals the
    # start of "abcd" and leaves "##cd", which must split further.
    base = vocab("a", "##b", "##c", "##d", "##bcd")
    data = [["abcd"]]
    assert tokenizer_stats(data, base).sfr == 2.0
    grown = vocab("a", "##b", "##c", "##d", "##bcd", "ab")
    assert tokenizer_stats(data, grown).sfr == 3.0


@given(st.lists(st.lists(_word, min_size=1, max_size=5), min_size=1, max_size=5), st.data())
def test_adding_isolated_whole_word_never_raises_fertility(sents, data):
    words = [w for s in sents for w in s]
    v = _random_vocab(data.draw(st.lists(st.sampled_from(words), max_size=len(words))))
    new = data.draw(st.sampled_from(words))
    assume(new not in v and not any(w != new and w.startswith(new) for w in words))
    grown = WordpieceVocab(v.tokens + [new])
    assert tokenizer_stats(sents, grown).sfr <= tokenizer_stats(sents, v).sfr
