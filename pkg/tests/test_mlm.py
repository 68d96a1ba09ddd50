from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histoner.corpus import Document
from histoner.errors import ConfigError, DataError
from histoner.mlm import (
    MAX_PREDICTIONS,
    MAX_PREDICTIONS_64K,
    MlmInstance,
    TokenizedDocument,
    build_instances,
    mask_tokens,
    max_predictions_for,
    num_to_mask,
    pretraining_budget,
    read_shards,
    round_half_away,
    shard_instances,
    shard_name,
    stream_seed,
    tokenize_documents,
)
from histoner.wordpiece import CLS, MASK, SEP, SPECIALS, WordpieceVocab, train_vocab

WORDS = "die alte Zeitung berichtet heute über den Markt in der Stadt am Rhein".split()


def make_docs(n_docs=6, n_sents=8, seed=0):
    rng = random.Random(seed)
    docs = []
    for d in range(n_docs):
        lines = [" ".join(rng.choice(WORDS) for _ in range(rng.randint(4, 12))) for _ in range(n_sents)]
        docs.append(Document(f"doc{d:02d}", "de", "\n".join(lines)))
    return docs


@pytest.fixture(scope="module")
def vocab():
    return train_vocab(WORDS * 3, 60)


@pytest.fixture(scope="module")
def tdocs(vocab):
    return tokenize_documents(make_docs(), vocab)


class TestCounts:
    @pytest.mark.parametrize("n, expected", [(400, 60), (600, 75), (1, 1), (3, 1), (10, 2), (0, 1)])
    def test_num_to_mask(self, n, expected):
        assert num_to_mask(n, 0.15, 75) == expected

    def test_64k_mode(self):
        assert max_predictions_for("32k") == MAX_PREDICTIONS == 75
        assert max_predictions_for("64k") == MAX_PREDICTIONS_64K == 76
        assert num_to_mask(600, 0.15, max_predictions_for("64k")) == 76

    @pytest.mark.parametrize("x, r", [(2.5, 3), (-2.5, -3), (2.4999, 2), (0.5, 1), (0.0, 0)])
    def test_round_half_away(self, x, r):
        assert round_half_away(x) == r


def _check_instance(inst: MlmInstance, vocab: WordpieceVocab, max_seq_len: int, max_preds: int) -> None:
    cls_id, sep_id, mask_id = vocab.index[CLS], vocab.index[SEP], vocab.index[MASK]
    ids = inst.token_ids
    assert len(ids) <= max_seq_len and len(inst.segment_ids) == len(ids)
    assert ids[0] == cls_id and ids[-1] == sep_id
    seps = [i for i, t in enumerate(ids) if t == sep_id]
    assert len(seps) == 2
    assert inst.segment_ids == [0] * (seps[0] + 1) + [1] * (len(ids) - seps[0] - 1)
    pos = inst.masked_positions
    assert pos == sorted(set(pos)) and len(pos) == len(inst.masked_label_ids)
    assert 1 <= len(pos) <= max_preds
    assert not {0, *seps} & set(pos)
    original = list(ids)
    for p, label in zip(pos, inst.masked_label_ids):
        original[p] = label
    assert mask_id not in original


class TestBuild:
    def test_instance_invariants(self, vocab, tdocs):
        for inst in build_instances(tdocs, vocab, max_seq_len=48, max_predictions=5, dupe_factor=2, seed=3):
            _check_instance(inst, vocab, 48, 5)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(8, 80), st.integers(1, 20), st.floats(0.05, 0.5), st.integers(0, 2**32))
    def test_invariants_hold_for_any_parameters(self, vocab, tdocs, seq_len, max_preds, prob, seed):
        max_preds = min(max_preds, seq_len)
        for inst in build_instances(tdocs, vocab, max_seq_len=seq_len, max_predictions=max_preds,
                                    mlm_prob=prob, dupe_factor=1, seed=seed):
            _check_instance(inst, vocab, seq_len, max_preds)

    def test_masked_count_matches_formula(self, vocab, tdocs):
        for inst in build_instances(tdocs, vocab, max_seq_len=64, max_predictions=6, dupe_factor=1, seed=5):
            maskable = len(inst.token_ids) - 3
            assert len(inst.masked_positions) == num_to_mask(maskable, 0.15, 6)

    def test_duplication_rounds_mask_differently(self, vocab, tdocs):
        one = tdocs[:2]
        insts = build_instances(one, vocab, max_seq_len=512, dupe_factor=5, seed=1, shuffle=False,
                                short_seq_prob=0.0)
        assert len(insts) >= 5
        assert len({tuple(i.masked_positions) for i in insts}) > 1

    def test_deterministic_and_seed_sensitive(self, vocab, tdocs):
        a = build_instances(tdocs, vocab, max_seq_len=64, max_predictions=10, seed=7)
        b = build_instances(tdocs, vocab, max_seq_len=64, max_predictions=10, seed=7)
        c = build_instances(tdocs, vocab, max_seq_len=64, max_predictions=10, seed=8)
        assert a == b and a != c

    def test_per_document_stream_seed(self):
        assert stream_seed(1, "a", 0) != stream_seed(1, "a", 1)
        assert stream_seed(1, "a", 0) != stream_seed(1, "b", 0)
        assert stream_seed(1, "a", 0) == stream_seed(1, "a", 0)

    def test_errors(self, vocab, tdocs):
        with pytest.raises(DataError):
            build_instances([], vocab)
        with pytest.raises(ConfigError):
            build_instances(tdocs, vocab, max_predictions=0)
        with pytest.raises(ConfigError):
            build_instances(tdocs, vocab, max_seq_len=16, max_predictions=20)
        with pytest.raises(ConfigError):
            build_instances(tdocs, vocab, mlm_prob=1.0)

    def test_whole_word_masks_complete_words(self):
        v = WordpieceVocab([*SPECIALS, "a", "b", "##x", "##y"])
        ids = [v.index[t] for t in ["[CLS]", "a", "##x", "##y", "b", "[SEP]", "a", "##x", "[SEP]"]]
        for seed in range(20):
            m = mask_tokens(ids, v, 0.5, 10, random.Random(seed), whole_word=True)
            words = [{1, 2, 3}, {4}, {6, 7}]
            assert all(w <= set(m.positions) or not w & set(m.positions) for w in words)

    def test_random_replacement_avoids_specials(self):
        v = WordpieceVocab([*SPECIALS, "a", "b"])
        ids = [2] + [5] * 200 + [3, 6, 3]
        m = mask_tokens(ids, v, 0.5, 500, random.Random(0))
        rand = [m.token_ids[p] for p, k in zip(m.positions, m.kinds) if k == "random"]
        assert rand and all(t >= len(SPECIALS) for t in rand)


class TestReplacementStatistics:
    def test_mask_fraction_and_mix(self):
        v = WordpieceVocab([*SPECIALS] + [f"w{i}" for i in range(50)])
        rng = random.Random(11)
        n_maskable = masked = 0
        kinds = {"mask": 0, "keep": 0, "random": 0}
        while n_maskable < 20_000:
            n = rng.randint(20, 120)
            ids = [2] + [rng.randrange(5, 55) for _ in range(n)] + [3]
            m = mask_tokens(ids, v, 0.15, 512, rng)
            n_maskable += n
            masked += len(m.positions)
            for k in m.kinds:
                kinds[k] += 1
        assert abs(masked / n_maskable - 0.15) <= 0.02
        assert abs(kinds["mask"] / masked - 0.8) <= 0.03
        assert abs(kinds["keep"] / masked - 0.1) <= 0.03
        assert abs(kinds["random"] / masked - 0.1) <= 0.03


def _sized_instance(target: int) -> MlmInstance:
    for k in range(1, target):
        inst = MlmInstance([7] * k, [], False, [], [])
        if len(inst.to_json().encode()) == target:
            return inst
        inst = MlmInstance([7] * k + [10], [], False, [], [])
        if len(inst.to_json().encode()) == target:
            return inst
    raise AssertionError("cannot size instance")


class TestShards:
    def test_three_megabytes_in_one_megabyte_chunks(self, tmp_path):
        inst = _sized_instance(1000)
        paths = shard_instances([inst] * 3000, tmp_path, 1_000_000, language="de")
        assert [p.name for p in paths] == [shard_name("de", i) for i in range(3)]
        assert [p.stat().st_size for p in paths] == [1_000_000] * 3
        assert list(read_shards(paths)) == [inst] * 3000

    def test_order_preserved_and_bounded(self, tmp_path, vocab, tdocs):
        insts = build_instances(tdocs, vocab, max_seq_len=64, max_predictions=10, seed=2)
        chunk = 3000
        paths = shard_instances(insts, tmp_path, chunk)
        assert all(p.stat().st_size <= chunk for p in paths)
        assert list(read_shards(paths)) == insts
        total = sum(len(i.to_json().encode()) for i in insts)
        assert len(paths) >= math.ceil(total / chunk)

    def test_small_and_empty_streams(self, tmp_path):
        assert len(shard_instances([_sized_instance(200)], tmp_path / "a", 10_000)) == 1
        assert shard_instances([], tmp_path / "b", 10_000) == []

    def test_oversized_instance(self, tmp_path):
        with pytest.raises(ConfigError):
            shard_instances([_sized_instance(500)], tmp_path, 100)

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(DataError):
            shard_instances([_sized_instance(200)], blocker / "sub", 10_000)

    def test_identical_seeds_give_identical_bytes(self, tmp_path, vocab, tdocs):
        for name in ("a", "b"):
            shard_instances(build_instances(tdocs, vocab, max_seq_len=64, max_predictions=10, seed=9), tmp_path / name, 4000)
        a = sorted((tmp_path / "a").iterdir())
        b = sorted((tmp_path / "b").iterdir())
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


class TestBudget:
    def test_short_schedule(self):
        b = pretraining_budget(3_000_000, 128, 512, 42_000_000_000)
        assert b.subtokens_seen == 196_608_000_000
        assert b.epochs_rounded == 4.7
        assert "196.6B" in b.summary()

    def test_long_schedule(self):
        b = pretraining_budget(1_000_000, 512, 512, 39_000_000_000)
        assert b.subtokens_seen == 262_144_000_000
        assert b.epochs_rounded == 6.7

    def test_unit(self):
        b = pretraining_budget(1, 1, 1, 1)
        assert b.subtokens_seen == 1 and b.epochs == 1.0

    def test_zero_corpus(self):
        with pytest.raises(ConfigError):
            pretraining_budget(1, 1, 1, 0)

    @given(st.integers(1, 10**7), st.integers(1, 1024), st.integers(1, 1024), st.integers(1, 10**12))
    def test_invariants(self, steps, batch, seq, corpus):
        b = pretraining_budget(steps, batch, seq, corpus)
        assert b.subtokens_seen == steps * batch * seq
        assert b.epochs == b.subtokens_seen / corpus


def test_tokenize_documents_one_sentence_per_line(vocab):
    docs = tokenize_documents([Document("x", "de", "die Stadt\n\nam Rhein")], vocab)
    assert docs == [TokenizedDocument("x", [vocab.tokenize("die Stadt"), vocab.tokenize("am Rhein")], "de")]
