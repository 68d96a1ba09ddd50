"""Experiment orchestration for the tagger.

Every grid cell is one hermetic training run identified by a content hash of
its configuration, stage, languages and parent run.  Completed runs are
appended to ``runs.jsonl`` in the experiment directory, so an interrupted
grid can be resumed and finished cells are skipped.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Mapping, Sequence

from ._io import dumps_line
from .errors import HistonerError
from .ner_corpus import AnnotatedSentence, merge_multilingual
from .scorer import strict_micro_f1
from .tagger import DEFAULT_HASH_BITS, TaggerModel, TrainConfig, predict, train
from .wordpiece import WordpieceVocab

log = logging.getLogger(__name__)

LEDGER_NAME = "runs.jsonl"


class HarnessError(HistonerError):
    pass


@dataclass(frozen=True)
class Grid:
    batch_sizes: tuple[int, ...]
    epoch_counts: tuple[int, ...]
    learning_rates: tuple[float, ...]
    seeds: tuple[int, ...] = (1, 2, 4, 5)

    def __post_init__(self) -> None:
        for name in ("batch_sizes", "epoch_counts", "learning_rates", "seeds"):
            values = tuple(getattr(self, name))
            if not values:
                raise HarnessError(f"grid axis {name} is empty")
            object.__setattr__(self, name, values)

    def __len__(self) -> int:
        return len(self.batch_sizes) * len(self.epoch_counts) * len(self.learning_rates) * len(self.seeds)

    def cells(self) -> list[tuple[int, int, float, int]]:
        """(batch_size, epochs, learning_rate, seed) in axis order."""
        return list(itertools.product(self.batch_sizes, self.epoch_counts, self.learning_rates, self.seeds))

    @classmethod
    def from_dict(cls, d: Mapping) -> Grid:
        return cls(
            tuple(int(v) for v in d["batch_sizes"]),
            tuple(int(v) for v in d["epoch_counts"]),
            tuple(float(v) for v in d["learning_rates"]),
            tuple(int(v) for v in d.get("seeds", (1, 2, 4, 5))),
        )


# Hyperparameter grids of the reference fine-tuning runs.
NEWSEYE_GRID = Grid((4, 8), (5, 10), (3e-5, 5e-5), (1, 2, 4, 5))
STAGE1_GRID = Grid((4, 8, 16), (10,), (1e-5, 2e-5, 3e-5, 4e-5, 5e-5), (1, 2, 4, 5))
STAGE2_GRID = Grid((4, 8), (5, 10), (3e-5, 5e-5), (1, 2, 4, 5))


@dataclass
class RunRecord:
    run_id: str
    stage: int
    languages: list[str]
    config: dict
    dev_f1: float | None = None
    status: str = "ok"
    error: str | None = None
    model_path: str | None = None
    wall_time: float = 0.0
    parent: str | None = None
    best_epoch: int | None = None
    history: list[float] = field(default_factory=list)
    init_digest: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def score(self) -> float:
        return self.dev_f1 if self.ok and self.dev_f1 is not None else -math.inf

    def sort_key(self) -> tuple:
        c = self.config
        return (-self.score, c["epochs"], c["batch_size"], c["seed"], c["learning_rate"], self.run_id)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunRecord:
        return cls(**d)


def rank(records: Sequence[RunRecord]) -> list[RunRecord]:
    """Dev strict F1 descending; ties to fewer epochs, smaller batch, earlier seed."""
    return sorted(records, key=RunRecord.sort_key)


def run_counts(n_languages: int, grid_size: int) -> tuple[int, int]:
    """(single-model runs, one-model runs) for a hyperparameter search."""
    return n_languages * grid_size, grid_size


def make_run_id(stage: int, languages: Sequence[str], config: Mapping, parent: str | None) -> str:
    blob = json.dumps(
        {"stage": stage, "languages": sorted(languages), "config": config, "parent": parent},
        sort_keys=True,
    )
    return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:16]


class Ledger:
    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / LEDGER_NAME
        self.records: dict[str, RunRecord] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = RunRecord.from_dict(json.loads(line))
                        self.records[rec.run_id] = rec

    def completed(self, run_id: str) -> RunRecord | None:
        rec = self.records.get(run_id)
        if rec and rec.ok and rec.model_path and Path(rec.model_path).exists():
            return rec
        return None

    def append(self, rec: RunRecord) -> None:
        self.records[rec.run_id] = rec
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(dumps_line(rec.to_dict()))
            fh.flush()


@dataclass
class _Job:
    run_id: str
    stage: int
    languages: list[str]
    config: TrainConfig
    train: Sequence[AnnotatedSentence]
    dev: Sequence[AnnotatedSentence]
    vocab_tokens: list[str] | None
    init_path: str | None
    parent: str | None
    model_path: str


def _execute(job: _Job) -> RunRecord:
    t0 = time.perf_counter()
    rec = RunRecord(job.run_id, job.stage, job.languages, job.config.to_dict(), parent=job.parent)
    try:
        vocab = WordpieceVocab(job.vocab_tokens) if job.vocab_tokens else None
        init = TaggerModel.load(job.init_path) if job.init_path else None
        result = train(job.config, job.train, job.dev, vocab=vocab, init=init)
        result.model.provenance["run_id"] = job.run_id
        result.model.provenance["parent"] = job.parent
        result.model.save(job.model_path)
        rec.dev_f1 = result.best_f1
        rec.best_epoch = result.best_epoch
        rec.history = result.history
        rec.init_digest = result.model.provenance["init_digest"]
        rec.model_path = job.model_path
    except Exception as exc:  # failed cells are recorded, never dropped
        log.warning("run %s failed: %s", job.run_id, exc)
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time = round(time.perf_counter() - t0, 3)
    return rec


def grid_search(
    grid: Grid,
    train_set: Sequence[AnnotatedSentence],
    dev_set: Sequence[AnnotatedSentence],
    *,
    vocab: WordpieceVocab | None = None,
    stage: int = 1,
    languages: Sequence[str] = (),
    init_path: str | Path | None = None,
    parent: str | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    hash_bits: int = DEFAULT_HASH_BITS,
) -> list[RunRecord]:
    """Train every grid cell and return the records ranked best first."""
    out = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="histoner-grid-"))
    ledger = Ledger(out)
    (out / "models").mkdir(exist_ok=True)
    langs = sorted(set(languages) or {s.language for s in train_set})
    vocab_tokens = vocab.tokens if vocab is not None else None
    labels = None
    if init_path is not None:
        init_path = str(init_path)
        labels = TaggerModel.load(init_path).labels

    done: list[RunRecord] = []
    pending: list[_Job] = []
    for bs, ep, lr, seed in grid.cells():
        config = TrainConfig(batch_size=bs, epochs=ep, learning_rate=lr, seed=seed, hash_bits=hash_bits, labels=labels)
        run_id = make_run_id(stage, langs, config.to_dict(), parent)
        prior = ledger.completed(run_id)
        if prior is not None:
            done.append(prior)
            continue
        pending.append(_Job(
            run_id, stage, langs, config, train_set, dev_set, vocab_tokens,
            init_path, parent, str(out / "models" / f"{run_id}.npz"),
        ))
    if done:
        log.info("resuming: %d of %d cells already complete", len(done), len(grid))

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute, pending))
    else:
        results = [_execute(j) for j in pending]
    for rec in sorted(results, key=lambda r: r.run_id):
        ledger.append(rec)
    return rank(done + results)


def select_stage1(records: Sequence[RunRecord]) -> RunRecord:
    """Best configuration by mean dev F1 over seeds, then its best seed."""
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        c = r.config
        groups.setdefault((c["batch_size"], c["epochs"], c["learning_rate"]), []).append(r)

    def key(item):
        (bs, ep, lr), recs = item
        return (-fmean(r.score for r in recs), ep, bs, lr)

    _, best = min(groups.items(), key=key)
    choice = rank(best)[0]
    if not choice.ok:
        raise HarnessError("every stage-1 run failed; aborting before stage 2")
    return choice


@dataclass
class LanguageData:
    train: list[AnnotatedSentence]
    dev: list[AnnotatedSentence]


def _dev_f1(model: TaggerModel, dev: Sequence[AnnotatedSentence]) -> float:
    return 100.0 * strict_micro_f1(dev, predict(model, dev))


@dataclass
class ComparisonRow:
    language: str
    single_f1: float
    one_f1: float

    @property
    def delta(self) -> float:
        return self.one_f1 - self.single_f1


@dataclass
class Comparison:
    rows: list[ComparisonRow]
    single_runs: int
    one_runs: int
    one_model: RunRecord


def compare_single_vs_one(
    datasets: Mapping[str, LanguageData],
    grid: Grid,
    *,
    vocab: WordpieceVocab | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    hash_bits: int = DEFAULT_HASH_BITS,
) -> Comparison:
    """Per-language grids versus one grid on the merged data."""
    out = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="histoner-cmp-"))
    langs = sorted(datasets)
    kw = dict(vocab=vocab, jobs=jobs, hash_bits=hash_bits)
    single = {}
    n_single = 0
    for lang in langs:
        d = datasets[lang]
        recs = grid_search(grid, d.train, d.dev, languages=[lang], out_dir=out / "single" / lang, **kw)
        n_single += len(recs)
        single[lang] = recs[0].score
    merged_train = merge_multilingual([datasets[l].train for l in langs])
    merged_dev = merge_multilingual([datasets[l].dev for l in langs])
    one = grid_search(grid, merged_train, merged_dev, languages=langs, out_dir=out / "one", **kw)
    best = one[0]
    if not best.ok:
        raise HarnessError("every one-model run failed")
    model = TaggerModel.load(best.model_path)
    rows = [ComparisonRow(l, single[l], _dev_f1(model, datasets[l].dev)) for l in langs]
    return Comparison(rows, n_single, len(one), best)


@dataclass
class StageRow:
    language: str
    stage1_f1: float
    stage2_f1: float
    record: RunRecord

    @property
    def delta(self) -> float:
        return self.stage2_f1 - self.stage1_f1


@dataclass
class MultistageResult:
    stage1: RunRecord
    stage1_records: list[RunRecord]
    stage2_records: dict[str, list[RunRecord]]
    rows: list[StageRow]

    @property
    def n_trainings(self) -> int:
        return len(self.stage1_records) + sum(len(v) for v in self.stage2_records.values())


def multistage(
    stage1_grid: Grid,
    stage2_grid: Grid,
    datasets: Mapping[str, LanguageData],
    *,
    vocab: WordpieceVocab | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    hash_bits: int = DEFAULT_HASH_BITS,
) -> MultistageResult:
    """Multilingual stage-1 search, then per-language stage-2 searches that
    start every run from the selected stage-1 model."""
    out = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="histoner-ms-"))
    langs = sorted(datasets)
    kw = dict(vocab=vocab, jobs=jobs, hash_bits=hash_bits)
    merged_train = merge_multilingual([datasets[l].train for l in langs])
    merged_dev = merge_multilingual([datasets[l].dev for l in langs])
    s1 = grid_search(stage1_grid, merged_train, merged_dev, stage=1, languages=langs, out_dir=out / "stage1", **kw)
    chosen = select_stage1(s1)
    stage1_model = TaggerModel.load(chosen.model_path)
    log.info("stage 1 selected %s (dev F1 %.2f)", chosen.run_id, chosen.dev_f1)

    stage2: dict[str, list[RunRecord]] = {}
    rows = []
    for lang in langs:
        d = datasets[lang]
        recs = grid_search(
            stage2_grid, d.train, d.dev, stage=2, languages=[lang], init_path=chosen.model_path,
            parent=chosen.run_id, out_dir=out / "stage2" / lang, **kw,
        )
        stage2[lang] = recs
        rows.append(StageRow(lang, _dev_f1(stage1_model, d.dev), recs[0].score, recs[0]))
    return MultistageResult(chosen, s1, stage2, rows)
