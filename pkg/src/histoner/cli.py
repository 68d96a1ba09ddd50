"""``histoner`` command-line interface.

Exit status is 0 on success, 1 on usage or configuration errors and 2 on
data errors (missing or malformed input).  Every file output is written to a
temporary name and renamed into place.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from ._io import csv_text, write_jsonl_atomic, write_text_atomic
from .attr_eval import KINDS, attribute_report, reports_csv, reports_json
from .corpus import (
    GB,
    balance_csv,
    balance_report,
    chars_per_year,
    filter_by_confidence,
    ingest,
    normalize_long_s,
    upsample,
    upsample_factor,
)
from .errors import ConfigError, DataError, HistonerError
from .harness import (
    STAGE1_GRID,
    STAGE2_GRID,
    Grid,
    LanguageData,
    compare_single_vs_one,
    grid_search,
    multistage,
)
from .mlm import (
    DUPE_FACTOR,
    MAX_PREDICTIONS,
    MAX_SEQ_LEN,
    MLM_PROB,
    build_instances,
    pretraining_budget,
    shard_instances,
    tokenize_documents,
)
from .ner_corpus import DEFAULT_COLUMN, load_dataset, merge_multilingual, write_jsonl_dataset
from .scorer import REGIMES, score
from .tagger import DEFAULT_HASH_BITS, TaggerModel, TrainConfig, predict, train
from .wordpiece import WordpieceVocab, stats_by_language, stats_csv, train_vocab

log = logging.getLogger("histoner")

ENV_PREFIX = "HISTONER_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    """Experiment description read from TOML or JSON.

    ``datasets`` maps a language to ``{"train": path, "dev": path}``.  Scalar
    fields can be overridden with ``HISTONER_<FIELD>`` environment variables.
    """

    datasets: dict[str, dict[str, str]] = field(default_factory=dict)
    vocab: str | None = None
    output_dir: str = "histoner-out"
    mode: str = "grid"
    seed: int = 1
    jobs: int = 1
    hash_bits: int = DEFAULT_HASH_BITS
    normalize_long_s: bool = False
    label_column: str = DEFAULT_COLUMN
    format: str | None = None
    buckets: int = 4
    grid: Grid = STAGE1_GRID
    stage1_grid: Grid = STAGE1_GRID
    stage2_grid: Grid = STAGE2_GRID
    base_dir: Path = Path(".")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def validate(self) -> None:
        if self.mode not in ("grid", "compare", "multistage"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.datasets:
            raise ConfigError("experiment config names no datasets")
        for lang, splits in self.datasets.items():
            for split in ("train", "dev"):
                if split not in splits:
                    raise ConfigError(f"dataset {lang!r} lacks a {split!r} path")
                if not self.resolve(splits[split]).exists():
                    raise DataError(f"dataset file not found: {self.resolve(splits[split])}")
        if self.vocab and not self.resolve(self.vocab).exists():
            raise DataError(f"vocabulary not found: {self.resolve(self.vocab)}")
        out = self.resolve(self.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {out}: {exc}") from exc
        if not os.access(out, os.W_OK):
            raise DataError(f"output directory is not writable: {out}")


_SCALARS = {f.name: f.type for f in fields(ExperimentConfig) if f.type in ("int", "bool", "str", "str | None")}


def _coerce(name: str, raw: str) -> Any:
    kind = _SCALARS[name]
    if kind == "int":
        return int(raw)
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{ENV_PREFIX}{name.upper()} must be a boolean, got {raw!r}")
    return raw


def parse_config(data: Mapping[str, Any], *, base_dir: Path = Path("."), environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    environ = os.environ if environ is None else environ
    data = dict(data)
    unknown = set(data) - {f.name for f in fields(ExperimentConfig)} - {"base_dir"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in _SCALARS:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            try:
                data[name] = _coerce(name, environ[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
    try:
        for g in ("grid", "stage1_grid", "stage2_grid"):
            if g in data:
                data[g] = Grid.from_dict(data[g])
        cfg = ExperimentConfig(**data)
    except (KeyError, TypeError, ValueError, HistonerError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from None
    cfg.base_dir = base_dir
    return cfg


def load_config(path: str | Path, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Read TOML (``.toml``) or JSON (anything else) experiment configs."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8")) if path.suffix == ".toml" else json.loads(raw)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return parse_config(data, base_dir=path.parent, environ=environ)


# ---------------------------------------------------------------- helpers


def _out(args, name: str, explicit: str | None = None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(args.output_dir or ".") / name


def _emit(args, text: str) -> None:
    if not args.quiet:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_corpus(args):
    result = ingest(args.input, args.format, language=args.language)
    if result.errors:
        log.warning("%d malformed records skipped", len(result.errors))
    return result.documents


def _load_sentences(path, args):
    path = Path(path)
    fmt = getattr(args, "data_format", None)
    if fmt == "jsonl" or (fmt is None and path.suffix == ".jsonl"):
        return load_dataset(path, "jsonl")
    kw = {"normalize_long_s": getattr(args, "normalize_long_s", False), "language": getattr(args, "language", None) or ""}
    if fmt == "hipe" or (fmt is None and path.suffix == ".tsv"):
        kw["column"] = getattr(args, "column", DEFAULT_COLUMN)
    return load_dataset(path, fmt, **kw)


# ---------------------------------------------------------------- corpus


def cmd_corpus_filter(args) -> int:
    docs = _load_corpus(args)
    kept, report = filter_by_confidence(docs, args.threshold, unit=args.unit)
    out = _out(args, "filtered.jsonl", args.output)
    write_jsonl_atomic(out, (d.to_dict() for d in kept))
    summary = {
        "threshold": report.threshold,
        "kept_bytes": report.kept_bytes, "dropped_bytes": report.dropped_bytes,
        "unscored_bytes": report.unscored_bytes, "kept_docs": report.kept_docs,
        "dropped_docs": report.dropped_docs, "unscored_docs": report.unscored_docs,
        "kept_gb": report.kept_bytes / GB, "output": str(out),
    }
    _emit(args, json.dumps(summary, sort_keys=True))
    return 0


def cmd_corpus_stats(args) -> int:
    stats = chars_per_year(_load_corpus(args))
    out = _out(args, "chars_per_year.csv", args.output)
    write_text_atomic(out, stats.to_csv())
    _emit(args, f"{stats.doc_count} documents, {stats.total_chars} characters, {stats.total_bytes} bytes -> {out}")
    return 0


def cmd_corpus_upsample(args) -> int:
    docs = _load_corpus(args)
    n = upsample_factor(sum(d.n_bytes for d in docs), args.target_bytes)
    out = _out(args, "upsampled.jsonl", args.output)
    write_jsonl_atomic(out, (d.to_dict() for d in upsample(docs, n)))
    _emit(args, f"upsample factor {n} -> {out}")
    return 0


def cmd_corpus_normalize(args) -> int:
    docs = [replace(d, text=normalize_long_s(d.text)) for d in _load_corpus(args)]
    out = _out(args, "normalized.jsonl", args.output)
    write_jsonl_atomic(out, (d.to_dict() for d in docs))
    _emit(args, f"{len(docs)} documents -> {out}")
    return 0


def cmd_corpus_balance(args) -> int:
    sizes: dict[str, int] = {}
    for path in args.inputs:
        for d in ingest(path, "jsonl").documents:
            sizes[d.language] = sizes.get(d.language, 0) + d.n_bytes
    rows = balance_report(sizes, args.ratio)
    out = _out(args, "balance.csv", args.output)
    write_text_atomic(out, balance_csv(rows))
    for r in rows:
        if r.flagged:
            log.warning("language %s is unbalanced: %d bytes (%.1f%%)", r.language, r.bytes, 100 * r.share)
    _emit(args, balance_csv(rows))
    return 0


# ---------------------------------------------------------------- vocab / mlm


def _texts(paths: Sequence[str]):
    for p in paths:
        path = Path(p)
        if path.suffix == ".jsonl":
            for d in ingest(path, "jsonl").documents:
                yield d.text
        else:
            try:
                yield path.read_text(encoding="utf-8")
            except OSError as exc:
                raise DataError(f"cannot read {path}: {exc}") from exc


def cmd_vocab_train(args) -> int:
    vocab = train_vocab(_texts(args.inputs), args.size, args.min_frequency, normalize_long_s=args.normalize_long_s)
    out = _out(args, "vocab.txt", args.output)
    vocab.save(out)
    _emit(args, f"{vocab.size} tokens -> {out}")
    return 0


def cmd_vocab_stats(args) -> int:
    vocab = WordpieceVocab.load(args.vocab)
    per_lang: dict[str, list] = {}
    for path in args.data:
        for s in _load_sentences(path, args):
            per_lang.setdefault(s.language or args.language or "xx", []).append(s.tokens)
    stats = stats_by_language(per_lang, vocab, normalize_long_s=args.normalize_long_s)
    text = stats_csv(stats)
    if args.output or args.output_dir:
        write_text_atomic(_out(args, "tokenizer_stats.csv", args.output), text)
    _emit(args, text)
    return 0


def cmd_mlm_build(args) -> int:
    vocab = WordpieceVocab.load(args.vocab)
    docs = _load_corpus(args)
    tdocs = tokenize_documents(docs, vocab, normalize_long_s=args.normalize_long_s)
    instances = build_instances(
        tdocs, vocab, max_seq_len=args.seq_len, max_predictions=args.max_preds, mlm_prob=args.mlm_prob,
        dupe_factor=args.dupe, seed=args.seed, whole_word=args.whole_word,
    )
    out = Path(args.output_dir or "mlm-shards")
    paths = shard_instances(instances, out, args.chunk_bytes, language=args.shard_language)
    _emit(args, f"{len(instances)} instances in {len(paths)} shards -> {out}")
    return 0


def cmd_mlm_budget(args) -> int:
    b = pretraining_budget(args.steps, args.batch_size, args.seq_len, args.corpus_subtokens)
    _emit(args, json.dumps({
        "subtokens_seen": b.subtokens_seen, "epochs": b.epochs, "epochs_rounded": b.epochs_rounded,
        "summary": b.summary(),
    }, sort_keys=True))
    return 0


# ---------------------------------------------------------------- parse / score / attr


def cmd_parse(args) -> int:
    sentences = _load_sentences(args.input, args)
    out = _out(args, Path(args.input).stem + ".jsonl", args.output)
    write_jsonl_dataset(sentences, out)
    _emit(args, f"{len(sentences)} sentences -> {out}")
    return 0


def cmd_score(args) -> int:
    gold = _load_sentences(args.gold, args)
    pred = _load_sentences(args.pred, args)
    report = score(gold, pred, args.regime)
    if args.output_dir:
        write_text_atomic(Path(args.output_dir) / "scores.json", report.to_json())
        write_text_atomic(Path(args.output_dir) / "scores.csv", report.to_csv())
    for name in report.regimes:
        m = report[name].micro
        _emit(args, f"{name} P {100 * m.precision:.1f} R {100 * m.recall:.1f} F1 {100 * m.f1:.1f}")
    return 0


def cmd_attr_eval(args) -> int:
    train_set = _load_sentences(args.train, args)
    gold = _load_sentences(args.gold, args)
    pred = _load_sentences(args.pred, args)
    reports = [
        attribute_report(k, gold, pred, train_set, args.buckets, level=args.level, seed=args.seed)
        for k in args.attributes
    ]
    out = Path(args.output_dir or ".")
    write_text_atomic(out / "attributes.csv", reports_csv(reports))
    write_text_atomic(out / "attributes.json", reports_json(reports))
    for r in reports:
        s = r.summary()
        rho = "n/a" if s["spearman_rho"] is None else f"{s['spearman_rho']:+.3f}"
        p = "n/a" if s["p_value"] is None else f"{s['p_value']:.3f}"
        _emit(args, f"{s['attribute']}: rho {rho} p {p} stddev {s['f1_stddev']:.3f}")
    return 0


# ---------------------------------------------------------------- tagger


_TAGGER_KEYS = ("train", "dev", "vocab", "batch_size", "epochs", "learning_rate", "hash_bits", "model", "seed")


def _tagger_settings(args) -> dict:
    settings: dict[str, Any] = {}
    base = Path(".")
    if args.config:
        path = Path(args.config)
        try:
            raw = path.read_bytes()
            data = tomllib.loads(raw.decode()) if path.suffix == ".toml" else json.loads(raw)
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        unknown = set(data) - set(_TAGGER_KEYS)
        if unknown:
            raise ConfigError(f"unknown tagger config keys: {sorted(unknown)}")
        base = path.parent
        for key in ("train", "dev", "vocab", "model"):
            if key in data:
                data[key] = str(base / data[key])
        settings.update(data)
    for key in _TAGGER_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if "seed" not in settings:
        settings["seed"] = args.seed
    for key in ("train", "dev"):
        if key not in settings:
            raise UsageError(f"tagger train needs --{key} (or a config naming it)")
    return settings


def cmd_tagger_train(args) -> int:
    s = _tagger_settings(args)
    config = TrainConfig(
        batch_size=s.get("batch_size", 8), epochs=s.get("epochs", 10), learning_rate=s.get("learning_rate", 0.5),
        seed=s["seed"], hash_bits=s.get("hash_bits", DEFAULT_HASH_BITS), vocab_path=s.get("vocab"),
    )
    vocab = WordpieceVocab.load(s["vocab"]) if s.get("vocab") else None
    init = TaggerModel.load(args.init) if args.init else None
    result = train(config, _load_sentences(s["train"], args), _load_sentences(s["dev"], args), vocab=vocab, init=init)
    out = _out(args, "model.npz", s.get("model"))
    result.model.save(out)
    _emit(args, json.dumps({
        "best_epoch": result.best_epoch, "dev_f1": result.best_f1, "history": result.history, "model": str(out),
    }))
    return 0


def cmd_tagger_predict(args) -> int:
    model = TaggerModel.load(args.model)
    sentences = _load_sentences(args.input, args)
    pred = predict(model, sentences)
    out = _out(args, "predictions.jsonl", args.output)
    write_jsonl_dataset(pred, out)
    _emit(args, f"{len(pred)} sentences -> {out}")
    return 0


# ---------------------------------------------------------------- harness


def _experiment(args, mode: str | None) -> ExperimentConfig:
    cfg = load_config(args.config)
    if mode is not None:
        cfg.mode = mode
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.jobs is not None:
        cfg.jobs = args.jobs
    cfg.validate()
    return cfg


def _datasets(cfg: ExperimentConfig) -> dict[str, LanguageData]:
    out = {}
    for lang, splits in sorted(cfg.datasets.items()):
        loaded = []
        for split in ("train", "dev"):
            path = cfg.resolve(splits[split])
            kw: dict[str, Any] = {}
            if path.suffix != ".jsonl" and cfg.format != "jsonl":
                kw = {"normalize_long_s": cfg.normalize_long_s, "language": lang}
                if cfg.format == "hipe" or (cfg.format is None and path.suffix == ".tsv"):
                    kw["column"] = cfg.label_column
            loaded.append(load_dataset(path, cfg.format, **kw))
        out[lang] = LanguageData(*loaded)
    return out


def _record_rows(records) -> list[tuple]:
    return [
        (r.run_id, r.stage, "+".join(r.languages), r.config["batch_size"], r.config["epochs"],
         r.config["learning_rate"], r.config["seed"], r.status,
         "" if r.dev_f1 is None else f"{r.dev_f1:.4f}", r.parent or "")
        for r in records
    ]


_RECORD_HEADER = ["run_id", "stage", "languages", "batch_size", "epochs", "learning_rate", "seed", "status", "dev_f1", "parent"]


def run_experiment(cfg: ExperimentConfig) -> dict:
    out = cfg.resolve(cfg.output_dir)
    vocab = WordpieceVocab.load(cfg.resolve(cfg.vocab)) if cfg.vocab else None
    data = _datasets(cfg)
    kw = dict(vocab=vocab, jobs=cfg.jobs, hash_bits=cfg.hash_bits)
    if cfg.mode == "grid":
        langs = sorted(data)
        train_set = merge_multilingual([data[l].train for l in langs])
        dev_set = merge_multilingual([data[l].dev for l in langs])
        records = grid_search(cfg.grid, train_set, dev_set, languages=langs, out_dir=out / "grid", **kw)
        write_text_atomic(out / "ranking.csv", csv_text(_RECORD_HEADER, _record_rows(records)))
        summary = {"mode": "grid", "runs": len(records), "best": records[0].to_dict()}
    elif cfg.mode == "compare":
        cmp = compare_single_vs_one(data, cfg.grid, out_dir=out, **kw)
        rows = [(r.language, f"{r.single_f1:.4f}", f"{r.one_f1:.4f}", f"{r.delta:+.4f}") for r in cmp.rows]
        write_text_atomic(out / "comparison.csv", csv_text(["language", "single_f1", "one_f1", "delta_pp"], rows))
        summary = {
            "mode": "compare", "single_runs": cmp.single_runs, "one_runs": cmp.one_runs,
            "rows": [{"language": r.language, "single_f1": r.single_f1, "one_f1": r.one_f1, "delta_pp": r.delta}
                     for r in cmp.rows],
        }
    else:
        ms = multistage(cfg.stage1_grid, cfg.stage2_grid, data, out_dir=out, **kw)
        rows = [(r.language, f"{r.stage1_f1:.4f}", f"{r.stage2_f1:.4f}", f"{r.delta:+.4f}", r.record.run_id)
                for r in ms.rows]
        write_text_atomic(out / "multistage.csv", csv_text(["language", "stage1_f1", "stage2_f1", "delta_pp", "run_id"], rows))
        summary = {
            "mode": "multistage", "trainings": ms.n_trainings, "stage1": ms.stage1.to_dict(),
            "rows": [{"language": r.language, "stage1_f1": r.stage1_f1, "stage2_f1": r.stage2_f1,
                      "delta_pp": r.delta, "run_id": r.record.run_id} for r in ms.rows],
        }
    write_text_atomic(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _harness(mode: str | None):
    def run(args) -> int:
        summary = run_experiment(_experiment(args, mode))
        _emit(args, json.dumps(summary, sort_keys=True))
        return 0
    return run


# ---------------------------------------------------------------- parser


def _add_corpus_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="JSON Lines corpus file, or a directory of .txt files")
    p.add_argument("--format", choices=("jsonl", "plaintext-dir"), default="jsonl", help="input layout")
    p.add_argument("--language", help="language code for plaintext-dir input")
    p.add_argument("--output", help="output file (default: inside --output-dir)")


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-format", choices=("hipe", "conll", "jsonl"), help="dataset format (default: by suffix)")
    p.add_argument("--column", default=DEFAULT_COLUMN, help="HIPE label column (default: %(default)s)")
    p.add_argument("--language", help="language code recorded on parsed sentences")
    p.add_argument("--normalize-long-s", action="store_true", help="map the long s to s while reading")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="histoner", description="Historical NER toolkit: corpora, subword vocabularies, "
                     "pretraining data, tagging, scoring and experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=1, help="random seed (default: %(default)s)")
    parser.add_argument("--jobs", type=int, default=None, help="parallel harness workers")
    parser.add_argument("--output-dir", help="directory for outputs")
    parser.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    corpus = sub.add_parser("corpus", help="corpus filtering and statistics")
    csub = corpus.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    csub.required = True
    p = csub.add_parser("filter", help="drop documents below an OCR confidence threshold")
    _add_corpus_input(p)
    p.add_argument("--threshold", type=float, required=True, help="minimum mean word confidence")
    p.add_argument("--unit", choices=("document", "word"), default="document", help="filtering unit")
    p.set_defaults(func=cmd_corpus_filter)
    p = csub.add_parser("stats", help="characters per publication year as CSV")
    _add_corpus_input(p)
    p.set_defaults(func=cmd_corpus_stats)
    p = csub.add_parser("upsample", help="repeat a corpus until it reaches a target size")
    _add_corpus_input(p)
    p.add_argument("--target-bytes", type=int, required=True, help="target corpus size in bytes")
    p.set_defaults(func=cmd_corpus_upsample)
    p = csub.add_parser("normalize-long-s", help="replace the long s with s")
    _add_corpus_input(p)
    p.set_defaults(func=cmd_corpus_normalize)
    p = csub.add_parser("balance", help="per-language size report")
    p.add_argument("inputs", nargs="+", help="JSON Lines corpus files")
    p.add_argument("--ratio", type=float, default=0.5, help="flag languages this far from the mean (default: %(default)s)")
    p.add_argument("--output", help="output CSV")
    p.set_defaults(func=cmd_corpus_balance)

    vocab = sub.add_parser("vocab", help="wordpiece vocabularies")
    vsub = vocab.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    vsub.required = True
    p = vsub.add_parser("train", help="train a cased wordpiece vocabulary")
    p.add_argument("inputs", nargs="+", help="text files or JSON Lines corpora")
    p.add_argument("--size", type=int, default=32000, help="vocabulary size (default: %(default)s)")
    p.add_argument("--min-frequency", type=int, default=2, help="minimum pair count to merge (default: %(default)s)")
    p.add_argument("--normalize-long-s", action="store_true", help="map the long s to s before training")
    p.add_argument("--output", help="vocabulary file (default: vocab.txt in --output-dir)")
    p.set_defaults(func=cmd_vocab_train)
    p = vsub.add_parser("stats", help="subword fertility and UNK portion per language")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("data", nargs="+", help="NER datasets")
    _add_dataset_flags(p)
    p.add_argument("--output", help="output CSV")
    p.set_defaults(func=cmd_vocab_stats)

    mlm = sub.add_parser("mlm", help="masked-language-model pretraining data")
    msub = mlm.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    msub.required = True
    p = msub.add_parser("build", help="create MLM instances and write shards")
    _add_corpus_input(p)
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--seq-len", type=int, default=MAX_SEQ_LEN, help="maximum sequence length (default: %(default)s)")
    p.add_argument("--max-preds", type=int, default=MAX_PREDICTIONS, help="maximum masked positions (default: %(default)s)")
    p.add_argument("--mlm-prob", type=float, default=MLM_PROB, help="masking probability (default: %(default)s)")
    p.add_argument("--dupe", type=int, default=DUPE_FACTOR, help="duplication factor (default: %(default)s)")
    p.add_argument("--whole-word", action="store_true", help="mask whole words")
    p.add_argument("--normalize-long-s", action="store_true", help="map the long s to s before tokenizing")
    p.add_argument("--chunk-bytes", type=int, default=64 << 20, help="maximum shard size (default: %(default)s)")
    p.add_argument("--shard-language", default="xx", help="language tag used in shard names")
    p.set_defaults(func=cmd_mlm_build)
    p = msub.add_parser("budget", help="epochs seen for a pretraining schedule")
    p.add_argument("--steps", type=int, required=True, help="training steps")
    p.add_argument("--batch-size", type=int, required=True, help="sequences per step")
    p.add_argument("--seq-len", type=int, default=MAX_SEQ_LEN, help="subtokens per sequence (default: %(default)s)")
    p.add_argument("--corpus-subtokens", type=int, required=True, help="corpus size in subtokens")
    p.set_defaults(func=cmd_mlm_budget)

    p = sub.add_parser("parse", help="convert a HIPE TSV or CoNLL file to JSON Lines")
    p.add_argument("--input", required=True, help="dataset file")
    _add_dataset_flags(p)
    p.add_argument("--output", help="output JSON Lines file")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("score", help="strict and fuzzy entity precision, recall and F1")
    p.add_argument("--gold", required=True, help="gold dataset")
    p.add_argument("--pred", required=True, help="predicted dataset")
    p.add_argument("--regime", choices=(*REGIMES, "both"), default="both", help="matching regime (default: %(default)s)")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("attr-eval", help="bucketed F1 by entity and sentence attributes")
    p.add_argument("--train", required=True, help="training dataset")
    p.add_argument("--gold", required=True, help="gold test dataset")
    p.add_argument("--pred", required=True, help="predicted test dataset")
    p.add_argument("--buckets", type=int, default=4, help="number of buckets (default: %(default)s)")
    p.add_argument("--attributes", nargs="+", choices=KINDS, default=list(KINDS), metavar="ATTR",
                   help=f"attributes to evaluate (default: all of {', '.join(KINDS)})")
    p.add_argument("--level", choices=("bucket", "raw"), default="bucket", help="correlate buckets or raw values")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_attr_eval)

    tagger = sub.add_parser("tagger", help="train or apply the sequence tagger")
    tsub = tagger.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    tsub.required = True
    p = tsub.add_parser("train", help="train a tagger with dev-set model selection")
    p.add_argument("--config", help="TOML or JSON file with tagger settings")
    p.add_argument("--train", help="training dataset")
    p.add_argument("--dev", help="development dataset")
    p.add_argument("--vocab", help="wordpiece vocabulary for subword features")
    p.add_argument("--init", help="start from this model (multi-stage fine-tuning)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="mini-batch size (default: 8)")
    p.add_argument("--epochs", type=int, help="epochs (default: 10)")
    p.add_argument("--lr", dest="learning_rate", type=float, help="peak learning rate (default: 0.5)")
    p.add_argument("--hash-bits", dest="hash_bits", type=int, help=f"feature hash bits (default: {DEFAULT_HASH_BITS})")
    p.add_argument("--model", help="output model file (default: model.npz in --output-dir)")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_tagger_train)
    p = tsub.add_parser("predict", help="tag a dataset")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--input", required=True, help="dataset to tag")
    p.add_argument("--output", help="output JSON Lines file")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_tagger_predict)

    harness = sub.add_parser("harness", help="hyperparameter searches and fine-tuning experiments")
    hsub = harness.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    hsub.required = True
    for name, mode, text in (
        ("grid", "grid", "grid search on the merged datasets"),
        ("compare", "compare", "single-model versus one-model comparison"),
        ("multistage", "multistage", "multilingual then per-language fine-tuning"),
        ("resume", None, "rerun the config's mode, skipping completed runs"),
    ):
        p = hsub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="TOML or JSON experiment config")
        p.set_defaults(func=_harness(mode))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"histoner: error: {exc}", file=sys.stderr)
        return 1
    except (HistonerError, OSError, UnicodeDecodeError) as exc:
        print(f"histoner: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
