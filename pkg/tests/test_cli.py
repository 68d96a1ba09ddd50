from __future__ import annotations

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

from histoner.cli import load_config, main, parse_config, tomllib
from histoner.errors import ConfigError
from histoner.ner_corpus import read_jsonl_dataset, write_hipe_tsv
from histoner.synthetic import confidence_corpus, separable_tagging, transferable_tagging

HIPE = Path(__file__).parent / "fixtures" / "hipe_sample.tsv"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestExitCodes:
    def test_score_identical_files(self, capsys):
        code, out, _ = run(capsys, "score", "--gold", str(HIPE), "--pred", str(HIPE))
        assert code == 0
        assert "strict P 100.0 R 100.0 F1 100.0" in out
        assert "fuzzy P 100.0 R 100.0 F1 100.0" in out

    def test_missing_input_names_path(self, capsys, tmp_path):
        missing = tmp_path / "nothing.tsv"
        code, _, err = run(capsys, "score", "--gold", str(missing), "--pred", str(HIPE))
        assert code == 2 and str(missing) in err

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1
        assert "usage" in capsys.readouterr().err

    def test_bad_value_is_usage_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "mlm", "budget", "--steps", "1", "--batch-size", "1", "--corpus-subtokens", "0")
        assert code == 1 and "error" in err

    def test_help_lists_flags(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for flag in ("--seed", "--jobs", "--output-dir", "--quiet"):
            assert flag in out

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "histoner", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("histoner")


class TestCommands:
    def test_budget(self, capsys):
        code, out, _ = run(capsys, "mlm", "budget", "--steps", "3000000", "--batch-size", "128",
                           "--corpus-subtokens", "42000000000")
        assert code == 0 and json.loads(out)["epochs_rounded"] == 4.7

    def test_parse(self, capsys, tmp_path):
        out_file = tmp_path / "s.jsonl"
        code, out, _ = run(capsys, "parse", "--input", str(HIPE), "--output", str(out_file), "--language", "de")
        assert code == 0 and out.startswith("4 sentences")
        assert [s.language for s in read_jsonl_dataset(out_file)] == ["de"] * 4

    def test_attr_eval_outputs(self, capsys, tmp_path):
        code, out, _ = run(capsys, "--output-dir", str(tmp_path), "attr-eval", "--train", str(HIPE),
                           "--gold", str(HIPE), "--pred", str(HIPE), "--buckets", "2", "--attributes", "eLen", "sLen")
        assert code == 0 and "eLen: rho" in out
        assert (tmp_path / "attributes.csv").read_text().startswith("attribute,bucket,lo,hi,count,f1")
        summary = json.loads((tmp_path / "attributes.json").read_text())
        assert [s["attribute"] for s in summary] == ["eLen", "sLen"]


def _write_corpus(path, docs):
    path.write_text("".join(json.dumps(d.to_dict()) + "\n" for d in docs), encoding="utf-8")


def test_full_pipeline(capsys, tmp_path):
    t0 = time.perf_counter()
    corpus = tmp_path / "corpus.jsonl"
    _write_corpus(corpus, confidence_corpus(40))
    train, dev = separable_tagging()
    write_hipe_tsv(train, tmp_path / "train.tsv")
    write_hipe_tsv(dev, tmp_path / "dev.tsv")
    out = tmp_path / "out"

    steps = [
        ["corpus", "filter", "--input", str(corpus), "--threshold", "0.6"],
        ["vocab", "train", str(out / "filtered.jsonl"), str(tmp_path / "train.tsv"), "--size", "200"],
        ["parse", "--input", str(tmp_path / "dev.tsv")],
        ["tagger", "train", "--train", str(tmp_path / "train.tsv"), "--dev", str(out / "dev.jsonl"),
         "--vocab", str(out / "vocab.txt"), "--batch-size", "4", "--epochs", "10", "--hash-bits", "16"],
        ["tagger", "predict", "--model", str(out / "model.npz"), "--input", str(out / "dev.jsonl")],
        ["score", "--gold", str(out / "dev.jsonl"), "--pred", str(out / "predictions.jsonl")],
        ["attr-eval", "--train", str(tmp_path / "train.tsv"), "--gold", str(out / "dev.jsonl"),
         "--pred", str(out / "predictions.jsonl")],
    ]
    outputs = []
    for argv in steps:
        code, stdout, err = run(capsys, "--output-dir", str(out), *argv)
        assert code == 0, (argv, err)
        outputs.append(stdout)
    assert json.loads(outputs[0])["kept_docs"] < 40
    assert json.loads(outputs[3])["dev_f1"] == 100.0
    assert "strict P 100.0 R 100.0 F1 100.0" in outputs[5]
    for name in ("filtered.jsonl", "vocab.txt", "model.npz", "scores.csv", "attributes.csv"):
        assert (out / name).exists()
    assert time.perf_counter() - t0 < 60

    # Re-running is idempotent: identical bytes for every machine-readable output.
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    for argv in steps:
        assert run(capsys, "--output-dir", str(out), *argv)[0] == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == before


def test_tagger_config_file(capsys, tmp_path):
    train, dev = separable_tagging()
    write_hipe_tsv(train, tmp_path / "train.tsv")
    write_hipe_tsv(dev, tmp_path / "dev.tsv")
    cfg = tmp_path / "tagger.toml"
    cfg.write_text('train = "train.tsv"\ndev = "dev.tsv"\nbatch_size = 4\nepochs = 2\nhash_bits = 12\nmodel = "m.npz"\n')
    code, out, _ = run(capsys, "tagger", "train", "--config", str(cfg), "--epochs", "3")
    assert code == 0
    assert len(json.loads(out)["history"]) == 3
    assert (tmp_path / "m.npz").exists()
    cfg.write_text('bogus = 1\n')
    assert run(capsys, "tagger", "train", "--config", str(cfg))[0] == 1


@pytest.fixture()
def experiment(tmp_path):
    for lang, (train, dev) in transferable_tagging().items():
        write_hipe_tsv(train, tmp_path / f"{lang}-train.tsv")
        write_hipe_tsv(dev, tmp_path / f"{lang}-dev.tsv")
    cfg = tmp_path / "exp.toml"
    cfg.write_text(
        'output_dir = "runs"\nhash_bits = 14\n'
        '[datasets.de]\ntrain = "de-train.tsv"\ndev = "de-dev.tsv"\n'
        '[datasets.fr]\ntrain = "fr-train.tsv"\ndev = "fr-dev.tsv"\n'
        '[grid]\nbatch_sizes = [4, 8]\nepoch_counts = [2]\nlearning_rates = [0.5]\nseeds = [1]\n'
        '[stage1_grid]\nbatch_sizes = [4]\nepoch_counts = [2]\nlearning_rates = [0.5]\nseeds = [1]\n'
        '[stage2_grid]\nbatch_sizes = [4]\nepoch_counts = [2]\nlearning_rates = [0.5]\nseeds = [1, 2]\n'
    )
    return cfg


class TestHarnessCommands:
    def test_grid_and_resume(self, capsys, experiment):
        code, out, _ = run(capsys, "harness", "grid", "--config", str(experiment))
        assert code == 0 and json.loads(out)["runs"] == 2
        runs = experiment.parent / "runs"
        ledger = runs / "grid" / "runs.jsonl"
        ranking = (runs / "ranking.csv").read_text()
        assert len(ledger.read_text().splitlines()) == 2
        code, _, _ = run(capsys, "harness", "resume", "--config", str(experiment))
        assert code == 0
        assert len(ledger.read_text().splitlines()) == 2
        assert (runs / "ranking.csv").read_text() == ranking

    def test_compare(self, capsys, experiment):
        code, out, _ = run(capsys, "--jobs", "2", "harness", "compare", "--config", str(experiment))
        summary = json.loads(out)
        assert code == 0 and (summary["single_runs"], summary["one_runs"]) == (4, 2)
        assert (experiment.parent / "runs" / "comparison.csv").exists()

    def test_multistage(self, capsys, experiment):
        code, out, _ = run(capsys, "harness", "multistage", "--config", str(experiment))
        summary = json.loads(out)
        assert code == 0 and summary["trainings"] == 1 + 2 * 2
        assert all(r["stage2_f1"] >= r["stage1_f1"] for r in summary["rows"])

    def test_missing_dataset_exits_2(self, capsys, experiment):
        (experiment.parent / "fr-dev.tsv").unlink()
        code, _, err = run(capsys, "harness", "grid", "--config", str(experiment))
        assert code == 2 and "fr-dev.tsv" in err


class TestConfig:
    def test_env_overrides_scalars(self, experiment):
        env = {"HISTONER_HASH_BITS": "12", "HISTONER_NORMALIZE_LONG_S": "yes", "HISTONER_MODE": "compare"}
        cfg = load_config(experiment, environ=env)
        assert (cfg.hash_bits, cfg.normalize_long_s, cfg.mode) == (12, True, "compare")
        assert load_config(experiment, environ={}).hash_bits == 14

    def test_json_equivalent_to_toml(self, tmp_path, experiment):
        data = tomllib.loads(experiment.read_text())
        (experiment.parent / "exp.json").write_text(json.dumps(data))
        a = load_config(experiment, environ={})
        b = load_config(experiment.parent / "exp.json", environ={})
        assert a == b

    def test_bad_override(self):
        with pytest.raises(ConfigError):
            parse_config({}, environ={"HISTONER_NORMALIZE_LONG_S": "maybe"})
        with pytest.raises(ConfigError):
            parse_config({}, environ={"HISTONER_JOBS": "many"})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            parse_config({"colour": "red"}, environ={})
