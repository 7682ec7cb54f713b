import json

import pytest

from specret import cli

TINY_CONFIG = """\
[model]
d = 16
heads = 2
mol_layers = 1
spec_layers = 1
dec_layers = 1
[contrastive]
epochs = 1
batch_size = 8
[gen]
epochs = 1
[pretrain]
epochs = 1
[beam]
beam_width = 2
max_length = 16
"""


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY_CONFIG)
    assert run("synth", "--count", 20, "--decoys", 10, "--seed", 3, "--out", root / "data") == 0
    return root


def test_full_pipeline(workspace, capsys):
    w, cfg = workspace, workspace / "tiny.cfg"
    data = w / "data"
    assert run("pretrain", "--smiles", data / "library.tsv", "--config", cfg, "--out", w / "pre") == 0
    assert run("train-align", "--data", data / "train.tsv", "--init", w / "pre" / "checkpoint.bin",
               "--config", cfg, "--seed", 1, "--out", w / "s1") == 0
    header = (w / "s1" / "loss.csv").read_text().splitlines()[0]
    assert header == "step,loss_ms2mol,loss_mol2ms,loss_pre"
    assert run("index", "--smiles", data / "library.tsv", "--checkpoint", w / "s1" / "checkpoint.bin",
               "--config", cfg, "--out", w / "lib") == 0
    assert run("train-gen", "--data", data / "train.tsv", "--library", data / "library.tsv",
               "--stage1", w / "s1" / "checkpoint.bin", "--mode", "all", "--k", 4,
               "--config", cfg, "--out", w / "s2") == 0
    assert run("retrieve", "--spectra", data / "test.tsv", "--library", w / "lib" / "library.tsv",
               "--checkpoint", w / "s1" / "checkpoint.bin", "--mode", "all", "--k", 4,
               "--generative", "off", "--config", cfg, "--out", w / "ret") == 0
    rows = [json.loads(l) for l in (w / "ret" / "results.jsonl").read_text().splitlines()]
    assert len(rows) == 4 and all(len(r["ranking"]) == 4 for r in rows)
    manifest = json.loads((w / "s1" / "manifest.json").read_text())
    assert manifest["command"] == "train-align" and manifest["seed"] == 1
    assert manifest["config"]["model"]["d"] == 16
    assert (w / "s1" / "config.txt").read_text().startswith("[model]")
    # a molecular encoder other than the one that embedded the library
    assert run("train-align", "--data", data / "train.tsv", "--config", cfg, "--seed", 7,
               "--out", w / "other") == 0
    assert run("retrieve", "--spectra", data / "test.tsv", "--library", w / "lib" / "library.tsv",
               "--checkpoint", w / "other" / "checkpoint.bin", "--mode", "all",
               "--config", cfg, "--out", w / "bad") == cli.EXIT_MISMATCH
    assert run("eval", "--results", w / "ret" / "results.jsonl", "--truth", data / "test.tsv",
               "--out", w / "ev") == 0
    report = json.loads((w / "ev" / "report.json").read_text())
    assert report["queries"] == 4
    assert "model" in capsys.readouterr().out


def test_ingest_counts_and_dedups(workspace, capsys):
    data = workspace / "data"
    assert run("ingest", "--tsv", data / "test.tsv", "--train-smiles", data / "train_smiles.txt",
               "--out", workspace / "ing") == 0
    assert "read 4 kept 4" in capsys.readouterr().out
    assert run("ingest", "--tsv", data / "train.tsv", "--train-smiles", data / "train_smiles.txt",
               "--out", workspace / "ing2") == cli.EXIT_DATA


def test_mces_batch(tmp_path):
    pairs = tmp_path / "pairs.tsv"
    pairs.write_text("smiles_a\tsmiles_b\nCCO\tCCCO\nC1CC\tCC\n")
    assert run("mces", "--pairs", pairs, "--out", tmp_path / "m") == 0
    lines = (tmp_path / "m" / "mces.tsv").read_text().splitlines()
    assert lines[1].startswith("1\t") and lines[2].startswith("error")


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[model]\nwidth = 3\n")
    assert run("pretrain", "--smiles", bad, "--config", bad, "--out", tmp_path / "o") == cli.EXIT_USAGE
    assert run("mces", "--pairs", tmp_path / "missing.tsv", "--out", tmp_path / "o") == cli.EXIT_DATA
    with pytest.raises(SystemExit) as exc:
        run("retrieve")
    assert exc.value.code == cli.EXIT_USAGE
