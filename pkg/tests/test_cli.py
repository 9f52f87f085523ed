import csv
import json
import os
import subprocess
import sys

import pytest

from fewner.cli import main
from fewner.corpus import Tag, TaggedSentence, load_viem_dataset, parse_conll, serialize_conll
from helpers import make_separable_corpus

SN, SV, O = Tag.SN, Tag.SV, Tag.O


@pytest.fixture(scope="module")
def dataset_root(tmp_path_factory):
    """Tiny dataset tree: memc plus two transfer categories."""
    root = tmp_path_factory.mktemp("dataset")
    sents = make_separable_corpus(100, seed=21)

    def write(category, split, chunk):
        d = root / category
        d.mkdir(exist_ok=True)
        (d / f"{split}.txt").write_text(serialize_conll(chunk), encoding="utf-8")

    write("memc", "train", sents[:40])
    write("memc", "valid", sents[40:46])
    write("memc", "test", sents[46:56])
    write("bypass", "train", sents[56:76])
    write("bypass", "test", sents[76:81])
    write("xss", "train", sents[81:95])
    write("xss", "test", sents[95:100])
    return str(root)


@pytest.fixture(scope="module")
def run_dir(dataset_root, tiny_encoder, tmp_path_factory):
    """A trained checkpoint produced through the CLI train verb."""
    out = tmp_path_factory.mktemp("run")
    rc = main(
        [
            "train",
            "--root", dataset_root,
            "--category", "memc",
            "--encoder", tiny_encoder,
            "--proportion", "0.5",
            "--grid", "5e-3,3",
            "--batch-size", "8",
            "--restarts", "2",
            "--out", str(out),
        ]
    )
    assert rc == 0
    return out


def test_ingest_reports_counts(dataset_root, capsys):
    assert main(["ingest", "--root", dataset_root]) == 0
    out = capsys.readouterr().out
    assert "memc/train: 40 sentences" in out
    assert "total: 100 sentences across 7 files" in out


def test_ingest_normalized_copy_reloads(dataset_root, tmp_path):
    dest = tmp_path / "copy"
    assert main(["ingest", "--root", dataset_root, "--out", str(dest)]) == 0
    corpus = load_viem_dataset(dest)
    assert len(corpus.get("memc", "train")) == 40


def test_stats_table_and_csv(dataset_root, tmp_path, capsys):
    csv_path = tmp_path / "stats.csv"
    assert main(["stats", "--root", dataset_root, "--csv", str(csv_path)]) == 0
    out = capsys.readouterr().out
    assert "memc" in out and "non-entity-only" in out
    rows = list(csv.DictReader(csv_path.open()))
    memc_train = next(r for r in rows if r["category"] == "memc" and r["split"] == "train")
    assert memc_train["n"] == "40"
    # separable corpus: every sentence has entities
    assert memc_train["sentence_entity_prop"] == "1.0000"


def test_sample_proportion_writes_files_and_manifest(dataset_root, tmp_path):
    out = tmp_path / "subset"
    rc = main(
        ["sample", "--root", dataset_root, "--category", "memc",
         "--proportion", "0.5", "--seed", "42", "--out", str(out)]
    )
    assert rc == 0
    train = parse_conll((out / "train.txt").read_text())
    valid = parse_conll((out / "valid.txt").read_text())
    assert len(train) == 20
    assert len(valid) == 4  # min(20, floor(0.1 * 40))
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 42
    assert manifest["mode"] == "proportion"
    assert manifest["generator"]


def test_sample_counts_aggregate(dataset_root, tmp_path):
    out = tmp_path / "counts"
    rc = main(
        ["sample", "--root", dataset_root, "--category", "bypass,xss",
         "--counts", "2", "--aggregate", "--seed", "42", "--out", str(out)]
    )
    assert rc == 0
    agg = parse_conll((out / "k2" / "aggregate.txt").read_text())
    assert len(agg) == 4
    assert (out / "k2" / "bypass" / "manifest.json").is_file()


def test_sample_byte_identical_across_processes(dataset_root, tmp_path):
    """Seed-42 subsets are byte-identical across two fresh interpreter runs."""
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cmd = [
            sys.executable, "-m", "fewner", "sample",
            "--root", dataset_root, "--category", "memc",
            "--proportion", "0.5", "--seed", "42", "--out", str(out),
        ]
        env = dict(os.environ, PYTHONHASHSEED=str(hash(name) % 100))
        subprocess.run(cmd, check=True, capture_output=True, env=env)
        outputs.append((out / "train.txt").read_bytes())
    assert outputs[0] == outputs[1]


def test_sample_unknown_category_fails(dataset_root, tmp_path, capsys):
    rc = main(
        ["sample", "--root", dataset_root, "--category", "nope",
         "--proportion", "0.5", "--out", str(tmp_path / "x")]
    )
    assert rc == 2
    assert "unknown category" in capsys.readouterr().err


def test_eval_verb(tmp_path, capsys):
    gold = [TaggedSentence(("a", "b", "c"), (SN, O, SV))]
    pred = [TaggedSentence(("a", "b", "c"), (SN, SN, O))]
    gold_path = tmp_path / "gold.txt"
    pred_path = tmp_path / "pred.txt"
    gold_path.write_text(serialize_conll(gold), encoding="utf-8")
    pred_path.write_text(serialize_conll(pred), encoding="utf-8")
    report_path = tmp_path / "report.csv"
    rc = main(["eval", "--gold", str(gold_path), "--pred", str(pred_path),
               "--out", str(report_path)])
    assert rc == 0
    row = list(csv.DictReader(report_path.open()))[0]
    assert row["SN precision"] == "0.5000"
    assert row["SN recall"] == "1.0000"
    rc = main(["eval", "--gold", str(gold_path), "--pred", str(pred_path), "--span-level"])
    assert rc == 0
    assert "span" in capsys.readouterr().out


def test_train_verb_outputs(run_dir):
    assert (run_dir / "best.ckpt").is_file()
    assert (run_dir / "config.json").is_file()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["encoder"]
    assert manifest["stage"]["train_size"] == 20
    assert len(manifest["stage"]["grid_cells"]) == 1
    assert manifest["stage"]["restart_seeds"] == [42, 43]
    assert "test_summary" in manifest["stage"]
    assert "environment" in manifest
    # metrics.csv: restart x checkpoint rows
    rows = list(csv.DictReader((run_dir / "metrics.csv").open()))
    assert len(rows) == 2 * 5
    assert {r["restart"] for r in rows} == {"0", "1"}
    assert all("weighted_f1" in r for r in rows)
    # per-restart checkpoint files
    for restart in (0, 1):
        files = sorted((run_dir / "checkpoints" / f"restart-{restart}").glob("step-*.pt"))
        assert len(files) == 5


def test_structshot_verb(dataset_root, run_dir, tmp_path, capsys):
    support = tmp_path / "support.txt"
    test_file = tmp_path / "test.txt"
    sents = make_separable_corpus(12, seed=31)
    support.write_text(serialize_conll(sents[:6]), encoding="utf-8")
    test_file.write_text(serialize_conll(sents[6:]), encoding="utf-8")
    out = tmp_path / "pred.txt"
    rc = main(
        ["structshot", "--model", str(run_dir / "best.ckpt"),
         "--support", str(support), "--test", str(test_file), "--out", str(out)]
    )
    assert rc == 0
    preds = parse_conll(out.read_text())
    assert len(preds) == 6
    assert [len(p) for p in preds] == [6] * 6
    rc = main(
        ["structshot", "--model", str(run_dir / "best.ckpt"),
         "--support", str(support), "--test", str(test_file), "--no-crf"]
    )
    assert rc == 0
    assert capsys.readouterr().out.strip()


def test_probe_verb(run_dir, tmp_path, capsys):
    sents = make_separable_corpus(8, seed=41)
    pool = tmp_path / "pool.txt"
    test_file = tmp_path / "test.txt"
    pool.write_text(serialize_conll(sents[:3]), encoding="utf-8")
    test_file.write_text(serialize_conll(sents[3:]), encoding="utf-8")
    out = tmp_path / "probe.csv"
    rc = main(
        ["probe", "--model", str(run_dir / "best.ckpt"), "--pool", str(pool),
         "--test", str(test_file), "--out", str(out)]
    )
    assert rc == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 3
    assert rows[0]["support_size"] == "1"


def test_export_emb_verb(run_dir, tmp_path, capsys):
    from fewner.structshot import read_embeddings_binary, read_embeddings_text

    sents = make_separable_corpus(3, seed=51)
    inp = tmp_path / "in.txt"
    inp.write_text(serialize_conll(sents), encoding="utf-8")
    out_text = tmp_path / "emb.tsv"
    assert main(["export-emb", "--model", str(run_dir / "best.ckpt"),
                 "--input", str(inp), "--out", str(out_text)]) == 0
    assert len(read_embeddings_text(out_text)) == 18
    out_bin = tmp_path / "emb.bin"
    assert main(["export-emb", "--model", str(run_dir / "best.ckpt"),
                 "--input", str(inp), "--format", "binary", "--out", str(out_bin)]) == 0
    assert len(read_embeddings_binary(out_bin)) == 18


def test_sweep_ft_verb(dataset_root, tiny_encoder, tmp_path, capsys):
    rc = main(
        ["sweep-ft", "--root", dataset_root, "--encoder", tiny_encoder,
         "--proportions", "0.4,0.5", "--grid", "5e-3,2", "--batch-size", "8",
         "--restarts", "1", "--out", str(tmp_path / "sweep")]
    )
    assert rc == 0
    out = capsys.readouterr().out
    lines = [l for l in out.strip().split("\n") if l]
    # header + 2 proportions x (1 restart + 1 summary)
    assert len(lines) == 1 + 4
    assert (tmp_path / "sweep" / "ft_sweep.csv").is_file()


def test_matrix_verb(dataset_root, tiny_encoder, tmp_path, capsys):
    rc = main(
        ["matrix", "--root", dataset_root, "--encoder", tiny_encoder,
         "--proportion", "0.5", "--count", "2", "--grid", "5e-3,2",
         "--batch-size", "8", "--out", str(tmp_path / "matrix")]
    )
    assert rc == 0
    out = capsys.readouterr().out
    for setting in ("FT", "FT+SS", "FT+TL", "FT+TL+SS"):
        assert setting in out
    table = (tmp_path / "matrix" / "matrix.csv").read_text()
    assert table.splitlines()[1].startswith("FT,")


def test_transfer_verb(dataset_root, run_dir, tmp_path, capsys):
    rc = main(
        ["transfer", "--root", dataset_root, "--from", str(run_dir / "best.ckpt"),
         "--counts", "2", "--aggregate", "--grid", "5e-3,2", "--restarts", "2",
         "--out", str(tmp_path / "tl")]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "tl-aggregate-k2" in out
    assert (tmp_path / "tl" / "transfer.csv").is_file()


def test_config_file_with_cli_override(dataset_root, tiny_encoder, tmp_path):
    config_path = tmp_path / "experiment.json"
    config_path.write_text(
        json.dumps(
            {
                "encoder": tiny_encoder,
                "ft_proportion": 0.5,
                "grid": [[5e-3, 2]],
                "restarts": 1,
                "batch_size": 8,
            }
        ),
        encoding="utf-8",
    )
    out = tmp_path / "run"
    # --restarts overrides the config file's value
    rc = main(
        ["train", "--root", dataset_root, "--config", str(config_path),
         "--restarts", "2", "--out", str(out)]
    )
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["restarts"] == 2
    assert manifest["config"]["ft_proportion"] == 0.5


def test_missing_root_is_clean_error(tmp_path, capsys):
    rc = main(["stats", "--root", str(tmp_path / "missing")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err
