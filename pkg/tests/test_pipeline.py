import json
import os

import pytest

from features.binning import read_sequences
from features.manifest import load_manifest
from helpers import read_csv, read_json
from main import main

TINY_ENV = """\
TIMESTEPS=24
CONV_FILTERS=4
CONV_KERNEL=3
LSTM_HIDDEN=4
ATTN_HEADS=2
FOLDS=2
EPOCHS=3
BATCH_SIZE=32
PATIENCE=2
EXPLAIN_MAX_DAYS=1
EXPLAIN_SAMPLES=40
EXPLAIN_SVG=false
SYNTH_CORPUS=benchmark
SYNTH_FORMAT=tsv
SEED=11
LOG_LEVEL=WARNING
"""

PIPELINE = ["synth", "featurize", "fit-codec", "train", "score", "evaluate", "explain", "report"]


def pipeline_args(env, out):
    common = ["--config", env, "--out", out]
    path = lambda name: os.path.join(out, name)
    model_inputs = ["--sequences", path("sequences.jsonl"), "--codec", path("codec.json"), "--model", path("model.phase")]
    return {
        "synth": common,
        "featurize": common + ["--input", path("corpus.tsv"), "--manifest", path("manifest.csv")],
        "fit-codec": common + ["--sequences", path("sequences.jsonl")],
        "train": common + ["--sequences", path("sequences.jsonl"), "--codec", path("codec.json")],
        "score": common + model_inputs,
        "evaluate": common + model_inputs,
        "explain": common + model_inputs,
        "report": common + ["--report", path("train_report.json"), "--scores", path("scores.csv")],
    }


@pytest.fixture(scope="module")
def tiny_env(tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "tiny.env"
    path.write_text(TINY_ENV)
    return str(path)


@pytest.fixture(scope="module")
def pipeline_out(tiny_env, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run") / "out")
    args = pipeline_args(tiny_env, out)
    for name in PIPELINE:
        assert main([name] + args[name]) == 0, name
    return out


# ----------------------
# End to end
# ----------------------
def test_every_stage_writes_its_artifacts(pipeline_out):
    expected = [
        "corpus.tsv", "corpus.tsv.meta.json", "manifest.csv", "sequences.jsonl", "daily_volume.csv",
        "codec.json", "train_report.json", "loss_history.csv", "model.phase", "scores.csv",
        "entity_summaries.json", "evaluation.json", "top_features.csv", "scatter.csv", "heatmap.csv",
        "beeswarm_t15.csv", "beeswarm_t9.csv", "explanations.json", "report.json",
    ]
    for name in expected:
        assert os.path.exists(os.path.join(pipeline_out, name)), name
    assert not os.path.exists(os.path.join(pipeline_out, "heatmap.svg"))


def test_sequences_cover_the_benchmark(pipeline_out):
    sequences = read_sequences(os.path.join(pipeline_out, "sequences.jsonl"))
    assert len(sequences) == 160
    assert all(s.timesteps == 24 for s in sequences)
    assert sum(s.label for s in sequences) == 40


def test_train_report_and_provenance(pipeline_out):
    report = read_json(os.path.join(pipeline_out, "train_report.json"))
    assert report["k"] == 2
    assert len(report["folds"]) == 2
    assert set(report["provenance"]) == {"config_hash", "seed"}
    assert report["provenance"]["seed"] == 11
    with open(os.path.join(pipeline_out, "scores.csv"), encoding="utf-8") as fh:
        first = fh.readline()
    assert first.startswith("# config_hash=")
    assert first.rstrip().endswith("seed=11")


def test_scores_and_report_bundle(pipeline_out):
    scores = read_csv(os.path.join(pipeline_out, "scores.csv"))
    assert list(scores.columns) == ["entity", "date", "raw", "reported", "band"]
    assert len(scores) == 160
    assert scores["reported"].between(0.01, 0.99).all()

    bundle = read_json(os.path.join(pipeline_out, "report.json"))
    assert sum(bundle["band_histogram"].values()) == 160
    assert len(bundle["entities"]) == 32
    assert bundle["folds"] == 2
    assert set(bundle["metrics"]) >= {"accuracy", "balanced_accuracy", "auc"}

    evaluation = read_json(os.path.join(pipeline_out, "evaluation.json"))
    assert evaluation["sequences"] == 160
    assert 0.0 <= evaluation["metrics"]["accuracy"] <= 1.0


def test_explain_exports(pipeline_out):
    top = read_csv(os.path.join(pipeline_out, "top_features.csv"))
    assert list(top.columns) == ["entity", "date", "t", "feature", "phi"]
    assert len(top) == 24
    # first day in (entity, date) order
    assert top["entity"].iloc[0] == "10.10.0.10"
    heatmap = read_csv(os.path.join(pipeline_out, "heatmap.csv"))
    assert heatmap.shape == (17, 25)
    beeswarm = read_csv(os.path.join(pipeline_out, "beeswarm_t15.csv"))
    assert len(beeswarm) == 17
    explanations = read_json(os.path.join(pipeline_out, "explanations.json"))
    assert explanations["background"].startswith("missing:sha256:")
    assert [d["instance"] for d in explanations["days"]] == [f"10.10.0.10/{top['date'].iloc[0]}"]


def test_rerun_is_byte_identical(pipeline_out, tiny_env):
    names = ["train_report.json", "scores.csv", "top_features.csv", "model.phase", "codec.json"]
    before = {n: open(os.path.join(pipeline_out, n), "rb").read() for n in names}
    args = pipeline_args(tiny_env, pipeline_out)
    for name in ["fit-codec", "train", "score", "explain"]:
        assert main([name] + args[name]) == 0
    for n in names:
        assert open(os.path.join(pipeline_out, n), "rb").read() == before[n], n


# ----------------------
# Ingest
# ----------------------
def test_ingest_pseudonymizes_records_and_manifest(tmp_path, conn_tsv_file, manifest_file):
    out = str(tmp_path / "out")
    key = "ab" * 32
    code = main([
        "ingest", "--out", out, "--input", conn_tsv_file, "--manifest", manifest_file,
        "--pseudonymize", "--set", f"PSEUDONYM_KEY={key}",
    ])
    assert code == 0
    with open(os.path.join(out, "records.jsonl"), encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh]
    assert len(lines) == 10
    assert all(r["id.orig_h"].startswith("anon-") and r["id.resp_h"].startswith("anon-") for r in lines)

    mapping = read_csv(os.path.join(out, "pseudonyms.csv"))
    assert "10.0.0.5" in set(mapping["address"])
    manifest = load_manifest(os.path.join(out, "manifest.csv"))
    assert len(manifest.entries) == 3
    assert all(e.address.startswith("anon-") for e in manifest.entries)

    code = main([
        "featurize", "--out", out, "--records", os.path.join(out, "records.jsonl"),
        "--manifest", os.path.join(out, "manifest.csv"), "--set", "TIMESTEPS=24",
    ])
    assert code == 0
    sequences = read_sequences(os.path.join(out, "sequences.jsonl"))
    assert len(sequences) == 4
    assert all(s.label is not None for s in sequences)


def test_plain_ingest_keeps_addresses(tmp_path, conn_json_file):
    out = str(tmp_path / "out")
    assert main(["ingest", "--out", out, "--input", conn_json_file]) == 0
    with open(os.path.join(out, "records.jsonl"), encoding="utf-8") as fh:
        first = json.loads(fh.readline())
    assert first["id.orig_h"] == "10.0.0.5"
    assert not os.path.exists(os.path.join(out, "pseudonyms.csv"))


def test_pseudonymize_without_key_is_a_config_error(tmp_path, conn_tsv_file, capsys):
    code = main(["ingest", "--out", str(tmp_path), "--input", conn_tsv_file, "--pseudonymize"])
    assert code == 1
    assert "PSEUDONYM_KEY" in capsys.readouterr().err


def test_undecodable_bytes_are_reported_not_fatal(tmp_path, conn_tsv_file):
    log = tmp_path / "mixed.log"
    log.write_bytes(open(conn_tsv_file, "rb").read() + b"\xff\n")
    out = str(tmp_path / "out")
    assert main(["ingest", "--out", out, "--input", str(log)]) == 0
    issues = read_csv(os.path.join(out, "ingest_issues.csv"))
    assert issues["reason"].str.startswith("not UTF-8").sum() == 1


# ----------------------
# Exit codes
# ----------------------
def test_score_without_model_names_the_missing_key(tmp_path, capsys):
    code = main(["score", "--out", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err
    assert "❌" in err
    assert "'score' requires MODEL_PATH" in err
    assert "--model <path>" in err


@pytest.mark.parametrize("argv", [
    ["synth", "--set", "nonsense"],
    ["synth", "--set", "NOT_A_KEY=1"],
    ["synth", "--set", "TIMESTEPS=many"],
    ["synth", "--config", "/nonexistent/phase.env"],
    ["frobnicate"],
])
def test_config_problems_exit_one(argv, tmp_path):
    assert main(argv + (["--out", str(tmp_path)] if argv[0] == "synth" else [])) == 1


def test_unreadable_log_is_a_data_error(tmp_path, capsys):
    bogus = tmp_path / "conn.log"
    bogus.write_text("hello\nworld\n")
    code = main(["featurize", "--out", str(tmp_path / "out"), "--input", str(bogus)])
    assert code == 2
    assert "no day sequences" in capsys.readouterr().err


def test_bad_timesteps_is_a_config_error(tmp_path, conn_tsv_file):
    code = main(["featurize", "--out", str(tmp_path), "--input", conn_tsv_file, "--set", "TIMESTEPS=7"])
    assert code == 1


def test_directory_as_input_is_a_data_error(tmp_path, capsys):
    code = main(["ingest", "--out", str(tmp_path / "out"), "--input", str(tmp_path)])
    assert code == 2
    assert "Cannot read Zeek log" in capsys.readouterr().err
