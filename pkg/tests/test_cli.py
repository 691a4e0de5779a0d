import json
import time

import numpy as np
import pytest

from bugsev.artifact import FORMAT_VERSION, load_model, open_envelope, save_model, to_envelope
from bugsev.cli import main
from bugsev.config import MODEL_KINDS, RunConfig, load_config
from bugsev.corpus import BugReport, read_jsonl, write_jsonl
from bugsev.errors import ChecksumError, ConfigError, VersionError
from bugsev.models import train
from bugsev.synth import synthetic_corpus, write_csv

FAST_GBDT = {k: {"rounds": 10} for k in ("xgboost", "lightgbm", "catboost")}


@pytest.fixture
def csv_path(tmp_path):
    path = tmp_path / "bugs.csv"
    write_csv(synthetic_corpus(25, 25, seed=1), path)
    return path


@pytest.fixture
def corpus_path(tmp_path, csv_path):
    out = tmp_path / "corpus.jsonl"
    assert main(["ingest", "--input", str(csv_path), "--out", str(out)]) == 0
    return out


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(RunConfig(hyperparameters=FAST_GBDT).to_dict()))
    return path


def random_reports(n, seed):
    rng = np.random.default_rng(seed)
    words = ["crash0", "hang1", "typo0", "label2", "editor0", "menu1", "unseen", "freeze3", "icon1"]
    types = [None, "UI", "Core", "Network", "Quantum"]
    return [
        BugReport("P", i, "", " ".join(rng.choice(words, size=int(rng.integers(0, 7)))), types[rng.integers(5)], None, "")
        for i in range(n)
    ]


# ---------------------------------------------------------------- ingest

def test_ingest_writes_corpus_and_ledger(tmp_path, csv_path, capsys):
    out = tmp_path / "c.jsonl"
    assert main(["ingest", "--input", str(csv_path), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "prevalence(HIGH)=50.00%" in printed and "total=50" in printed
    assert len(read_jsonl(out)) == 50
    ledger = json.loads((tmp_path / "c.jsonl.ledger.json").read_text())
    assert ledger["total_rows"] == 50 and ledger["excluded_rows"] == 0


def test_ingest_header_only(tmp_path, capsys):
    src = tmp_path / "empty.csv"
    src.write_text("Project,Bug_ID,Resolution_Status,Short_Description,Bug_Type,Priority_Label,Severity_Label\n")
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "e.jsonl")]) == 0
    assert "warning" in capsys.readouterr().err
    assert (tmp_path / "e.jsonl").read_text() == ""


def test_ingest_missing_column(tmp_path, capsys):
    src = tmp_path / "bad.csv"
    src.write_text("Project,Bug_ID,Resolution_Status,Short_Description,Bug_Type,Priority_Label\nE,1,FIXED,x,UI,P1\n")
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "b.jsonl")]) == 2
    assert "Severity_Label" in capsys.readouterr().err


def test_ingest_bad_row_reports_line(tmp_path, capsys):
    src = tmp_path / "bad.csv"
    src.write_text("Project,Bug_ID,Resolution_Status,Short_Description,Bug_Type,Priority_Label,Severity_Label\n"
                   "E,1,FIXED,x,UI,P1,major\nE,one,FIXED,y,UI,P1,major\n")
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "b.jsonl")]) == 3
    assert "line 3" in capsys.readouterr().err


def test_ingest_custom_policy_via_config(tmp_path, csv_path):
    cfg = tmp_path / "cfg.json"
    policy = {"blocker": "HIGH", "critical": "HIGH", "major": "EXCLUDED", "normal": "LOW", "minor": "LOW", "trivial": "LOW"}
    cfg.write_text(json.dumps({"version": 1, "severity_policy": policy}))
    out = tmp_path / "c.jsonl"
    assert main(["ingest", "--input", str(csv_path), "--out", str(out), "--config", str(cfg)]) == 0
    ledger = json.loads((tmp_path / "c.jsonl.ledger.json").read_text())
    assert ledger["reasons"] == {"excluded_severity": ledger["excluded_rows"]} and ledger["excluded_rows"] > 0


# ---------------------------------------------------------------- train / evaluate

def test_train_logreg(tmp_path, corpus_path, capsys):
    art = tmp_path / "m.json"
    assert main(["train", "--corpus", str(corpus_path), "--model", "logreg", "--out", str(art)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["metrics"]["accuracy"] >= 0.9 and out["test_rows"] == 10
    assert json.loads(art.read_text())["format_version"] == FORMAT_VERSION


def test_train_scope_and_unknown_models(tmp_path, corpus_path, capsys):
    art = str(tmp_path / "m.json")
    assert main(["train", "--corpus", str(corpus_path), "--model", "distilbert", "--out", art]) == 2
    assert "unsupported: out of scope" in capsys.readouterr().err
    assert main(["train", "--corpus", str(corpus_path), "--model", "bogus", "--out", art]) == 2
    err = capsys.readouterr().err
    assert all(k in err for k in MODEL_KINDS)


def test_train_degenerate_corpus(tmp_path):
    c = synthetic_corpus(10, 0, seed=1)
    path = tmp_path / "one.jsonl"
    write_jsonl(c, path)
    assert main(["train", "--corpus", str(path), "--model", "logreg", "--out", str(tmp_path / "m.json")]) == 3


def test_train_is_byte_identical(tmp_path, corpus_path, config_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["train", "--corpus", str(corpus_path), "--model", "catboost", "--config", str(config_path), "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_evaluate_command(tmp_path, corpus_path, capsys):
    art = tmp_path / "m.json"
    main(["train", "--corpus", str(corpus_path), "--model", "naive_bayes", "--out", str(art)])
    capsys.readouterr()
    assert main(["evaluate", "--artifact", str(art), "--corpus", str(corpus_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["rows"] == 50 and out["model"] == "naive_bayes"


def test_bad_config_is_usage_error(tmp_path, corpus_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "sed": 3}))
    assert main(["train", "--corpus", str(corpus_path), "--model", "logreg", "--config", str(cfg), "--out", str(tmp_path / "m.json")]) == 2
    cfg.write_text(json.dumps({"version": 9}))
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_config_round_trip():
    cfg = RunConfig(seed=4, min_df=1, hyperparameters={"knn": {"k": 3}})
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


# ---------------------------------------------------------------- benchmark

def test_benchmark_fifty_rows(tmp_path, corpus_path, capsys):
    out = tmp_path / "report.json"
    start = time.perf_counter()
    code = main(["benchmark", "--corpus", str(corpus_path), "--out", str(out)])
    assert time.perf_counter() - start < 60
    assert code == 0
    report = json.loads(out.read_text())
    assert report["config"]["folds"] == 3
    assert len(report["models"]) == 9
    assert (tmp_path / "report.md").exists()
    assert "ranked by accuracy" in capsys.readouterr().out


def test_benchmark_partial_failure(tmp_path, corpus_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "models": ["logreg", "knn"], "hyperparameters": {"knn": {"k": 999}}}))
    out = tmp_path / "r.json"
    assert main(["benchmark", "--corpus", str(corpus_path), "--config", str(cfg), "--out", str(out), "--folds", "2"]) == 1
    report = json.loads(out.read_text())
    assert report["models"]["knn"]["status"] == "failed"
    assert report["models"]["logreg"]["cv"]["k"] == 2


# ---------------------------------------------------------------- predict / artifacts

def test_predict_outputs(tmp_path, corpus_path, capsys):
    art = tmp_path / "m.json"
    main(["train", "--corpus", str(corpus_path), "--model", "linear_svm", "--out", str(art)])
    capsys.readouterr()
    assert main(["predict", "--artifact", str(art), "--text", "", "--bug-type", "UI"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"label", "probability", "model"}
    assert 0.0 <= out["probability"] <= 1.0 and out["model"] == "linear_svm"
    assert main(["predict", "--artifact", str(art), "--text", "Crash0 hang1 freeze2"]) == 0
    assert json.loads(capsys.readouterr().out)["label"] == "HIGH"


def test_predict_checksum_and_version(tmp_path, corpus_path, capsys):
    art = tmp_path / "m.json"
    main(["train", "--corpus", str(corpus_path), "--model", "logreg", "--out", str(art)])
    env = json.loads(art.read_text())
    env["payload"]["model"]["params"]["bias"] += 0.5
    tampered = tmp_path / "t.json"
    tampered.write_text(json.dumps(env))
    assert main(["predict", "--artifact", str(tampered), "--text", "x"]) == 4
    env = json.loads(art.read_text())
    env["format_version"] = 2
    future = tmp_path / "f.json"
    future.write_text(json.dumps(env))
    assert main(["predict", "--artifact", str(future), "--text", "x"]) == 5
    garbage = tmp_path / "g.json"
    garbage.write_text("{not json")
    assert main(["predict", "--artifact", str(garbage), "--text", "x"]) == 4


def test_version_checked_before_checksum(small_corpus):
    env = to_envelope(train(small_corpus, "logreg"))
    env["format_version"] = 0
    env["checksum"] = "sha256:bad"
    with pytest.raises(VersionError):
        open_envelope(env)
    env["format_version"] = FORMAT_VERSION
    with pytest.raises(ChecksumError):
        open_envelope(env)


def test_cli_round_trip_matches_in_memory(tmp_path, small_corpus):
    model = train(small_corpus, "sgd")
    art = tmp_path / "m.json"
    save_model(model, art)
    reports = random_reports(100, seed=3)
    assert np.array_equal(model.predict_proba(reports), load_model(art).predict_proba(reports))


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_round_trip_every_kind(tmp_path, small_corpus, kind):
    model = train(small_corpus, kind, RunConfig(hyperparameters=FAST_GBDT))
    art = tmp_path / f"{kind}.json"
    save_model(model, art)
    loaded = load_model(art)
    reports = random_reports(100, seed=7)
    a, b = model.predict_proba(reports), loaded.predict_proba(reports)
    assert a.tobytes() == b.tobytes()
    assert np.all((a >= 0) & (a <= 1))
