import json

import pytest

from conftest import CORPUS, TINY_MODEL
from reqgen.cli import main
from reqgen.corpus import load_corpus, tokenize
from reqgen.metrics import TABLE_COLUMNS
from reqgen.model.params import load_checkpoint
from reqgen.ontology import InjectionPlan
from reqgen.pipeline import (
    ExperimentConfig,
    Toggles,
    UsageError,
    mean_report,
    parse_keywords,
    setting_label,
    threshold_label,
)


def run(*argv):
    return main([str(a) for a in argv])


def out_dir(cfg_path):
    return ExperimentConfig.load(cfg_path).out_dir


# --- config and labels ------------------------------------------------------------

def test_config_paths_resolve_relative_to_file(tmp_path):
    p = tmp_path / "sub" / "c.json"
    p.parent.mkdir()
    p.write_text(json.dumps({"ontology": "o.jsonl", "corpus": "../c.jsonl"}))
    exp = ExperimentConfig.load(p)
    assert exp.ontology == p.parent / "o.jsonl"
    assert exp.checkpoint == exp.out_dir / "model.json"


def test_config_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"ontology": "o", "corpus": "c", "bogus": 1}))
    with pytest.raises(UsageError, match="unknown config keys"):
        ExperimentConfig.load(p)
    p.write_text(json.dumps({"corpus": "c"}))
    with pytest.raises(UsageError):
        ExperimentConfig.load(p)
    p.write_text("{")
    with pytest.raises(UsageError):
        ExperimentConfig.load(p)


def test_labels():
    plan = InjectionPlan.from_label("1(5),2(2),4(1)", 10)
    assert setting_label(plan, 10, Toggles()) == "Layer 1,2,4+ 10 Fre.+Copy+ Syntax cons. (ReqGen)"
    assert setting_label(plan, 10, Toggles(syntax=False)) == "Layer 1,2,4+ 10 Fre.+Copy"
    assert setting_label(plan, 0, Toggles(injection=False, copy=False, syntax=False)) == "No injection"
    assert [threshold_label(t) for t in (0, 10, 50)] == ["no", "10", "50"]


def test_parse_keywords():
    assert parse_keywords("landing, internal simulator,ground") == [
        ("landing",), ("internal", "simulator"), ("ground",)]
    with pytest.raises(UsageError):
        parse_keywords("landing")
    with pytest.raises(UsageError):
        parse_keywords("landing, ,")


# --- prepare ----------------------------------------------------------------------

def test_prepare_preserves_keywords_and_reports_coverage(make_config):
    cfg = make_config()
    assert run("prepare", "--config", cfg) == 0
    out = out_dir(cfg)
    originals = {r.id: r for r in load_corpus(CORPUS)}
    prepared = load_corpus(out / "prepared.jsonl")
    assert len(prepared) == len(originals)
    for rec in prepared:
        src = originals[rec.id]
        if src.keywords:
            assert rec.keywords == src.keywords
        assert len(rec.keywords) >= 2
    coverage = json.loads((out / "coverage.json").read_text())
    assert {"keywords", "matched", "coverage", "records", "unmatched", "skipped"} <= set(coverage)
    assert 0 <= coverage["coverage"] <= 1
    rows = [json.loads(x) for x in (out / "prepared.jsonl").read_text().splitlines()]
    for r in rows:
        assert len(r["copy_labels"]) == len(tokenize(r["text"]))
        assert any(r["copy_labels"])


def test_prepare_skips_bad_records(make_config, tmp_path):
    corpus = tmp_path / "c.jsonl"
    corpus.write_text(CORPUS.read_text().splitlines()[0] + "\n"
                      + json.dumps({"id": "bad", "text": "It shall be so."}) + "\n")
    cfg = make_config(corpus=str(corpus))
    assert run("prepare", "--config", cfg) == 0
    coverage = json.loads((out_dir(cfg) / "coverage.json").read_text())
    assert coverage["records"] == 1 and coverage["skipped"][0]["id"] == "bad"


def test_prepare_missing_corpus(make_config, tmp_path, capsys):
    cfg = make_config(corpus=str(tmp_path / "nope.jsonl"))
    assert run("prepare", "--config", cfg) == 2
    assert "corpus not found" in capsys.readouterr().err


# --- train ------------------------------------------------------------------------

def test_train_requires_prepared_data(make_config, capsys):
    cfg = make_config(10)
    assert run("train", "--config", cfg) == 2
    assert "prepared dataset" in capsys.readouterr().err


def test_train_is_byte_identical_on_rerun(make_config, capsys):
    cfg = make_config(10)
    assert run("prepare", "--config", cfg) == 0
    assert run("train", "--config", cfg) == 0
    assert "epoch    2  loss" in capsys.readouterr().out
    ckpt = out_dir(cfg) / "model.json"
    first = ckpt.read_bytes()
    assert run("train", "--config", cfg) == 0
    assert ckpt.read_bytes() == first
    assert run("train", "--config", cfg, "--seed", 7) == 0
    assert ckpt.read_bytes() != first


def test_train_without_injection_has_no_injection_params(make_config):
    cfg = make_config(10, toggles={"injection": False, "copy": True, "syntax": True})
    assert run("prepare", "--config", cfg) == 0
    assert run("train", "--config", cfg) == 0
    model_cfg, _, params, extra = load_checkpoint(out_dir(cfg) / "model.json")
    assert model_cfg.injection_layers == []
    assert not any(k.startswith(("inject.", "kenc.")) for k in params)
    assert extra["toggles"]["injection"] is False


# --- generate ---------------------------------------------------------------------

@pytest.fixture
def trained(make_config):
    cfg = make_config(20)
    assert run("prepare", "--config", cfg) == 0
    assert run("train", "--config", cfg) == 0
    return cfg


def test_generate_includes_all_keywords(trained, capsys):
    assert run("generate", "--config", trained, "--keywords", "landing, internal simulator, ground") == 0
    text = capsys.readouterr().out.strip()
    doc = json.loads((out_dir(trained) / "generation.json").read_text())
    assert doc["generated"] == text and doc["complete"]
    words = text.lower().replace(".", " ").split()
    joined = " " + " ".join(words) + " "
    for phrase in ("landing", "internal simulator", "ground"):
        assert f" {phrase} " in joined
    assert doc["rs4re"] is None and doc["candidates"]


def test_generate_single_keyword_is_usage_error(trained, capsys):
    assert run("generate", "--config", trained, "--keywords", "landing") == 2
    assert "at least two keywords" in capsys.readouterr().err


def test_generate_with_roles_reports_overlap(trained, tmp_path):
    roles = {"agent": {"words": ["internal", "simulator"], "alpha": 0.5},
             "object": {"words": ["ground", "altitude"], "alpha": 0.5}}
    rp = tmp_path / "roles.json"
    rp.write_text(json.dumps(roles))
    assert run("generate", "--config", trained, "--keywords", "internal simulator, ground", "--roles", rp) == 0
    doc = json.loads((out_dir(trained) / "generation.json").read_text())
    assert set(doc["element_overlap"]) == {"agent", "object"}
    assert doc["element_overlap"]["agent"] == 1.0
    assert 0.75 <= doc["rs4re"] <= 1.0


def test_generate_without_checkpoint(make_config, capsys):
    cfg = make_config(10)
    assert run("prepare", "--config", cfg) == 0
    assert run("generate", "--config", cfg, "--keywords", "uav, ground") == 2
    assert "checkpoint not found" in capsys.readouterr().err


def test_missing_config_and_bad_args(tmp_path):
    assert run("train", "--config", tmp_path / "none.json") == 2
    assert run("frobnicate") == 2
    assert run("train") == 2


# --- evaluate ----------------------------------------------------------------------

def test_evaluate_from_generated_file(make_config, tmp_path, capsys):
    cfg = make_config(5)
    assert run("prepare", "--config", cfg) == 0
    recs = load_corpus(out_dir(cfg) / "prepared.jsonl")
    gen = tmp_path / "gen.jsonl"
    gen.write_text("".join(json.dumps({"id": r.id, "generated": r.text}) + "\n" for r in recs))
    assert run("evaluate", "--config", cfg, "--generated", gen) == 0
    report = json.loads((out_dir(cfg) / "evaluation.json").read_text())
    assert report["bleu1"] == pytest.approx(100) and report["rs4re_mean"] == pytest.approx(100)
    out = capsys.readouterr().out
    assert all(c in out for c in TABLE_COLUMNS)


def test_evaluate_with_checkpoint(trained):
    assert run("evaluate", "--config", trained) == 0
    out = out_dir(trained)
    report = json.loads((out / "evaluation.json").read_text())
    assert len(report["examples"]) == 20
    rows = [json.loads(x) for x in (out / "generated.jsonl").read_text().splitlines()]
    assert all(r["complete"] for r in rows)


# --- crossval ----------------------------------------------------------------------

def test_crossval_two_folds(make_config, capsys):
    cfg = make_config(10)
    assert run("prepare", "--config", cfg) == 0
    assert run("crossval", "--config", cfg) == 0
    text = capsys.readouterr().out
    assert "fold 1" in text and "fold 2" in text and "mean" in text
    path = out_dir(cfg) / "crossval.json"
    doc = json.loads(path.read_text())
    assert len(doc["folds"]) == 2
    assert sorted(len(f["outputs"]) for f in doc["folds"]) == [5, 5]
    b1 = [f["report"]["bleu1"] for f in doc["folds"]]
    assert doc["mean"]["bleu1"] == pytest.approx(sum(b1) / 2)
    for key in ("1", "2", "L"):
        for i in range(3):
            vals = [f["report"]["rouge"][key][i] for f in doc["folds"]]
            assert doc["mean"]["rouge"][key][i] == pytest.approx(sum(vals) / 2)
    first = path.read_bytes()
    assert run("crossval", "--config", cfg) == 0
    assert path.read_bytes() == first


def test_mean_report_skips_missing_rs4re():
    from reqgen.metrics import MetricsReport

    rouge = {"1": (1.0, 2.0, 3.0), "2": (0.0, 0.0, 0.0), "L": (4.0, 4.0, 4.0)}
    a = MetricsReport(10.0, 5.0, rouge, None)
    b = MetricsReport(30.0, 15.0, rouge, 40.0)
    m = mean_report([a, b])
    assert (m.bleu1, m.bleu2, m.rs4re_mean) == (20.0, 10.0, 40.0)


# --- ablate ------------------------------------------------------------------------

def test_ablate_row_count_and_labels(make_config, capsys):
    grid = {"layer_plans": ["1(5),2(1)", "1(5),2(2),4(1)"],
            "freq_thresholds": [0, 50],
            "toggles": [{"injection": False, "copy": False, "syntax": False},
                        {"injection": True, "copy": True, "syntax": True}]}
    cfg = make_config(6, ablation=grid, model=dict(TINY_MODEL, epochs=1))
    assert run("prepare", "--config", cfg) == 0
    capsys.readouterr()
    assert run("ablate", "--config", cfg) == 0
    rows = json.loads((out_dir(cfg) / "ablation.json").read_text())
    assert len(rows) == 2 * 2 * 2
    assert {r["plan"] for r in rows} == {"1(5),2(1)", "1(5),2(2),4(1)"}
    assert {r["threshold"] for r in rows} == {"no", "50"}
    assert any(r["setting"].endswith("(ReqGen)") for r in rows)
    assert all(r["error"] is None for r in rows)
    table = capsys.readouterr().out.splitlines()
    assert table[0].startswith("Layers(hops)") and len(table) == 1 + len(rows)
