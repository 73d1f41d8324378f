import json
from pathlib import Path

import pytest

from reqgen.corpus import load_corpus
from reqgen.ontology import load_triples
from reqgen.pipeline import prepare_records

DATA = Path(__file__).resolve().parents[1] / "src" / "reqgen" / "data"
ONTOLOGY = DATA / "uav_ontology.jsonl"
CORPUS = DATA / "uav_requirements.jsonl"

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture(scope="session")
def toy_graph():
    return load_triples(ONTOLOGY)


@pytest.fixture(scope="session")
def toy_records():
    ready, skipped = prepare_records(load_corpus(CORPUS), 0)
    assert not skipped
    return ready


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")


TINY_MODEL = {"depth": 4, "d_model": 8, "heads": 2, "d_ffn": 16, "knowledge_hidden": 4,
              "epochs": 2, "max_len": 64}


@pytest.fixture
def make_config(tmp_path):
    """Write a small experiment config (and optionally a corpus subset) and return its path."""

    def make(n_records=None, name="exp.json", **overrides):
        corpus = CORPUS
        if n_records is not None:
            corpus = tmp_path / f"corpus{n_records}.jsonl"
            lines = CORPUS.read_text(encoding="utf-8").splitlines()[:n_records]
            corpus.write_text("\n".join(lines) + "\n", encoding="utf-8")
        doc = {
            "ontology": str(ONTOLOGY),
            "corpus": str(corpus),
            "out_dir": str(tmp_path / "out"),
            "model": dict(TINY_MODEL),
            "token_cap": 32,
            "k_folds": 2,
            "beam_size": 2,
            "max_gen_len": 20,
        }
        doc.update(overrides)
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    return make
