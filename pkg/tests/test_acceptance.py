"""One test per acceptance criterion; each records a pass/fail line for the summary."""

import json
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE, CORPUS, ONTOLOGY, TINY_MODEL
from oracles import (
    HashScorer,
    contains,
    exhaustive_best,
    finite_difference,
    naive_bleu,
    naive_rouge_l,
    naive_rouge_n,
    relative_error,
    walk_oracle,
)
from reqgen.cli import main
from reqgen.corpus import SEP_ID, build_vocabulary, encode_pair, encode_source
from reqgen.decoder import GenerationConstraints, SyntaxElement, SyntaxReference, beam_search, rs4re
from reqgen.metrics import bleu, rouge_l, rouge_n
from reqgen.model.config import ModelConfig
from reqgen.model.network import forward, inject_knowledge, loss_and_gradients, loss_terms, make_batch
from reqgen.model.params import init_params, param_shapes
from reqgen.model.train import teacher_forced_accuracy, train
from reqgen.ontology import InjectionPlan, OntologyGraph, Triple, multi_hop_search, triples_to_pseudo_sentences
from reqgen.pipeline import ExperimentConfig, Toggles, generate, knowledge_ids, vocabulary_for


def record(n, title, ok, detail):
    ACCEPTANCE[n] = (title, bool(ok), detail)
    assert ok, detail


# --- 1. gradients --------------------------------------------------------------------

def test_01_gradient_check():
    start = time.perf_counter()
    cfg = ModelConfig(vocab_size=20, depth=2, d_model=8, heads=2, d_ffn=16, max_len=24,
                      injection_layers=[2], knowledge_hidden=4, init_scale=0.5)
    rng = np.random.default_rng(1)
    params = init_params(cfg, rng)
    for k in params:
        # move norms and biases off their trivial init so every path carries gradient
        if k.endswith(("_g", "_b", "_b1", "_b2")):
            params[k] = np.asarray(params[k] + rng.normal(0, 0.3, params[k].shape))
    batch = make_batch(
        [[2, 5, 3, 7, 8, 3], [2, 9, 3, 4, 3]],
        [[5, 6, 11, 12, 3], [9, 10, 4, 13, 14, 15, 3]],
        [[1, 0, 0, 0, 0], [1, 0, 1, 0, 0, 0, 0]],
        [{2: [5, 6, 7, 3, 8, 9, 3]}, {2: []}],
        [2],
    )
    _, grads, _ = loss_and_gradients(params, cfg, batch)

    def objective(p):
        lm, cp, _ = forward(p, cfg, batch)
        return loss_terms(lm, cp, batch.targets, batch.copy_labels, 1.0, batch.target_mask)[0]

    fd = finite_difference(objective, params, 1e-5)
    errors = {k: relative_error(grads[k], fd[k]) for k in params}
    worst = max(errors, key=errors.get)
    elapsed = time.perf_counter() - start
    covered = any(k.startswith("inject.") for k in errors) and any(k.startswith("kenc.") for k in errors)
    record(1, "gradient check", covered and errors[worst] < 1e-4 and elapsed < 60,
           f"{len(errors)} groups, worst {worst} rel err {errors[worst]:.1e}, {elapsed:.1f}s")


# --- 2. graph search ------------------------------------------------------------------

def test_02_graph_search_oracle():
    start = time.perf_counter()
    rng = random.Random(2024)
    bad = []
    for trial in range(100):
        n = rng.randint(2, 30)
        names = [f"e{i}" for i in range(n)]
        triples = [Triple(rng.choice(names), rng.choice(["r", "subClassOf", "hasDomain"]), rng.choice(names))
                   for _ in range(rng.randint(1, 40))]
        graph = OntologyGraph(triples)
        ents = sorted(graph.entities)
        seeds = rng.sample(ents, rng.randint(1, min(3, len(ents))))
        hops = rng.randint(1, 5)
        res = multi_hop_search(graph, seeds, hops)
        hop, freq = walk_oracle(triples, seeds, hops)
        if res.hop_of != hop or res.frequency != freq:
            bad.append(trial)
    elapsed = time.perf_counter() - start
    record(2, "multi-hop search vs walk enumeration", not bad and elapsed < 60,
           f"100 graphs, mismatches {bad}, {elapsed:.1f}s")


# --- 3. templates ----------------------------------------------------------------------

def test_03_pseudo_sentence_templates():
    a = triples_to_pseudo_sentences([Triple("a", "subClassOf", "b")], {"b": 1})
    b = triples_to_pseudo_sentences(
        [Triple("teaching", "hasDomain", "teacher"), Triple("teaching", "hasRange", "lesson")],
        {"teacher": 1, "lesson": 1})
    got = [s.text for s in a] + [s.text for s in b]
    record(3, "pseudo-sentence templates", got == ["a is subclass of b", "Teacher is teaching lesson."],
           f"{got}")


# --- shared overfit model (criteria 4 and 7) -------------------------------------------

OVERFIT_CAP = 128


@pytest.fixture(scope="session")
def overfit(toy_graph, toy_records):
    records = toy_records[:50]
    vocab = vocabulary_for(toy_graph, toy_records)
    plan = InjectionPlan.from_label("1(5),2(2),4(1)", 10, OVERFIT_CAP)
    cfg = ModelConfig(vocab_size=len(vocab), epochs=200)
    pairs = [encode_pair(r, vocab, cfg.max_len) for r in records]
    know = [knowledge_ids(toy_graph, r.keyword_strings(), plan, vocab) for r in records]
    start = time.perf_counter()
    result = train(pairs, know, cfg)
    elapsed = time.perf_counter() - start
    return dict(records=records, vocab=vocab, plan=plan, cfg=cfg, pairs=pairs, know=know,
                result=result, elapsed=elapsed)


# --- 4. hard constraint -------------------------------------------------------------------

def test_04_hard_keyword_constraint(overfit, toy_graph):
    exp = ExperimentConfig(ontology=ONTOLOGY, corpus=CORPUS, max_gen_len=10**6, beam_size=5)
    cfg, vocab = overfit["cfg"], overfit["vocab"]
    complete = satisfied = 0
    worst_room = None
    for rec in overfit["records"]:
        room = cfg.max_len - len(encode_source(rec.keywords, vocab))
        worst_room = room if worst_room is None else min(worst_room, room)
        cands = generate(overfit["result"].params, cfg, vocab, toy_graph, overfit["plan"],
                         rec.keywords, Toggles(), exp, rec.roles)
        top = cands[0]
        complete += top.complete
        phrase_ids = [tuple(vocab.encode(k)) for k in rec.keywords]
        satisfied += top.complete and all(contains(top.ids, p) for p in phrase_ids)
    n = len(overfit["records"])
    ok = n == 50 and complete == n and satisfied == n and worst_room >= 20
    record(4, "hard keyword constraint", ok,
           f"{satisfied}/{n} top outputs contain every phrase ({complete} complete), min decode room {worst_room}")


# --- 5. metrics ------------------------------------------------------------------------------

def test_05_metric_oracles():
    rng = random.Random(55)
    mismatches = 0
    for _ in range(200):
        c = [rng.choice("abcdef") for _ in range(rng.randint(0, 12))]
        r = [rng.choice("abcdef") for _ in range(rng.randint(1, 12))]
        same = (bleu(c, r, 1) == naive_bleu(c, r, 1) and bleu(c, r, 2) == naive_bleu(c, r, 2)
                and rouge_n(c, r, 1) == naive_rouge_n(c, r, 1) and rouge_n(c, r, 2) == naive_rouge_n(c, r, 2)
                and rouge_l(c, r) == naive_rouge_l(c, r))
        mismatches += not same
    cand = "the uav shall land".split()
    hand = (
        round(bleu(cand, "the uav shall land safely".split(), 1), 2),
        round(bleu(cand, "the uav shall land safely".split(), 2), 2),
        round(rouge_n(cand, "the uav must land".split(), 2)[2], 2),
        round(rouge_l("a b c d".split(), "a c b d".split())[2], 2),
    )
    record(5, "BLEU/ROUGE oracles", mismatches == 0 and hand == (77.88, 77.88, 33.33, 75.0),
           f"200 random instances, {mismatches} mismatches; hand cases {hand}")


# --- 6. RS4RE --------------------------------------------------------------------------------

REF = SyntaxReference((
    SyntaxElement("agent", frozenset({"system", "shall"}), 0.5),
    SyntaxElement("action", frozenset({"display", "altitude"}), 0.5),
))
REF3 = SyntaxReference((
    SyntaxElement("condition", frozenset({"when", "landing"}), 0.25),
    SyntaxElement("agent", frozenset({"internal", "simulator", "uav"}), 0.25),
    SyntaxElement("action", frozenset({"move", "ground", "altitude", "uav"}), 0.5),
))

# candidate, reference, expected value worked out by hand
RS4RE_CASES = [
    ("the system shall display altitude", REF, Fraction(1)),
    ("", REF, Fraction(0)),
    ("system shall display", REF, Fraction(3, 4)),
    ("system", REF, Fraction(1, 4)),
    ("display altitude", REF, Fraction(1, 2)),
    ("shall altitude", REF, Fraction(1, 2)),
    ("System SHALL Display", REF, Fraction(3, 4)),
    ("the operator may show height", REF, Fraction(0)),
    ("altitude altitude altitude", REF, Fraction(1, 4)),
    ("system system shall shall", REF, Fraction(1, 2)),
    ("when landing", REF3, Fraction(1, 4)),
    ("uav", REF3, Fraction(1, 4) * Fraction(1, 3) + Fraction(1, 2) * Fraction(1, 4)),
    ("the internal simulator", REF3, Fraction(1, 4) * Fraction(2, 3)),
    ("move to ground altitude", REF3, Fraction(1, 2) * Fraction(3, 4)),
    ("when landing the internal simulator shall move the uav to the ground altitude", REF3, Fraction(1)),
    ("landing uav ground", REF3, Fraction(1, 8) + Fraction(1, 12) + Fraction(1, 4)),
    ("when simulator altitude", REF3, Fraction(1, 8) + Fraction(1, 12) + Fraction(1, 8)),
    ("internal simulator uav", REF3, Fraction(1, 4) + Fraction(1, 8)),
    ("nothing relevant here", REF3, Fraction(0)),
    ("when landing move ground altitude uav", REF3, Fraction(1, 4) + Fraction(1, 12) + Fraction(1, 2)),
]


def test_06_rs4re_hand_cases():
    wrong = []
    for text, ref, expect in RS4RE_CASES:
        got = rs4re(text.split(), ref)
        if not (0.0 <= got <= 1.0) or abs(got - float(expect)) > 1e-12:
            wrong.append((text, got, float(expect)))
    try:
        SyntaxReference((SyntaxElement("x", frozenset({"a"}), 0.6), SyntaxElement("y", frozenset({"b"}), 0.6)))
        enforced = False
    except ValueError:
        enforced = True
    record(6, "RS4RE hand evaluation", len(RS4RE_CASES) == 20 and not wrong and enforced,
           f"{len(RS4RE_CASES)} cases, wrong {wrong}, weight-sum check {'on' if enforced else 'off'}")


# --- 7. overfit ----------------------------------------------------------------------------------

def test_07_overfit_sanity(overfit):
    cfg, result = overfit["cfg"], overfit["result"]
    acc = teacher_forced_accuracy(result.params, cfg, overfit["pairs"], overfit["know"])
    # determinism: a fresh run with the same seed retraces the same loss trajectory
    short = ModelConfig(**{**cfg.to_dict(), "epochs": 3})
    rerun = train(overfit["pairs"], overfit["know"], short)
    same = rerun.loss_log == result.loss_log[:3]
    ok = len(overfit["pairs"]) <= 50 and acc >= 0.95 and same and overfit["elapsed"] < 600
    record(7, "overfit sanity", ok,
           f"{len(overfit['pairs'])} pairs, {cfg.epochs} epochs, token accuracy {acc:.3f}, "
           f"loss {result.loss_log[0]:.3f} -> {result.loss_log[-1]:.4f}, "
           f"rerun {'identical' if same else 'differs'}, {overfit['elapsed']:.0f}s")


# --- 8. beam oracle --------------------------------------------------------------------------------

def test_08_beam_search_oracle():
    vocab = build_vocabulary(["a b"])
    assert len(vocab) == 6
    ref = SyntaxReference((SyntaxElement("x", frozenset({"a"}), 0.5), SyntaxElement("y", frozenset({"b", "q"}), 0.5)))
    failures, cases = [], 0
    for salt in range(20):
        for use_ref in (False, True):
            cases += 1
            scorer = HashScorer(len(vocab), salt)
            phrases = [(4,), (5,)]
            c = GenerationConstraints(phrases, beam_size=64, max_len=5, lambda_rs=1.0)
            got = beam_search(scorer, vocab, c, ref if use_ref else None)
            rs_fn = (lambda body: rs4re(vocab.decode(body), ref)) if use_ref else None
            score, seq = exhaustive_best(scorer, phrases, 5, [4, 5], SEP_ID, rs_fn, 1.0)
            if tuple(got[0].ids) != seq or abs(got[0].score - score) > 1e-12:
                failures.append((salt, use_ref))
    record(8, "beam search vs exhaustive search", not failures,
           f"{cases} instances (vocab 6, max_len 5, beam 64), failures {failures}")


# --- 9. ablation harness ------------------------------------------------------------------------------

ABLATION_GRIDS = {
    "layers": {"layer_plans": ["1(5),2(1)", "1(5),2(2),4(1)"], "freq_thresholds": [10],
               "toggles": [{"injection": True, "copy": True, "syntax": True}]},
    "thresholds": {"layer_plans": ["1(5),2(2),4(1)"], "freq_thresholds": [0, 10, 50],
                   "toggles": [{"injection": True, "copy": True, "syntax": True}]},
    "components": {"layer_plans": ["1(5),2(2),4(1)"], "freq_thresholds": [10],
                   "toggles": [{"injection": False, "copy": False, "syntax": False},
                               {"injection": True, "copy": False, "syntax": False},
                               {"injection": True, "copy": True, "syntax": False},
                               {"injection": True, "copy": True, "syntax": True}]},
}


def test_09_ablation_harness(make_config, tmp_path, capsys):
    problems, tables = [], {}
    for name, grid in ABLATION_GRIDS.items():
        cfg = make_config(6, name=f"{name}.json", out_dir=str(tmp_path / name), ablation=grid,
                          model=dict(TINY_MODEL, epochs=1))
        if main(["prepare", "--config", str(cfg)]) != 0:
            problems.append(f"{name}: prepare failed")
            continue
        capsys.readouterr()
        rc = main(["ablate", "--config", str(cfg)])
        tables[name] = capsys.readouterr().out
        rows = json.loads((tmp_path / name / "ablation.json").read_text())
        expected = len(grid["layer_plans"]) * len(grid["freq_thresholds"]) * len(grid["toggles"])
        if rc != 0 or len(rows) != expected:
            problems.append(f"{name}: rc {rc}, {len(rows)} rows")
        for r in rows:
            rep = r["report"]
            vals = [rep["bleu1"], rep["bleu2"]] + [v for t in rep["rouge"].values() for v in t] + [rep["rs4re_mean"]]
            if not all(v is not None and np.isfinite(v) and 0 <= v <= 100 + 1e-9 for v in vals):
                problems.append(f"{name}: out-of-range value in {r['setting']}")
        tables[name + "_rows"] = rows
    labels = {
        "layers": [r["plan"] for r in tables.get("layers_rows", [])],
        "thresholds": [r["threshold"] for r in tables.get("thresholds_rows", [])],
        "components": [r["setting"] for r in tables.get("components_rows", [])],
    }
    if labels["layers"] != ["1(5),2(1)", "1(5),2(2),4(1)"]:
        problems.append(f"layer labels {labels['layers']}")
    if labels["thresholds"] != ["no", "10", "50"]:
        problems.append(f"threshold labels {labels['thresholds']}")
    if labels["components"] != ["No injection", "Layer 1,2,4+ 10 Fre.", "Layer 1,2,4+ 10 Fre.+Copy",
                                "Layer 1,2,4+ 10 Fre.+Copy+ Syntax cons. (ReqGen)"]:
        problems.append(f"component labels {labels['components']}")
    for name in ABLATION_GRIDS:
        for label in labels[name]:
            if label not in tables.get(name, ""):
                problems.append(f"{label!r} missing from printed {name} table")
    record(9, "ablation harness tables", not problems,
           "; ".join(problems) or f"rows {', '.join(f'{k}={len(v)}' for k, v in labels.items())}")


# --- 10. injection identity ------------------------------------------------------------------------------

def test_10_injection_identity():
    cfg = ModelConfig(vocab_size=30, depth=3, d_model=16, heads=4, d_ffn=32, max_len=40,
                      injection_layers=[1, 2, 3], knowledge_hidden=8, init_scale=0.3)
    plain_cfg = ModelConfig(**{**cfg.to_dict(), "injection_layers": []})
    params = init_params(cfg, np.random.default_rng(10))
    plain = {k: params[k] for k in param_shapes(plain_cfg)}
    srcs = [[2, 5, 3, 6, 3], [2, 7, 8, 3, 9, 3]]
    tgts = [[10, 11, 12, 3], [13, 14, 3]]
    lm1, cp1, _ = forward(params, cfg, make_batch(srcs, tgts, None, [{}, {}], cfg.injection_layers))
    lm2, cp2, _ = forward(plain, plain_cfg, make_batch(srcs, tgts))
    identical = np.array_equal(lm1, lm2) and np.array_equal(cp1, cp2)

    h = np.random.default_rng(0).normal(size=(9, 16))
    _, weights = inject_knowledge(h, np.random.default_rng(1).normal(size=(1, 16)), np.ones(1, bool), params, 2)
    single = weights.shape == (9, 1) and np.array_equal(weights, np.ones((9, 1)))
    record(10, "injection identity", identical and single,
           f"empty knowledge bit-identical: {identical}; single-token weights all 1.0: {single}")
