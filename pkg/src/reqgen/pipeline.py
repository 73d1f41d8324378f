"""Experiment orchestration: data preparation, training, decoding, evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from reqgen.corpus import (
    SEP,
    RequirementRecord,
    Vocabulary,
    build_vocabulary,
    encode_pair,
    encode_source,
    extract_keywords,
    load_corpus,
    make_folds,
    mark_copy_labels,
    record_to_dict,
    tokenize,
)
from reqgen.decoder import (
    Candidate,
    GenerationConstraints,
    SyntaxReference,
    beam_search,
    phrases_to_ids,
    rs4re,
    rs4re_breakdown,
)
from reqgen.metrics import MetricsReport, evaluate_corpus
from reqgen.model.config import ModelConfig
from reqgen.model.inference import ModelScorer
from reqgen.model.network import knowledge_token_ids
from reqgen.model.params import Params
from reqgen.model.train import train
from reqgen.ontology import InjectionPlan, OntologyGraph, all_pseudo_sentences, build_injection_knowledge, load_triples

log = logging.getLogger(__name__)

FULL_PLAN = "1(5),2(2),4(1)"


class UsageError(Exception):
    """Bad invocation or missing input; maps to exit code 2."""


@dataclass(frozen=True)
class Toggles:
    injection: bool = True
    copy: bool = True
    syntax: bool = True

    @classmethod
    def from_dict(cls, d: Mapping) -> "Toggles":
        unknown = set(d) - {"injection", "copy", "syntax"}
        if unknown:
            raise UsageError(f"unknown toggles: {sorted(unknown)}")
        return cls(**{k: bool(v) for k, v in d.items()})


@dataclass
class AblationGrid:
    layer_plans: list[str] = field(default_factory=lambda: [FULL_PLAN])
    freq_thresholds: list[int] = field(default_factory=lambda: [10])
    toggles: list[Toggles] = field(default_factory=lambda: [Toggles()])

    @property
    def size(self) -> int:
        return len(self.layer_plans) * len(self.freq_thresholds) * len(self.toggles)


@dataclass
class ExperimentConfig:
    ontology: Path
    corpus: Path
    out_dir: Path = Path("out")
    checkpoint: Path | None = None
    model: dict = field(default_factory=dict)
    plan: str = FULL_PLAN
    freq_threshold: int = 10
    token_cap: int = 512
    toggles: Toggles = field(default_factory=Toggles)
    k_folds: int = 10
    rng_seed: int = 0
    min_count: int = 1
    beam_size: int = 5
    max_gen_len: int = 40
    lambda_rs: float = 1.0
    ablation: AblationGrid = field(default_factory=AblationGrid)

    def __post_init__(self):
        if self.checkpoint is None:
            self.checkpoint = self.out_dir / "model.json"

    @property
    def prepared_path(self) -> Path:
        return self.out_dir / "prepared.jsonl"

    @property
    def vocab_path(self) -> Path:
        return self.out_dir / "vocab.json"

    def injection_plan(self, label: str | None = None, threshold: int | None = None) -> InjectionPlan:
        return InjectionPlan.from_label(
            label or self.plan,
            self.freq_threshold if threshold is None else threshold,
            self.token_cap,
        )

    @classmethod
    def from_dict(cls, d: Mapping, base: Path = Path(".")) -> "ExperimentConfig":
        d = dict(d)
        for key in ("ontology", "corpus"):
            if key not in d:
                raise UsageError(f"config is missing {key!r}")
        for key in ("ontology", "corpus", "out_dir", "checkpoint"):
            if d.get(key) is not None:
                p = Path(d[key])
                d[key] = p if p.is_absolute() else base / p
        if "toggles" in d:
            d["toggles"] = Toggles.from_dict(d["toggles"])
        if "ablation" in d:
            a = dict(d["ablation"])
            if "toggles" in a:
                a["toggles"] = [Toggles.from_dict(t) for t in a["toggles"]]
            grid = AblationGrid(**a)
            if grid.size == 0:
                raise UsageError("ablation grid is empty")
            d["ablation"] = grid
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, path.parent)


# --- labels ------------------------------------------------------------------

def threshold_label(threshold: int) -> str:
    return "no" if threshold == 0 else str(threshold)


def setting_label(plan: InjectionPlan, threshold: int, toggles: Toggles) -> str:
    """Component-ablation row name, e.g. ``Layer 1,2,4+ 10 Fre.+Copy``."""
    if toggles.injection:
        label = "Layer " + ",".join(str(x) for x in plan.layers)
        if threshold > 0:
            label += f"+ {threshold} Fre."
    else:
        label = "No injection"
    if toggles.copy:
        label += "+Copy"
    if toggles.syntax:
        label += "+ Syntax cons."
    if toggles.injection and toggles.copy and toggles.syntax:
        label += " (ReqGen)"
    return label


# --- data --------------------------------------------------------------------

def _require_file(path: Path, what: str) -> None:
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def load_inputs(exp: ExperimentConfig) -> tuple[OntologyGraph, list[RequirementRecord]]:
    _require_file(exp.ontology, "ontology")
    _require_file(exp.corpus, "corpus")
    return load_triples(exp.ontology), load_corpus(exp.corpus)


def prepare_records(records: Sequence[RequirementRecord], seed: int) -> tuple[list[RequirementRecord], list[dict]]:
    """Fill missing keywords; records that cannot be prepared are skipped and reported."""
    ready, skipped = [], []
    for i, rec in enumerate(records):
        try:
            if not rec.keywords:
                # offset the seed per record so draws differ across records
                rec = RequirementRecord(rec.id, rec.text, extract_keywords(rec, seed + i), rec.roles)
            if len(rec.keywords) < 2:
                raise ValueError("fewer than two keyword phrases")
            ready.append(rec)
        except ValueError as exc:
            skipped.append({"id": rec.id, "error": str(exc)})
            log.warning("skipping %s: %s", rec.id, exc)
    return ready, skipped


def keyword_coverage(graph: OntologyGraph, records: Sequence[RequirementRecord]) -> dict:
    total = matched = 0
    unmatched: dict[str, int] = {}
    for rec in records:
        for kw in rec.keyword_strings():
            total += 1
            if graph.match_entity(kw) is not None:
                matched += 1
            else:
                unmatched[kw] = unmatched.get(kw, 0) + 1
    return {
        "keywords": total,
        "matched": matched,
        "coverage": matched / total if total else 0.0,
        "records": len(records),
        "unmatched": dict(sorted(unmatched.items())),
    }


def vocabulary_for(graph: OntologyGraph, records: Sequence[RequirementRecord], min_count: int = 1) -> Vocabulary:
    texts = [r.text for r in records]
    texts += [" ".join(" ".join(k) for k in r.keywords) for r in records]
    texts += [s.text for s in all_pseudo_sentences(graph)]
    return build_vocabulary(texts, min_count)


def load_prepared(exp: ExperimentConfig) -> tuple[list[RequirementRecord], Vocabulary]:
    _require_file(exp.prepared_path, "prepared dataset (run `prepare` first)")
    _require_file(exp.vocab_path, "vocabulary (run `prepare` first)")
    records = load_corpus(exp.prepared_path)
    vocab = Vocabulary(json.loads(exp.vocab_path.read_text(encoding="utf-8"))["tokens"])
    return records, vocab


# --- model -------------------------------------------------------------------

def model_config(exp: ExperimentConfig, vocab_size: int, plan: InjectionPlan, toggles: Toggles) -> ModelConfig:
    base = dict(exp.model)
    base["rng_seed"] = exp.rng_seed
    layers = plan.layers if toggles.injection else []
    depth = max([base.get("depth", ModelConfig.__dataclass_fields__["depth"].default)] + layers)
    base.update(vocab_size=vocab_size, injection_layers=layers, depth=depth)
    if not toggles.copy:
        base["copy_loss_weight"] = 0.0
    return ModelConfig(**base)


def knowledge_ids(graph: OntologyGraph, keywords: Sequence[str], plan: InjectionPlan,
                  vocab: Vocabulary, enabled: bool = True) -> dict[int, list[int]]:
    if not enabled:
        return {}
    per_layer = build_injection_knowledge(graph, keywords, plan)
    return {layer: knowledge_token_ids(s, vocab, plan.token_cap_per_layer) for layer, s in per_layer.items()}


def fit(records: Sequence[RequirementRecord], vocab: Vocabulary, graph: OntologyGraph,
        cfg: ModelConfig, plan: InjectionPlan, on_epoch: Callable[[int, float], None] | None = None):
    pairs = [encode_pair(r, vocab, cfg.max_len) for r in records]
    enabled = bool(cfg.injection_layers)
    know = [knowledge_ids(graph, r.keyword_strings(), plan, vocab, enabled) for r in records]
    return train(pairs, know, cfg, on_epoch)


def generate(params: Params, cfg: ModelConfig, vocab: Vocabulary, graph: OntologyGraph,
             plan: InjectionPlan, keywords: Sequence[Sequence[str]], toggles: Toggles,
             exp: ExperimentConfig, roles: Mapping | None = None) -> list[Candidate]:
    """Ranked candidates for one keyword set."""
    src = encode_source(keywords, vocab)
    max_len = min(exp.max_gen_len, cfg.max_len - len(src))
    if max_len < 1:
        raise UsageError(f"keywords use {len(src)} of {cfg.max_len} positions; nothing left to generate")
    kw_strings = [" ".join(k) for k in keywords]
    scorer = ModelScorer(params, cfg, src, knowledge_ids(graph, kw_strings, plan, vocab, toggles.injection))
    ref = SyntaxReference.from_roles(roles) if roles else None
    constraints = GenerationConstraints(
        phrases_to_ids(keywords, vocab),
        beam_size=exp.beam_size,
        max_len=max_len,
        lambda_rs=exp.lambda_rs if toggles.syntax else 0.0,
        hard=toggles.copy,
        use_copy=toggles.copy,
    )
    if toggles.syntax:
        return beam_search(scorer, vocab, constraints, ref)
    cands = beam_search(scorer, vocab, constraints, None)
    if ref is not None:
        # roles are known but not used for ranking; still report agreement
        for c in cands:
            words = [t for t in c.tokens if t != SEP]
            c.rs4re = rs4re(words, ref)
            c.element_overlap = rs4re_breakdown(words, ref)
    return cands


def parse_keywords(text: str) -> list[tuple[str, ...]]:
    phrases = [tuple(tokenize(k)) for k in text.split(",")]
    phrases = [p for p in phrases if p]
    if len(phrases) < 2:
        raise UsageError("at least two keywords (comma-separated) are required")
    return phrases


# --- evaluation --------------------------------------------------------------

def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    def mean(xs):
        return math.fsum(xs) / len(xs)

    rs = [r.rs4re_mean for r in reports if r.rs4re_mean is not None]
    return MetricsReport(
        bleu1=mean([r.bleu1 for r in reports]),
        bleu2=mean([r.bleu2 for r in reports]),
        rouge={k: tuple(mean([r.rouge[k][i] for r in reports]) for i in range(3)) for k in reports[0].rouge},
        rs4re_mean=mean(rs) if rs else None,
    )


@dataclass
class FoldOutcome:
    fold: int
    report: MetricsReport | None
    error: str | None = None
    outputs: list[dict] = field(default_factory=list)


def evaluate_records(params, cfg, vocab, graph, plan, toggles, exp, records) -> tuple[MetricsReport, list[dict]]:
    pairs, outputs = [], []
    for rec in records:
        cands = generate(params, cfg, vocab, graph, plan, rec.keywords, toggles, exp, rec.roles or None)
        best = cands[0]
        pairs.append((best.text, rec))
        outputs.append({"id": rec.id, "generated": best.text, "complete": best.complete,
                        "keywords": rec.keyword_strings()})
    return evaluate_corpus(pairs), outputs


def crossval(exp: ExperimentConfig, records: Sequence[RequirementRecord], vocab: Vocabulary,
             graph: OntologyGraph, plan: InjectionPlan, toggles: Toggles) -> list[FoldOutcome]:
    split = make_folds(records, exp.k_folds, exp.rng_seed)
    by_id = {r.id: r for r in records}
    outcomes = []
    for i in range(split.k):
        train_ids, test_ids = split.train_test(i)
        try:
            cfg = model_config(exp, len(vocab), plan, toggles)
            result = fit([by_id[x] for x in train_ids], vocab, graph, cfg, plan)
            report, outputs = evaluate_records(result.params, cfg, vocab, graph, plan, toggles, exp,
                                               [by_id[x] for x in test_ids])
            outcomes.append(FoldOutcome(i + 1, report, outputs=outputs))
        except Exception as exc:  # a failed fold is reported, the rest still run
            log.error("fold %d failed: %s", i + 1, exc)
            outcomes.append(FoldOutcome(i + 1, None, f"{type(exc).__name__}: {exc}"))
    return outcomes


@dataclass
class AblationRow:
    plan: str
    threshold: str
    setting: str
    report: MetricsReport | None
    error: str | None = None


def ablate(exp: ExperimentConfig, records, vocab, graph,
           on_row: Callable[[AblationRow], None] | None = None) -> list[AblationRow]:
    rows = []
    for label in exp.ablation.layer_plans:
        for thr in exp.ablation.freq_thresholds:
            plan = exp.injection_plan(label, thr)
            for toggles in exp.ablation.toggles:
                row = AblationRow(plan.label(), threshold_label(thr), setting_label(plan, thr, toggles), None)
                try:
                    folds = crossval(exp, records, vocab, graph, plan, toggles)
                    good = [f.report for f in folds if f.report is not None]
                    if not good:
                        raise RuntimeError("; ".join(f.error or "" for f in folds))
                    row.report = mean_report(good)
                except Exception as exc:  # record and keep going
                    row.error = f"{type(exc).__name__}: {exc}"
                    log.error("ablation point %s / %s / %s failed: %s", row.plan, row.threshold, row.setting, exc)
                rows.append(row)
                if on_row is not None:
                    on_row(row)
    return rows


def prepared_dump(records: Sequence[RequirementRecord]) -> str:
    lines = []
    for r in records:
        d = record_to_dict(r)
        d["copy_labels"] = mark_copy_labels(r.keywords, r.tokens)
        lines.append(json.dumps(d, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def exp_summary(exp: ExperimentConfig) -> dict:
    d = asdict(exp)
    return json.loads(json.dumps(d, default=str))

