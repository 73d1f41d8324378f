"""BLEU, ROUGE and corpus-level reporting."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from reqgen.corpus import PUNCTUATION, RequirementRecord, tokenize
from reqgen.decoder import SyntaxReference, rs4re


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_overlap(cand: Counter, ref: Counter) -> int:
    return sum(min(c, ref[g]) for g, c in cand.items())


def _f_measure(r: float, p: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 2) -> float:
    """Single-reference BLEU with clipped precision and brevity penalty, scaled to 100."""
    if not reference:
        raise ValueError("reference must be non-empty")
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for k in range(1, max_n + 1):
        cand = ngrams(candidate, k)
        total = sum(cand.values())
        hit = _clipped_overlap(cand, ngrams(reference, k))
        if hit == 0 or total == 0:
            return 0.0
        log_sum += math.log(hit / total) / max_n
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_sum)


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[float, float, float]:
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = _clipped_overlap(cand, ref)
    n_ref, n_cand = sum(ref.values()), sum(cand.values())
    r = overlap / n_ref if n_ref else 0.0
    p = overlap / n_cand if n_cand else 0.0
    return 100.0 * r, 100.0 * p, 100.0 * _f_measure(r, p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> tuple[float, float, float]:
    ell = lcs_length(candidate, reference)
    r = ell / len(reference) if reference else 0.0
    p = ell / len(candidate) if candidate else 0.0
    return 100.0 * r, 100.0 * p, 100.0 * _f_measure(r, p)


def metric_tokens(text: str) -> list[str]:
    """Lowercased word tokens with punctuation dropped."""
    return [t for t in tokenize(text) if t not in PUNCTUATION]


ROUGE_KEYS = ("1", "2", "L")


@dataclass
class ExampleMetrics:
    record_id: str
    bleu1: float
    bleu2: float
    rouge: dict[str, tuple[float, float, float]]
    rs4re: float | None


@dataclass
class MetricsReport:
    bleu1: float
    bleu2: float
    rouge: dict[str, tuple[float, float, float]]
    rs4re_mean: float | None
    examples: list[ExampleMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rouge"] = {k: list(v) for k, v in self.rouge.items()}
        for ex in out["examples"]:
            ex["rouge"] = {k: list(v) for k, v in ex["rouge"].items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def row(self) -> list[float | None]:
        vals: list[float | None] = [self.bleu1, self.bleu2]
        for k in ROUGE_KEYS:
            vals.extend(self.rouge[k])
        vals.append(self.rs4re_mean)
        return vals


TABLE_COLUMNS = ["BLEU1", "BLEU2", "R1-R", "R1-P", "R1-F", "R2-R", "R2-P", "R2-F",
                 "RL-R", "RL-P", "RL-F", "RS4RE"]


def format_table(rows: Sequence[tuple[str | Sequence[str], MetricsReport]],
                 label_header: str | Sequence[str] = "Setting") -> str:
    """Aligned plain-text table; one row per labelled report."""
    heads = [label_header] if isinstance(label_header, str) else list(label_header)
    header = heads + TABLE_COLUMNS
    body = []
    for label, rep in rows:
        labels = [label] if isinstance(label, str) else list(label)
        body.append(labels + ["-" if v is None else f"{v:.2f}" for v in rep.row()])
    nl = len(heads)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for r in [header] + body:
        cells = [c.ljust(w) for c, w in zip(r[:nl], widths)] + [c.rjust(w) for c, w in zip(r[nl:], widths[nl:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def score_example(generated: str, record: RequirementRecord) -> ExampleMetrics:
    cand, ref = metric_tokens(generated), metric_tokens(record.text)
    rs = None
    if record.roles:
        rs = 100.0 * rs4re(cand, SyntaxReference.from_roles(record.roles))
    return ExampleMetrics(
        record_id=record.id,
        bleu1=bleu(cand, ref, 1),
        bleu2=bleu(cand, ref, 2),
        rouge={"1": rouge_n(cand, ref, 1), "2": rouge_n(cand, ref, 2), "L": rouge_l(cand, ref)},
        rs4re=rs,
    )


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def evaluate_corpus(pairs: Sequence[tuple[str, RequirementRecord]]) -> MetricsReport:
    """Arithmetic means of per-example scores; RS4RE only over records with roles."""
    if not pairs:
        raise ValueError("no generated/reference pairs to evaluate")
    examples = [score_example(g, r) for g, r in pairs]
    rouge = {
        k: tuple(_mean([e.rouge[k][i] for e in examples]) for i in range(3))
        for k in ROUGE_KEYS
    }
    rs = [e.rs4re for e in examples if e.rs4re is not None]
    return MetricsReport(
        bleu1=_mean([e.bleu1 for e in examples]),
        bleu2=_mean([e.bleu2 for e in examples]),
        rouge=rouge,
        rs4re_mean=_mean(rs) if rs else None,
        examples=examples,
    )
