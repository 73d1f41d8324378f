"""Requirement records, tokenization, keyword extraction and encoding."""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)

PUNCTUATION = frozenset(".,;:()?!")
_PUNCT_RE = re.compile(r"([.,;:()?!])")

Phrase = tuple[str, ...]


def tokenize(text: str) -> list[str]:
    return _PUNCT_RE.sub(r" \1 ", text.lower()).split()


# Closed-class words plus the verbs that dominate requirement statements.
# Anything outside this list (and not punctuation) counts as nominal.
NON_NOMINAL = frozenset(
    """
    a an the this that these those each every any all some no none both either neither
    another other such same own its it they them their theirs he she his her him we us
    our you your i me my itself themselves which who whom whose what where when while
    whenever wherever why how if then than else unless until upon once so thus hence
    therefore however whether because since although though and or nor but not only
    also too very just more most less least much many few several can could shall
    should will would may might must need needs do does did done doing be is are was
    were been being am has have had having to of in on at by for with from into onto
    out over under about above below between among through during before after against
    within without via per across along around toward towards up down off as like
    there here again further always never already still yet even
    provide provides provided providing allow allows allowed allowing enable enables
    enabled support supports supported display displays displayed displaying show
    shows shown showing send sends sent sending receive receives received receiving
    record records recorded recording store stores stored storing compute computes
    computed computing calculate calculates calculated move moves moved moving
    assign assigns assigned assigning give gives given giving take takes taken taking
    make makes made making use uses used using set sets get gets got maintain
    maintains maintained generate generates generated notify notifies notified
    request requests requested monitor monitors monitored check checks checked
    detect detects detected update updates updated create creates created delete
    deletes deleted load loads loaded reach reaches reached return returns returned
    land lands landed enter enters entered exceed exceeds exceeded corresponding
    prevent prevents prevented ensure ensures ensured contain contains contained
    include includes included report reports reported respond responds responded
    transmit transmits transmitted activate activates activated command commands
    commanded select selects selected start starts started stop stops stopped
    able unable low high red green safe lost completed leaving hover hovers climb
    climbs modify modifies cancel cancels avoid avoids alter alters execute executes
    simulate simulates abort aborts view views follow follows validate validates
    stabilize stabilizes warn warns carry carries capture captures minimize minimizes
    define defines control controls list lists descend descends keep keeps emulate
    emulates read reads upload uploads log logs verify verifies pause pauses
    highlight highlights limit limits
    """.split()
)


def is_nominal(token: str) -> bool:
    return token not in NON_NOMINAL and token not in PUNCTUATION


@dataclass
class RequirementRecord:
    id: str
    text: str
    keywords: list[Phrase] = field(default_factory=list)
    roles: dict | None = None

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)

    def keyword_strings(self) -> list[str]:
        return [" ".join(k) for k in self.keywords]


def _phrase(s: str | Sequence[str]) -> Phrase:
    return tuple(tokenize(s)) if isinstance(s, str) else tuple(s)


def record_from_dict(obj: Mapping) -> RequirementRecord:
    keywords = [_phrase(k) for k in obj.get("keywords") or []]
    return RequirementRecord(
        id=str(obj["id"]),
        text=str(obj["text"]),
        keywords=[k for k in keywords if k],
        roles=obj.get("roles"),
    )


def record_to_dict(record: RequirementRecord) -> dict:
    out = {"id": record.id, "text": record.text, "keywords": record.keyword_strings()}
    if record.roles is not None:
        out["roles"] = record.roles
    return out


def load_corpus(path: str | Path) -> list[RequirementRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(record_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"line {lineno}: invalid requirement record") from exc
    return records


def noun_phrase_candidates(tokens: Sequence[str]) -> list[Phrase]:
    """Maximal runs of nominal tokens, in order of first occurrence, deduplicated."""
    out: list[Phrase] = []
    run: list[str] = []
    for tok in list(tokens) + [SEP]:
        if tok != SEP and is_nominal(tok):
            run.append(tok)
            continue
        if run and tuple(run) not in out:
            out.append(tuple(run))
        run = []
    return out


def extract_keywords(record: RequirementRecord, rng_seed: int) -> list[Phrase]:
    candidates = noun_phrase_candidates(record.tokens)
    if len(candidates) < 2:
        raise ValueError(f"insufficient noun phrases in record {record.id!r}")
    rng = random.Random(rng_seed)
    n = rng.randint(2, len(candidates))
    picked = sorted(rng.sample(range(len(candidates)), n))
    return [candidates[i] for i in picked]


def mark_copy_labels(keywords: Iterable[Sequence[str]], target_tokens: Sequence[str]) -> list[int]:
    labels = [0] * len(target_tokens)
    target = list(target_tokens)
    for kw in keywords:
        kw = list(kw)
        m = len(kw)
        if m == 0:
            continue
        for i in range(len(target) - m + 1):
            if target[i : i + m] == kw:
                labels[i : i + m] = [1] * m
    return labels


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.id_to_token)


def build_vocabulary(texts: Iterable[str], min_count: int = 1) -> Vocabulary:
    counts = Counter(tok for text in texts for tok in tokenize(text))
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIALS),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(list(SPECIALS) + kept)


@dataclass
class EncodedPair:
    src_ids: list[int]
    tgt_ids: list[int]
    segments: list[int]
    copy_labels: list[int]
    src_tokens: list[str]
    tgt_tokens: list[str]

    @property
    def positions(self) -> list[int]:
        return list(range(len(self.src_ids) + len(self.tgt_ids)))


def source_tokens(keywords: Sequence[Sequence[str]]) -> list[str]:
    toks = [CLS]
    for kw in keywords:
        toks.extend(kw)
        toks.append(SEP)
    return toks


def encode_pair(record: RequirementRecord, vocab: Vocabulary, max_len: int) -> EncodedPair:
    src = source_tokens(record.keywords)
    if len(src) >= max_len:
        raise ValueError(f"source of {record.id!r} has {len(src)} tokens, max_len is {max_len}")
    body = record.tokens[: max_len - len(src) - 1]
    tgt = body + [SEP]
    labels = mark_copy_labels(record.keywords, body) + [0]
    return EncodedPair(
        src_ids=vocab.encode(src),
        tgt_ids=vocab.encode(tgt),
        segments=[0] * len(src) + [1] * len(tgt),
        copy_labels=labels,
        src_tokens=src,
        tgt_tokens=tgt,
    )


def encode_source(keywords: Sequence[Sequence[str]], vocab: Vocabulary) -> list[int]:
    return vocab.encode(source_tokens(keywords))


@dataclass
class FoldSplit:
    k: int
    folds: list[list[str]]

    def train_test(self, i: int) -> tuple[list[str], list[str]]:
        test = self.folds[i]
        train = [rid for j, f in enumerate(self.folds) if j != i for rid in f]
        return train, test


def make_folds(records: Sequence[RequirementRecord], k: int, rng_seed: int) -> FoldSplit:
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(records):
        raise ValueError(f"k={k} exceeds the number of records ({len(records)})")
    ids = [r.id for r in records]
    random.Random(rng_seed).shuffle(ids)
    folds: list[list[str]] = [[] for _ in range(k)]
    for i, rid in enumerate(ids):
        folds[i % k].append(rid)
    return FoldSplit(k, folds)
