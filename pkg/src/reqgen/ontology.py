"""Domain ontology storage, keyword-rooted multi-hop retrieval and pseudo-sentences.

The ontology is an undirected multigraph over entity names; every triple is
one edge. Retrieval starts from the entities matching the input keywords and
collects everything within a bounded number of hops, counting how many walks
reach each entity (the "retrieval frequency").
"""

from __future__ import annotations

import enum
import json
import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from reqgen.corpus import tokenize


class RelationKind(enum.Enum):
    SUBCLASS = "Subclass"
    SUPERCLASS = "SuperClass"
    SUBPROPERTY = "SubProperty"
    HAS_DOMAIN = "HasDomain"
    HAS_RANGE = "HasRange"
    OTHER = "Other"


_RELATION_KINDS = {
    "subclassof": RelationKind.SUBCLASS,
    "hassuperclasses": RelationKind.SUPERCLASS,
    "subpropertyof": RelationKind.SUBPROPERTY,
    "hasdomain": RelationKind.HAS_DOMAIN,
    "has domain": RelationKind.HAS_DOMAIN,
    "hasrange": RelationKind.HAS_RANGE,
    "has range": RelationKind.HAS_RANGE,
}


def classify_relation(relation: str) -> RelationKind:
    return _RELATION_KINDS.get(normalize_name(relation), RelationKind.OTHER)


def normalize_name(name: str) -> str:
    """Lowercase and collapse internal whitespace."""
    return " ".join(name.lower().split())


@dataclass(frozen=True)
class Triple:
    subject: str
    relation: str
    object: str

    def __post_init__(self):
        if not self.subject or not self.object or not self.relation:
            raise ValueError(f"triple fields must be non-empty: {self!r}")

    @property
    def kind(self) -> RelationKind:
        return classify_relation(self.relation)


class OntologyGraph:
    """Immutable undirected view over a list of triples."""

    def __init__(self, triples: Iterable[Triple] = ()):
        seen = set()
        ordered = []
        for t in triples:
            if t not in seen:
                seen.add(t)
                ordered.append(t)
        self.triples: tuple[Triple, ...] = tuple(ordered)

        entities: dict[str, None] = {}
        adjacency: dict[str, list[tuple[str, str]]] = defaultdict(list)
        # edge index per adjacency entry, so callers can map walks back to triples
        incident: dict[str, list[int]] = defaultdict(list)
        for i, t in enumerate(self.triples):
            entities.setdefault(t.subject)
            entities.setdefault(t.object)
            adjacency[t.subject].append((t.relation, t.object))
            incident[t.subject].append(i)
            if t.object != t.subject:
                adjacency[t.object].append((t.relation, t.subject))
                incident[t.object].append(i)
        self.entities: frozenset[str] = frozenset(entities)
        self._entity_order = tuple(entities)
        self.adjacency: dict[str, tuple[tuple[str, str], ...]] = {
            e: tuple(adjacency[e]) for e in self._entity_order
        }
        self._incident = {e: tuple(incident[e]) for e in self._entity_order}
        self.triple_index = {t: i for i, t in enumerate(self.triples)}
        self._by_norm: dict[str, str] = {}
        for e in self._entity_order:
            self._by_norm.setdefault(normalize_name(e), e)

    def __len__(self) -> int:
        return len(self.triples)

    def neighbors(self, entity: str) -> tuple[tuple[str, str], ...]:
        return self.adjacency.get(entity, ())

    def incident_triples(self, entity: str) -> list[Triple]:
        return [self.triples[i] for i in self._incident.get(entity, ())]

    def match_entity(self, phrase: str) -> str | None:
        return self._by_norm.get(normalize_name(phrase))


def load_triples(path: str | Path) -> OntologyGraph:
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                triples.append(Triple(str(obj["s"]), str(obj["r"]), str(obj["o"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"line {lineno}: invalid triple") from exc
    return OntologyGraph(triples)


@dataclass
class HopResult:
    hop_of: dict[str, int]
    frequency: dict[str, int]
    max_hops: int
    seeds: list[str]
    unmatched: list[str] = field(default_factory=list)


def multi_hop_search(graph: OntologyGraph, keywords: Sequence[str], max_hops: int) -> HopResult:
    """Collect entities within ``max_hops`` of the keyword seeds.

    ``frequency[e]`` counts undirected walks of length 1..max_hops that start
    at any seed and end at ``e``.
    """
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    seeds: list[str] = []
    unmatched: list[str] = []
    for kw in keywords:
        ent = graph.match_entity(kw)
        if ent is None:
            unmatched.append(kw)
        elif ent not in seeds:
            seeds.append(ent)
    if not seeds:
        raise LookupError("no keyword matched ontology")

    seed_set = set(seeds)
    hop_of: dict[str, int] = {}
    dist = {s: 0 for s in seeds}
    queue = deque(seeds)
    while queue:
        u = queue.popleft()
        if dist[u] == max_hops:
            continue
        for _, v in graph.neighbors(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    for e, d in dist.items():
        if e not in seed_set:
            hop_of[e] = d

    counts = {s: 1 for s in seeds}
    total: dict[str, int] = defaultdict(int)
    for _ in range(max_hops):
        nxt: dict[str, int] = defaultdict(int)
        for u, c in counts.items():
            for _, v in graph.neighbors(u):
                nxt[v] += c
        for v, c in nxt.items():
            total[v] += c
        counts = nxt
    frequency = {e: total[e] for e in hop_of}
    return HopResult(hop_of, frequency, max_hops, seeds, unmatched)


def filter_by_frequency(result: HopResult, threshold: int) -> HopResult:
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    keep = [e for e in result.hop_of if result.frequency[e] > threshold]
    return HopResult(
        hop_of={e: result.hop_of[e] for e in keep},
        frequency={e: result.frequency[e] for e in keep},
        max_hops=result.max_hops,
        seeds=list(result.seeds),
        unmatched=list(result.unmatched),
    )


@dataclass(frozen=True)
class PseudoSentence:
    text: str
    hop: int
    sources: tuple[Triple, ...]

    @property
    def entities(self) -> tuple[str, ...]:
        names = []
        for t in self.sources:
            for e in (t.subject, t.object):
                if e not in names:
                    names.append(e)
        return tuple(names)


def _sentence_hop(sources: Sequence[Triple], hop_of: Mapping[str, int]) -> int:
    hops = [hop_of[e] for t in sources for e in (t.subject, t.object) if e in hop_of]
    return min(hops) if hops else 1


def _capitalize(text: str) -> str:
    return text[:1].upper() + text[1:]


def triples_to_pseudo_sentences(
    triples: Sequence[Triple], hop_of: Mapping[str, int]
) -> list[PseudoSentence]:
    """Render triples with the fixed templates, pairing domain/range per property."""
    domains: dict[str, list[int]] = defaultdict(list)
    ranges: dict[str, list[int]] = defaultdict(list)
    for i, t in enumerate(triples):
        if t.kind is RelationKind.HAS_DOMAIN:
            domains[t.subject].append(i)
        elif t.kind is RelationKind.HAS_RANGE:
            ranges[t.subject].append(i)

    partner: dict[int, int] = {}
    for prop, dom_idx in domains.items():
        for d, r in zip(dom_idx, ranges.get(prop, [])):
            partner[d] = r
            partner[r] = d

    out = []
    done: set[int] = set()
    for i, t in enumerate(triples):
        if i in done:
            continue
        kind = t.kind
        sources: tuple[Triple, ...] = (t,)
        if i in partner:
            j = partner[i]
            dom, rng = (t, triples[j]) if kind is RelationKind.HAS_DOMAIN else (triples[j], t)
            text = _capitalize(f"{dom.object} is {dom.subject} {rng.object}") + "."
            sources = (dom, rng)
            done.add(j)
        elif kind is RelationKind.SUBCLASS:
            text = f"{t.subject} is subclass of {t.object}"
        elif kind is RelationKind.SUPERCLASS:
            text = f"{t.subject} has super class {t.object}"
        elif kind is RelationKind.SUBPROPERTY:
            text = f"{t.subject} is subproperty of {t.object}"
        elif kind is RelationKind.HAS_DOMAIN:
            text = f"{t.subject} has domain {t.object}"
        elif kind is RelationKind.HAS_RANGE:
            text = f"{t.subject} has range {t.object}"
        else:
            text = f"{t.subject} {t.relation} {t.object}"
        done.add(i)
        out.append(PseudoSentence(text, _sentence_hop(sources, hop_of), sources))
    return out


@dataclass(frozen=True)
class PlanEntry:
    layer: int
    hop_limit: int
    freq_threshold: int = 10


@dataclass(frozen=True)
class InjectionPlan:
    entries: tuple[PlanEntry, ...] = (
        PlanEntry(1, 5, 10),
        PlanEntry(2, 2, 10),
        PlanEntry(4, 1, 10),
    )
    token_cap_per_layer: int = 512

    def __post_init__(self):
        layers = [e.layer for e in self.entries]
        hops = [e.hop_limit for e in self.entries]
        if any(a >= b for a, b in zip(layers, layers[1:])):
            raise ValueError(f"plan layers must be strictly increasing: {layers}")
        if any(a < b for a, b in zip(hops, hops[1:])):
            raise ValueError(f"plan hop limits must be non-increasing: {hops}")
        for e in self.entries:
            if e.layer < 1 or e.hop_limit < 1 or e.freq_threshold < 0:
                raise ValueError(f"invalid plan entry {e}")
        if self.token_cap_per_layer < 1:
            raise ValueError("token_cap_per_layer must be >= 1")

    @property
    def layers(self) -> list[int]:
        return [e.layer for e in self.entries]

    @property
    def max_hops(self) -> int:
        return max((e.hop_limit for e in self.entries), default=1)

    def label(self) -> str:
        """Layer(hop) label, e.g. ``1(5),2(2),4(1)``."""
        return ",".join(f"{e.layer}({e.hop_limit})" for e in self.entries)

    @classmethod
    def from_label(cls, label: str, threshold: int = 10, cap: int = 512) -> "InjectionPlan":
        entries = []
        for part in label.split(","):
            m = re.fullmatch(r"\s*(\d+)\((\d+)\)\s*", part)
            if not m:
                raise ValueError(f"bad layer(hop) label: {label!r}")
            entries.append(PlanEntry(int(m.group(1)), int(m.group(2)), threshold))
        return cls(tuple(entries), cap)

    def with_threshold(self, threshold: int) -> "InjectionPlan":
        return InjectionPlan(
            tuple(PlanEntry(e.layer, e.hop_limit, threshold) for e in self.entries),
            self.token_cap_per_layer,
        )

    def to_dict(self) -> dict:
        return {
            "entries": [[e.layer, e.hop_limit, e.freq_threshold] for e in self.entries],
            "token_cap_per_layer": self.token_cap_per_layer,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "InjectionPlan":
        return cls(
            tuple(PlanEntry(*map(int, e)) for e in d["entries"]),
            int(d.get("token_cap_per_layer", 512)),
        )


def sentence_token_count(sentence: PseudoSentence) -> int:
    # one extra slot for the [SEP] that follows each sentence
    return len(tokenize(sentence.text)) + 1


def build_injection_knowledge(
    graph: OntologyGraph, keywords: Sequence[str], plan: InjectionPlan
) -> dict[int, list[PseudoSentence]]:
    """Pseudo-sentences per injected layer; layers without knowledge map to []."""
    knowledge: dict[int, list[PseudoSentence]] = {e.layer: [] for e in plan.entries}
    if not plan.entries:
        return knowledge
    try:
        full = multi_hop_search(graph, keywords, plan.max_hops)
    except LookupError:
        return knowledge

    reached = set(full.seeds) | set(full.hop_of)
    for entry in plan.entries:
        filtered = filter_by_frequency(full, entry.freq_threshold)
        kept = {e for e, h in filtered.hop_of.items() if h <= entry.hop_limit}
        if not kept:
            continue
        order = sorted(kept, key=lambda e: (-filtered.frequency[e], e))

        # triples inside the retrieved region that touch a kept entity
        chosen: list[Triple] = []
        rank: dict[Triple, int] = {}
        for rank_i, ent in enumerate(order):
            for t in graph.incident_triples(ent):
                if t.subject in reached and t.object in reached and t not in rank:
                    rank[t] = rank_i
                    chosen.append(t)
        chosen.sort(key=graph.triple_index.__getitem__)
        sentences = triples_to_pseudo_sentences(chosen, full.hop_of)
        sentences.sort(key=lambda s: min(rank[t] for t in s.sources))

        budget = plan.token_cap_per_layer
        selected = []
        for s in sentences:
            n = sentence_token_count(s)
            if n > budget:
                break
            budget -= n
            selected.append(s)
        knowledge[entry.layer] = selected
    return knowledge


def all_pseudo_sentences(graph: OntologyGraph) -> list[PseudoSentence]:
    """Every triple of the ontology rendered once, for vocabulary building."""
    return triples_to_pseudo_sentences(list(graph.triples), {})
