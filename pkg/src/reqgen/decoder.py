"""Keyword-constrained beam search with copy mixing and syntax rescoring.

Each step mixes the language-model distribution with a copy distribution
that points at the keyword phrases still missing from the hypothesis. The
end token is withheld until every phrase has appeared, and a token is only
allowed if the remaining length can still fit all missing phrases. Finished
hypotheses are scored by length-normalized log-probability plus a weighted
RS4RE agreement with the analyst's role annotations.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Protocol, Sequence

import numpy as np

from reqgen.corpus import CLS_ID, PAD_ID, PUNCTUATION, SEP, SEP_ID, UNK_ID, Vocabulary, tokenize

PENDING = "pending"
DONE = "done"


class BeamCollapse(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# --- syntax reference / RS4RE ------------------------------------------------

@dataclass(frozen=True)
class SyntaxElement:
    name: str
    words: frozenset[str]
    alpha: float


@dataclass(frozen=True)
class SyntaxReference:
    elements: tuple[SyntaxElement, ...]

    def __post_init__(self):
        if not self.elements:
            raise ValueError("syntax reference needs at least one element")
        for e in self.elements:
            if not e.words:
                raise ValueError(f"element {e.name!r} has an empty word set")
            if not 0.0 < e.alpha <= 1.0:
                raise ValueError(f"element {e.name!r} weight {e.alpha} outside (0, 1]")
        total = math.fsum(e.alpha for e in self.elements)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"element weights sum to {total}, expected 1")

    @classmethod
    def from_roles(cls, roles: Mapping[str, Mapping]) -> "SyntaxReference":
        elements = []
        for name, spec in roles.items():
            words = {t for w in spec["words"] for t in tokenize(w) if t not in PUNCTUATION}
            elements.append(SyntaxElement(name, frozenset(words), float(spec["alpha"])))
        return cls(tuple(elements))


def rs4re_breakdown(candidate_tokens: Sequence[str], ref: SyntaxReference) -> dict[str, float]:
    present = {t.lower() for t in candidate_tokens}
    return {e.name: len(e.words & present) / len(e.words) for e in ref.elements}


def rs4re(candidate_tokens: Sequence[str], ref: SyntaxReference) -> float:
    """Weighted share of each element's reference words found in the candidate."""
    ratios = rs4re_breakdown(candidate_tokens, ref)
    return math.fsum(e.alpha * ratios[e.name] for e in ref.elements)


# --- keyword phrase tracking -------------------------------------------------

Phrase = tuple[int, ...]


def _occurs(tokens: Sequence[int], phrase: Phrase) -> bool:
    m = len(phrase)
    return any(tuple(tokens[i : i + m]) == phrase for i in range(len(tokens) - m + 1))


def phrase_states(tokens: Sequence[int], phrases: Sequence[Phrase]) -> tuple:
    """Per phrase: ``"done"``, ``"pending"`` or ``("in_progress", offset)``.

    At most one phrase is in progress: the pending phrase with the longest
    proper prefix matching the end of ``tokens`` (earliest phrase on ties).
    """
    states: list = [DONE if _occurs(tokens, p) else PENDING for p in phrases]
    best, best_k = None, 0
    for i, p in enumerate(phrases):
        if states[i] != PENDING:
            continue
        for k in range(min(len(p) - 1, len(tokens)), best_k, -1):
            if tuple(tokens[len(tokens) - k :]) == p[:k]:
                best, best_k = i, k
                break
    if best is not None:
        states[best] = ("in_progress", best_k)
    return tuple(states)


def _done_mask(tokens: Sequence[int], phrases: Sequence[Phrase]) -> int:
    mask = 0
    for i, p in enumerate(phrases):
        if _occurs(tokens, p):
            mask |= 1 << i
    return mask


def _reduce_suffix(seq: tuple, phrases: tuple[Phrase, ...], done: int) -> tuple:
    """Longest suffix of ``seq`` that is a proper prefix of a pending phrase."""
    for k in range(min(len(seq), max(len(p) for p in phrases) - 1), 0, -1):
        suf = seq[len(seq) - k :]
        for i, p in enumerate(phrases):
            if not done >> i & 1 and k < len(p) and p[:k] == suf:
                return suf
    return ()


def _advance(phrases: tuple[Phrase, ...], done: int, state: tuple, token: int) -> tuple[int, tuple]:
    ext = state + (token,)
    for i, p in enumerate(phrases):
        if not done >> i & 1 and len(p) <= len(ext) and ext[len(ext) - len(p) :] == p:
            done |= 1 << i
    return done, _reduce_suffix(ext, phrases, done)


def _pending_alphabet(phrases: tuple[Phrase, ...], done: int) -> list[int]:
    return sorted({t for i, p in enumerate(phrases) if not done >> i & 1 for t in p})


@lru_cache(maxsize=65536)
def _min_completion(phrases: tuple[Phrase, ...], done: int, state: tuple) -> int:
    """Breadth-first search over (done set, partial-match suffix) states."""
    full = (1 << len(phrases)) - 1
    if done == full:
        return 0
    seen = {(done, state)}
    queue = deque([(done, state, 0)])
    while queue:
        d, s, dist = queue.popleft()
        for a in _pending_alphabet(phrases, d):
            nd, ns = _advance(phrases, d, s, a)
            if nd == full:
                return dist + 1
            if (nd, ns) not in seen:
                seen.add((nd, ns))
                queue.append((nd, ns, dist + 1))
    raise AssertionError("unreachable: every phrase can always be appended")


def _match_state(tokens: Sequence[int], phrases: tuple[Phrase, ...]) -> tuple[int, tuple]:
    done = _done_mask(tokens, phrases)
    return done, _reduce_suffix(tuple(tokens), phrases, done)


def min_completion(tokens: Sequence[int], phrases: Sequence[Phrase]) -> int:
    """Fewest extra tokens after which every phrase occurs contiguously."""
    phrases = tuple(tuple(p) for p in phrases if p)
    if not phrases:
        return 0
    return _min_completion(phrases, *_match_state(tokens, phrases))


# --- generation --------------------------------------------------------------

@dataclass
class GenerationConstraints:
    keyword_phrases: list[Phrase]
    beam_size: int = 5
    max_len: int = 40
    lambda_rs: float = 1.0
    length_norm: bool = True
    hard: bool = True
    use_copy: bool = True

    def __post_init__(self):
        self.keyword_phrases = [tuple(p) for p in self.keyword_phrases]
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if len(self.keyword_phrases) < 2:
            raise ValueError("at least two keyword phrases are required")
        if any(not p for p in self.keyword_phrases):
            raise ValueError("empty keyword phrase")


@dataclass
class BeamHypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    phrase_state: tuple
    finished: bool = False

    @property
    def complete(self) -> bool:
        return self.finished and all(s == DONE for s in self.phrase_state)


def mix_distribution(lm_probs: np.ndarray, p_copy: float, phrase_state: Sequence,
                     phrases: Sequence[Phrase]) -> np.ndarray:
    """(1 - p_copy) * lm + p_copy * copy, where copy points at the keywords.

    Copy mass goes to the next token of the in-progress phrase, else spreads
    uniformly over the first tokens of pending phrases, else copy = lm.
    """
    lm_probs = np.asarray(lm_probs, dtype=float)
    copy = None
    for st, p in zip(phrase_state, phrases):
        if isinstance(st, tuple):
            copy = np.zeros_like(lm_probs)
            copy[p[st[1]]] = 1.0
            break
    if copy is None:
        starts = [p[0] for st, p in zip(phrase_state, phrases) if st == PENDING]
        if starts:
            copy = np.zeros_like(lm_probs)
            for t in starts:
                copy[t] += 1.0 / len(starts)
        else:
            copy = lm_probs
    return (1.0 - p_copy) * lm_probs + p_copy * copy


def allowed_tokens(tokens: Sequence[int], vocab_size: int, constraints: GenerationConstraints) -> np.ndarray:
    """Boolean mask of legal next tokens for the prefix ``tokens``."""
    allowed = np.ones(vocab_size, dtype=bool)
    allowed[[PAD_ID, UNK_ID, CLS_ID]] = False
    t = len(tokens)
    last = constraints.max_len - 1
    if t >= last:
        allowed[:] = False
        allowed[SEP_ID] = True
        return allowed
    if not constraints.hard:
        return allowed
    phrases = tuple(constraints.keyword_phrases)
    done, state = _match_state(tokens, phrases)
    if _min_completion(phrases, done, state) == 0:
        return allowed
    allowed[SEP_ID] = False
    slack = last - (t + 1)
    feasible = allowed.copy()
    alphabet = [w for w in _pending_alphabet(phrases, done) if w < vocab_size]
    # any token outside the pending phrases resets the partial match
    if _min_completion(phrases, done, ()) > slack:
        feasible[:] = False
    for w in alphabet:
        # a keyword token missing from the vocabulary is encoded as [UNK]; it must stay reachable
        if w in (PAD_ID, CLS_ID, SEP_ID):
            continue
        feasible[w] = _min_completion(phrases, *_advance(phrases, done, state, w)) <= slack
    # when nothing can still satisfy every phrase, keep generating; the result is flagged incomplete
    return feasible if feasible.any() else allowed


class StepScorer(Protocol):
    vocab_size: int

    def __call__(self, prefixes: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        """Return next-token probabilities [B, V] and copy probabilities [B]."""


@dataclass
class Candidate:
    tokens: list[str]
    ids: list[int]
    text: str
    score: float
    log_prob: float
    rs4re: float | None
    complete: bool
    element_overlap: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "tokens": self.tokens,
            "score": self.score,
            "log_prob": self.log_prob,
            "rs4re": self.rs4re,
            "complete": self.complete,
            "element_overlap": self.element_overlap,
        }


def hypothesis_score(ids: Sequence[int], log_prob: float, vocab: Vocabulary,
                     constraints: GenerationConstraints, ref: SyntaxReference | None) -> tuple[float, float | None]:
    score = log_prob / len(ids) if constraints.length_norm else log_prob
    rs = None
    if ref is not None:
        rs = rs4re([t for t in vocab.decode(ids) if t != SEP], ref)
        score += constraints.lambda_rs * rs
    return score, rs


def _finalize(hyp: BeamHypothesis, vocab: Vocabulary, constraints: GenerationConstraints,
              ref: SyntaxReference | None) -> Candidate:
    ids = list(hyp.tokens)
    toks = vocab.decode(ids)
    score, rs = hypothesis_score(ids, hyp.log_prob, vocab, constraints, ref)
    overlap = rs4re_breakdown([t for t in toks if t != SEP], ref) if ref is not None else {}
    return Candidate(toks, ids, detokenize(toks), score, hyp.log_prob, rs, hyp.complete, overlap)


def beam_search(scorer: StepScorer, vocab: Vocabulary, constraints: GenerationConstraints,
                ref: SyntaxReference | None = None) -> list[Candidate]:
    """Ranked finished candidates: complete ones first, then by final score."""
    phrases = constraints.keyword_phrases
    v = scorer.vocab_size
    alive = [BeamHypothesis((), 0.0, phrase_states((), phrases))]
    finished: list[BeamHypothesis] = []
    for step in range(constraints.max_len):
        if not alive:
            break
        lm, p_copy = scorer([h.tokens for h in alive])
        scores, owners, words = [], [], []
        for j, hyp in enumerate(alive):
            pc = float(p_copy[j]) if constraints.use_copy else 0.0
            q = mix_distribution(lm[j], pc, hyp.phrase_state, phrases)
            legal = allowed_tokens(hyp.tokens, v, constraints) & (q > 0)
            ws = np.flatnonzero(legal)
            scores.append(hyp.log_prob + np.log(q[ws]))
            owners.append(np.full(len(ws), j))
            words.append(ws)
        all_scores = np.concatenate(scores)
        if all_scores.size == 0:
            raise BeamCollapse(
                f"no expandable hypotheses at step {step}",
                {"step": step, "alive": [list(h.tokens) for h in alive],
                 "finished": [list(h.tokens) for h in finished]},
            )
        all_owners = np.concatenate(owners)
        all_words = np.concatenate(words)
        # stable order: score desc, then hypothesis index, then token id
        order = np.lexsort((all_words, all_owners, -all_scores))[: constraints.beam_size]
        nxt = []
        for i in order:
            parent = alive[all_owners[i]]
            toks = parent.tokens + (int(all_words[i]),)
            hyp = BeamHypothesis(toks, float(all_scores[i]), phrase_states(toks, phrases))
            if toks[-1] == SEP_ID:
                hyp.finished = True
                finished.append(hyp)
            else:
                nxt.append(hyp)
        alive = nxt
    cands = [_finalize(h, vocab, constraints, ref) for h in finished]
    cands.sort(key=lambda c: (not c.complete, -c.score))
    return cands


def detokenize(tokens: Sequence[str]) -> str:
    toks = list(tokens)
    if toks and toks[-1] == SEP:
        toks = toks[:-1]
    out = ""
    for t in toks:
        if not out:
            out = t
        elif t in PUNCTUATION and t != "(" or out.endswith("("):
            out += t
        else:
            out += " " + t
    return out[:1].upper() + out[1:]


def phrases_to_ids(phrases: Sequence[Sequence[str]], vocab: Vocabulary) -> list[Phrase]:
    return [tuple(vocab.encode(p)) for p in phrases]
