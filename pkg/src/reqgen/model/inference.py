from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from reqgen.corpus import PAD_ID
from reqgen.model.config import ModelConfig
from reqgen.model.layers import sigmoid
from reqgen.model.network import KnowledgeEncoding, encode_knowledge_batch, forward, make_batch
from reqgen.model.params import Params


class ModelScorer:
    """Next-token and copy probabilities for decoding one source sequence.

    Knowledge is encoded once at construction and reused for every step.
    """

    def __init__(self, params: Params, cfg: ModelConfig, src_ids: Sequence[int],
                 knowledge_ids: Mapping[int, Sequence[int]] | None = None):
        self.params = params
        self.cfg = cfg
        self.src_ids = list(src_ids)
        self.vocab_size = cfg.vocab_size
        # reuse the training-time packing so per-layer widths line up
        kb = make_batch([self.src_ids], [[PAD_ID]], None, [dict(knowledge_ids or {})],
                        cfg.injection_layers).knowledge
        self.encodings, _ = encode_knowledge_batch(params, cfg, kb)

    def _tiled(self, b: int) -> dict[int, KnowledgeEncoding]:
        return {l: KnowledgeEncoding(np.repeat(e.matrix, b, axis=0), np.repeat(e.mask, b, axis=0))
                for l, e in self.encodings.items()}

    def __call__(self, prefixes: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        b = len(prefixes)
        # the trailing placeholder is never visible to the row that predicts it
        targets = [list(p) + [PAD_ID] for p in prefixes]
        batch = make_batch([self.src_ids] * b, targets)
        lm, cp, _ = forward(self.params, self.cfg, batch, self._tiled(b))
        rows = np.arange(b)
        last = np.asarray([len(p) for p in prefixes])
        logits = lm[rows, last]
        logits = logits - logits.max(axis=-1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=-1, keepdims=True)
        return probs, sigmoid(cp[rows, last])
