"""Seq2seq transformer with per-layer knowledge injection and a copy head.

Source (keywords) and target (requirement) share one token stream. Source
positions attend bidirectionally, target positions attend to the source and
to earlier targets. The state that predicts target token ``j`` is the one at
stream position ``src_len - 1 + j``, so the first target token is predicted
from the last source ``[SEP]``.

Knowledge for an injected layer is a token sequence (pseudo-sentences joined
by ``[SEP]``). It is embedded with the shared token table, run through a
bidirectional GRU, projected to ``d_model`` and attended to by the layer's
hidden states::

    A      = softmax(H K^T / sqrt(d) + M)
    H_ctxt = A K
    H'     = LayerNorm(H_ctxt W + H)

An example with no knowledge for a layer passes through that layer unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from reqgen.corpus import PAD_ID, SEP_ID, EncodedPair, Vocabulary, tokenize
from reqgen.model.config import ModelConfig
from reqgen.model.layers import (
    attention_backward,
    attention_forward,
    gelu_backward,
    gelu_forward,
    gru_backward,
    gru_forward,
    layer_norm_backward,
    layer_norm_forward,
    log_softmax,
    masked_softmax,
    sigmoid,
    softmax_backward,
)
from reqgen.model.params import Params


def seq2seq_mask(src_len: int, tgt_len: int) -> np.ndarray:
    n = src_len + tgt_len
    allowed = np.zeros((n, n), dtype=bool)
    allowed[:, :src_len] = True
    allowed[src_len:, src_len:] = np.tril(np.ones((tgt_len, tgt_len), dtype=bool))
    return allowed


def knowledge_token_ids(sentences: Sequence, vocab: Vocabulary, cap: int) -> list[int]:
    """Concatenate sentence tokens, each followed by [SEP], truncated to ``cap``."""
    ids: list[int] = []
    for s in sentences:
        text = s if isinstance(s, str) else s.text
        ids.extend(vocab.encode(tokenize(text)))
        ids.append(SEP_ID)
    return ids[:cap]


@dataclass
class Batch:
    ids: np.ndarray            # [B, N]
    segments: np.ndarray       # [B, N]
    allowed: np.ndarray        # [B, N, N] bool
    pred_pos: np.ndarray       # [B, T]
    targets: np.ndarray        # [B, T]
    target_mask: np.ndarray    # [B, T] bool
    copy_labels: np.ndarray    # [B, T]
    knowledge: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def make_batch(
    sources: Sequence[Sequence[int]],
    targets: Sequence[Sequence[int]],
    copy_labels: Sequence[Sequence[int]] | None = None,
    knowledge: Sequence[Mapping[int, Sequence[int]]] | None = None,
    layers: Sequence[int] = (),
) -> Batch:
    b = len(sources)
    lens = [len(s) + len(t) for s, t in zip(sources, targets)]
    n = max(lens)
    t_max = max(len(t) for t in targets)
    ids = np.full((b, n), PAD_ID, dtype=np.int64)
    segs = np.zeros((b, n), dtype=np.int64)
    allowed = np.zeros((b, n, n), dtype=bool)
    pred_pos = np.zeros((b, t_max), dtype=np.int64)
    tgt = np.full((b, t_max), PAD_ID, dtype=np.int64)
    tmask = np.zeros((b, t_max), dtype=bool)
    clabels = np.zeros((b, t_max))
    for i, (s, t) in enumerate(zip(sources, targets)):
        ls, lt = len(s), len(t)
        if ls == 0:
            raise ValueError("empty source sequence")
        ids[i, :ls] = s
        ids[i, ls : ls + lt] = t
        segs[i, ls : ls + lt] = 1
        allowed[i, : ls + lt, : ls + lt] = seq2seq_mask(ls, lt)
        # padding rows only see themselves so their softmax stays defined
        pad = np.arange(ls + lt, n)
        allowed[i, pad, pad] = True
        pred_pos[i, :lt] = np.arange(ls - 1, ls - 1 + lt)
        tgt[i, :lt] = t
        tmask[i, :lt] = True
        if copy_labels is not None:
            clabels[i, :lt] = copy_labels[i]

    kb: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    if layers:
        knowledge = knowledge or [{} for _ in range(b)]
        width = max((len(k.get(layer, ())) for k in knowledge for layer in layers), default=0)
        for layer in layers:
            kids = np.full((b, width), PAD_ID, dtype=np.int64)
            kmask = np.zeros((b, width), dtype=bool)
            for i, k in enumerate(knowledge):
                seq = list(k.get(layer, ()))
                kids[i, : len(seq)] = seq
                kmask[i, : len(seq)] = True
            kb[layer] = (kids, kmask)
    return Batch(ids, segs, allowed, pred_pos, tgt, tmask & (tgt != PAD_ID), clabels, kb)


def batch_from_pairs(pairs: Sequence[EncodedPair],
                     knowledge: Sequence[Mapping[int, Sequence[int]]] | None,
                     cfg: ModelConfig) -> Batch:
    return make_batch(
        [p.src_ids for p in pairs],
        [p.tgt_ids for p in pairs],
        [p.copy_labels for p in pairs],
        knowledge,
        cfg.injection_layers,
    )


def embed_input(params: Params, ids: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Token + position + segment embeddings for ids [B, N] (or [N])."""
    ids = np.asarray(ids)
    segments = np.asarray(segments)
    vocab, max_len = params["tok_emb"].shape[0], params["pos_emb"].shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range [0, {vocab})")
    if ids.shape[-1] > max_len:
        raise ValueError(f"sequence length {ids.shape[-1]} exceeds max_len {max_len}")
    if segments.size and (segments.min() < 0 or segments.max() > 1):
        raise IndexError("segment id must be 0 or 1")
    n = ids.shape[-1]
    return params["tok_emb"][ids] + params["pos_emb"][:n] + params["seg_emb"][segments]


@dataclass
class KnowledgeEncoding:
    matrix: np.ndarray  # [B, K, d]
    mask: np.ndarray    # [B, K] bool

    @property
    def n_k(self) -> np.ndarray:
        return self.mask.sum(axis=-1)


def _reverse_index(mask: np.ndarray) -> np.ndarray:
    """Per-row index that reverses the valid prefix and leaves padding in place."""
    s, t = mask.shape
    idx = np.tile(np.arange(t), (s, 1))
    lens = mask.sum(axis=1)
    for i, ln in enumerate(lens):
        idx[i, :ln] = np.arange(ln - 1, -1, -1)
    return idx


def encode_knowledge_batch(params: Params, cfg: ModelConfig,
                           knowledge: Mapping[int, tuple[np.ndarray, np.ndarray]]):
    """Encode every injected layer's knowledge in one bidirectional GRU pass.

    Returns ``({layer: KnowledgeEncoding}, cache)``; cache is None when there
    is no knowledge token anywhere in the batch.
    """
    layers = list(cfg.injection_layers)
    if not layers or not knowledge:
        return {}, None
    ids = np.concatenate([knowledge[l][0] for l in layers], axis=0)
    mask = np.concatenate([knowledge[l][1] for l in layers], axis=0)
    b = knowledge[layers[0]][0].shape[0]
    if ids.shape[1] == 0 or not mask.any():
        empty = {l: KnowledgeEncoding(np.zeros((b, 0, cfg.d_model)), np.zeros((b, 0), bool))
                 for l in layers}
        return empty, None

    x = params["tok_emb"][ids]
    hf, cf = gru_forward(x, params["kenc.fwd_w"], params["kenc.fwd_u"], params["kenc.fwd_b"])
    rev = _reverse_index(mask)
    rows = np.arange(ids.shape[0])[:, None]
    hr, cb = gru_forward(x[rows, rev], params["kenc.bwd_w"], params["kenc.bwd_u"], params["kenc.bwd_b"])
    hb = hr[rows, rev]
    hcat = np.concatenate([hf, hb], axis=-1)
    k_all = hcat @ params["kenc.proj_w"] + params["kenc.proj_b"]
    out = {}
    for j, l in enumerate(layers):
        sl = slice(j * b, (j + 1) * b)
        out[l] = KnowledgeEncoding(k_all[sl], mask[sl])
    cache = (ids, rev, cf, cb, hcat, layers, b)
    return out, cache


def encode_knowledge_backward(params: Params, d_enc: Mapping[int, np.ndarray], cache, grads: Params):
    ids, rev, cf, cb, hcat, layers, b = cache
    dk_all = np.concatenate([d_enc[l] for l in layers], axis=0)
    d = dk_all.shape[-1]
    kh = params["kenc.fwd_u"].shape[0]
    grads["kenc.proj_w"] += hcat.reshape(-1, 2 * kh).T @ dk_all.reshape(-1, d)
    grads["kenc.proj_b"] += dk_all.reshape(-1, d).sum(axis=0)
    dhcat = dk_all @ params["kenc.proj_w"].T
    dhf, dhb = dhcat[..., :kh], dhcat[..., kh:]
    rows = np.arange(ids.shape[0])[:, None]
    dhr = dhb[rows, rev]
    dxf, dw, du, db = gru_backward(dhf, cf, params["kenc.fwd_w"], params["kenc.fwd_u"])
    grads["kenc.fwd_w"] += dw
    grads["kenc.fwd_u"] += du
    grads["kenc.fwd_b"] += db
    dxr, dw, du, db = gru_backward(dhr, cb, params["kenc.bwd_w"], params["kenc.bwd_u"])
    grads["kenc.bwd_w"] += dw
    grads["kenc.bwd_u"] += du
    grads["kenc.bwd_b"] += db
    dx = dxf + dxr[rows, rev]
    np.add.at(grads["tok_emb"], ids, dx)


def encode_knowledge(sentences: Sequence, vocab: Vocabulary, params: Params, cfg: ModelConfig,
                     cap: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Single-sequence convenience: returns (matrix [n_k, d], mask [n_k])."""
    ids = knowledge_token_ids(sentences, vocab, cap)
    if not ids:
        return np.zeros((0, cfg.d_model)), np.zeros(0, dtype=bool)
    arr = np.asarray([ids])
    msk = np.ones_like(arr, dtype=bool)
    layer = cfg.injection_layers[0]
    knowledge = {l: (arr, msk) for l in cfg.injection_layers}
    enc, _ = encode_knowledge_batch(params, cfg, knowledge)
    return enc[layer].matrix[0], enc[layer].mask[0]


def inject_forward(h: np.ndarray, enc: KnowledgeEncoding, w, ln_g, ln_b):
    """Knowledge attention sublayer on h [B, N, d]; identity for empty rows."""
    has = enc.mask.any(axis=-1)
    if not has.any():
        return h, None
    k = enc.matrix
    d = h.shape[-1]
    scale = 1.0 / np.sqrt(d)
    allowed = (enc.mask | ~has[:, None])[:, None, :]
    a = masked_softmax((h @ k.transpose(0, 2, 1)) * scale, allowed)
    ctxt = a @ k
    y, ln_cache = layer_norm_forward(ctxt @ w + h, ln_g, ln_b)
    out = np.where(has[:, None, None], y, h)
    return out, (h, k, a, ctxt, ln_cache, has, scale)


def inject_backward(dout, cache, w):
    h, k, a, ctxt, ln_cache, has, scale = cache
    sel = has[:, None, None]
    dy = np.where(sel, dout, 0.0)
    dh = np.where(sel, 0.0, dout)
    dz, dg, db = layer_norm_backward(dy, ln_cache)
    d = h.shape[-1]
    dw = ctxt.reshape(-1, d).T @ dz.reshape(-1, d)
    dh = dh + dz
    dctxt = dz @ w.T
    da = dctxt @ k.transpose(0, 2, 1)
    dk = a.transpose(0, 2, 1) @ dctxt
    ds = softmax_backward(da, a) * scale
    dh = dh + ds @ k
    dk = dk + ds.transpose(0, 2, 1) @ h
    return dh, dk, dw, dg, db


def inject_knowledge(h: np.ndarray, matrix: np.ndarray, mask: np.ndarray, params: Params, layer: int):
    """Single-example injection: h [n, d], matrix [n_k, d] -> (output [n, d], weights [n, n_k])."""
    enc = KnowledgeEncoding(matrix[None], np.asarray(mask, dtype=bool)[None])
    p = f"inject.{layer}."
    out, cache = inject_forward(h[None], enc, params[p + "w"], params[p + "ln_g"], params[p + "ln_b"])
    if cache is None:
        return h, np.zeros((h.shape[0], matrix.shape[0]))
    return out[0], cache[2][0]


@dataclass
class ForwardTrace:
    batch: Batch
    enc_cache: object
    encodings: dict
    layer_caches: list
    inject_caches: dict
    final_cache: object
    hidden_pred: np.ndarray


def forward(params: Params, cfg: ModelConfig, batch: Batch,
            encodings: Mapping[int, KnowledgeEncoding] | None = None):
    """Return (lm_logits [B, T, V], copy_logits [B, T], trace).

    Pass precomputed ``encodings`` to reuse knowledge across decode steps; the
    trace then carries no knowledge-encoder cache.
    """
    enc_cache = None
    if encodings is None:
        encodings, enc_cache = encode_knowledge_batch(params, cfg, batch.knowledge)
    x = embed_input(params, batch.ids, batch.segments)
    layer_caches = []
    inject_caches = {}
    for i in range(1, cfg.depth + 1):
        p = f"layers.{i}."
        a, ln1 = layer_norm_forward(x, params[p + "ln1_g"], params[p + "ln1_b"])
        att, att_c = attention_forward(a, params[p + "wq"], params[p + "wk"], params[p + "wv"],
                                       params[p + "wo"], batch.allowed, cfg.heads)
        x = x + att
        c, ln2 = layer_norm_forward(x, params[p + "ln2_g"], params[p + "ln2_b"])
        u = c @ params[p + "ffn_w1"] + params[p + "ffn_b1"]
        g, gelu_c = gelu_forward(u)
        x = x + g @ params[p + "ffn_w2"] + params[p + "ffn_b2"]
        layer_caches.append((ln1, att_c, ln2, c, gelu_c, g))
        if i in cfg.injection_layers and i in encodings:
            q = f"inject.{i}."
            x, inj_c = inject_forward(x, encodings[i], params[q + "w"], params[q + "ln_g"], params[q + "ln_b"])
            if inj_c is not None:
                inject_caches[i] = inj_c
    hf, final_c = layer_norm_forward(x, params["lnf_g"], params["lnf_b"])
    rows = np.arange(batch.size)[:, None]
    hs = hf[rows, batch.pred_pos]
    lm_logits = hs @ params["tok_emb"].T
    copy_logits = hs @ params["copy_w"] + params["copy_b"]
    trace = ForwardTrace(batch, enc_cache, dict(encodings), layer_caches, inject_caches, final_c, hs)
    return lm_logits, copy_logits, trace


def loss_terms(lm_logits, copy_logits, targets, copy_labels, copy_weight, mask=None):
    """Return (loss, d_lm_logits, d_copy_logits).

    Mean token cross-entropy plus ``copy_weight`` times mean binary
    cross-entropy of the copy head; padded targets are excluded.
    """
    targets = np.asarray(targets)
    if mask is None:
        mask = targets != PAD_ID
    mask = np.asarray(mask, dtype=bool)
    count = max(int(mask.sum()), 1)
    m = mask.astype(float)

    logp = log_softmax(lm_logits)
    tgt_logp = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    ce = -(tgt_logp * m).sum() / count
    d_lm = np.exp(logp)
    np.put_along_axis(d_lm, targets[..., None],
                      np.take_along_axis(d_lm, targets[..., None], axis=-1) - 1.0, axis=-1)
    d_lm *= (m / count)[..., None]

    y = np.asarray(copy_labels, dtype=float)
    # log(1 + e^-|z|) form keeps large logits finite
    bce = np.maximum(copy_logits, 0) - copy_logits * y + np.log1p(np.exp(-np.abs(copy_logits)))
    bce = (bce * m).sum() / count
    d_copy = copy_weight * (sigmoid(copy_logits) - y) * m / count
    return ce + copy_weight * bce, d_lm, d_copy


def loss(lm_logits, copy_logits, tgt_ids, copy_labels, copy_weight, mask=None) -> float:
    return float(loss_terms(lm_logits, copy_logits, tgt_ids, copy_labels, copy_weight, mask)[0])


def backward(params: Params, cfg: ModelConfig, trace: ForwardTrace, d_lm, d_copy) -> Params:
    """Exact gradients of a scalar whose logit gradients are ``d_lm``/``d_copy``."""
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    batch = trace.batch
    hs = trace.hidden_pred
    d = hs.shape[-1]
    grads["tok_emb"] += d_lm.reshape(-1, d_lm.shape[-1]).T @ hs.reshape(-1, d)
    grads["copy_w"] += hs.reshape(-1, d).T @ d_copy.reshape(-1)
    grads["copy_b"] += d_copy.sum()
    dhs = d_lm @ params["tok_emb"] + d_copy[..., None] * params["copy_w"]

    xhat = trace.final_cache[0]
    dhf = np.zeros_like(xhat)
    rows = np.broadcast_to(np.arange(batch.size)[:, None], batch.pred_pos.shape)
    np.add.at(dhf, (rows, batch.pred_pos), dhs)
    dx, dg, db = layer_norm_backward(dhf, trace.final_cache)
    grads["lnf_g"] += dg
    grads["lnf_b"] += db

    d_enc: dict[int, np.ndarray] = {}
    for i in range(cfg.depth, 0, -1):
        p = f"layers.{i}."
        if i in trace.inject_caches:
            q = f"inject.{i}."
            dx, dk, dw, dg, db = inject_backward(dx, trace.inject_caches[i], params[q + "w"])
            grads[q + "w"] += dw
            grads[q + "ln_g"] += dg
            grads[q + "ln_b"] += db
            d_enc[i] = dk
        ln1, att_c, ln2, c, gelu_c, g = trace.layer_caches[i - 1]
        # ffn sublayer
        f_dim = g.shape[-1]
        grads[p + "ffn_w2"] += g.reshape(-1, f_dim).T @ dx.reshape(-1, d)
        grads[p + "ffn_b2"] += dx.reshape(-1, d).sum(axis=0)
        du = gelu_backward(dx @ params[p + "ffn_w2"].T, gelu_c)
        grads[p + "ffn_w1"] += c.reshape(-1, d).T @ du.reshape(-1, f_dim)
        grads[p + "ffn_b1"] += du.reshape(-1, f_dim).sum(axis=0)
        dc = du @ params[p + "ffn_w1"].T
        dln, dg, db = layer_norm_backward(dc, ln2)
        grads[p + "ln2_g"] += dg
        grads[p + "ln2_b"] += db
        dx = dx + dln
        # attention sublayer
        da, dwq, dwk, dwv, dwo = attention_backward(dx, att_c, params[p + "wq"], params[p + "wk"],
                                                    params[p + "wv"], params[p + "wo"])
        grads[p + "wq"] += dwq
        grads[p + "wk"] += dwk
        grads[p + "wv"] += dwv
        grads[p + "wo"] += dwo
        dln, dg, db = layer_norm_backward(da, ln1)
        grads[p + "ln1_g"] += dg
        grads[p + "ln1_b"] += db
        dx = dx + dln

    n = batch.ids.shape[1]
    np.add.at(grads["tok_emb"], batch.ids, dx)
    grads["pos_emb"][:n] += dx.sum(axis=0)
    np.add.at(grads["seg_emb"], batch.segments, dx)

    if trace.enc_cache is not None:
        full = {}
        for layer, enc in trace.encodings.items():
            full[layer] = d_enc.get(layer, np.zeros_like(enc.matrix))
        encode_knowledge_backward(params, full, trace.enc_cache, grads)
    return grads


def loss_and_gradients(params: Params, cfg: ModelConfig, batch: Batch,
                       copy_weight: float | None = None):
    cw = cfg.copy_loss_weight if copy_weight is None else copy_weight
    lm, cp, trace = forward(params, cfg, batch)
    value, d_lm, d_copy = loss_terms(lm, cp, batch.targets, batch.copy_labels, cw, batch.target_mask)
    return value, backward(params, cfg, trace, d_lm, d_copy), (lm, cp, trace)


def gradients(params: Params, cfg: ModelConfig, trace: ForwardTrace, lm_logits, copy_logits,
              copy_weight: float | None = None) -> Params:
    cw = cfg.copy_loss_weight if copy_weight is None else copy_weight
    b = trace.batch
    _, d_lm, d_copy = loss_terms(lm_logits, copy_logits, b.targets, b.copy_labels, cw, b.target_mask)
    return backward(params, cfg, trace, d_lm, d_copy)


def token_accuracy(lm_logits, targets, mask) -> tuple[int, int]:
    pred = lm_logits.argmax(axis=-1)
    mask = np.asarray(mask, dtype=bool)
    return int(((pred == targets) & mask).sum()), int(mask.sum())


def forward_pair(pair: EncodedPair, knowledge_ids: Mapping[int, Sequence[int]] | None,
                 params: Params, cfg: ModelConfig):
    """Single-example forward: (lm_logits [n_tgt, V], copy_logits [n_tgt], trace)."""
    batch = batch_from_pairs([pair], [dict(knowledge_ids or {})], cfg)
    lm, cp, trace = forward(params, cfg, batch)
    return lm[0], cp[0], trace
