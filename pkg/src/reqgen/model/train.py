"""Mini-batch Adam training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from reqgen.corpus import EncodedPair
from reqgen.model.config import ModelConfig
from reqgen.model.network import batch_from_pairs, forward, loss_and_gradients, token_accuracy
from reqgen.model.params import Params, init_params

log = logging.getLogger(__name__)

KnowledgeIds = Mapping[int, Sequence[int]]


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, params: Params, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: Params
    loss_log: list[float] = field(default_factory=list)


def train(
    pairs: Sequence[EncodedPair],
    knowledge: Sequence[KnowledgeIds] | None,
    cfg: ModelConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train from a seeded initialization; identical inputs give identical logs."""
    if not pairs:
        raise ValueError("empty training set")
    knowledge = list(knowledge) if knowledge is not None else [{} for _ in pairs]
    rng = np.random.default_rng(cfg.rng_seed)
    params = init_params(cfg, rng)
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    result = TrainResult(params)
    n = len(pairs)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = batch_from_pairs([pairs[i] for i in idx], [knowledge[i] for i in idx], cfg)
            value, grads, _ = loss_and_gradients(params, cfg, batch)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, step {opt.t + 1}")
            opt.step(params, grads)
            total += value * len(idx)
            count += len(idx)
        epoch_loss = total / count
        result.loss_log.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    result.params = params
    return result


def teacher_forced_accuracy(params: Params, cfg: ModelConfig, pairs: Sequence[EncodedPair],
                            knowledge: Sequence[KnowledgeIds] | None = None) -> float:
    knowledge = list(knowledge) if knowledge is not None else [{} for _ in pairs]
    hit = tot = 0
    for start in range(0, len(pairs), cfg.batch_size):
        sl = slice(start, start + cfg.batch_size)
        batch = batch_from_pairs(pairs[sl], knowledge[sl], cfg)
        lm, _, _ = forward(params, cfg, batch)
        h, t = token_accuracy(lm, batch.targets, batch.target_mask)
        hit += h
        tot += t
    return hit / max(tot, 1)
