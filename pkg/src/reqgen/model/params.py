"""Parameter layout, initialization and checkpoint serialization."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from reqgen.model.config import ModelConfig

Params = dict[str, np.ndarray]

CHECKPOINT_VERSION = 1


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape, in a fixed order. Injection and knowledge-encoder
    tensors exist only when the config injects into at least one layer."""
    d, f, kh = cfg.d_model, cfg.d_ffn, cfg.knowledge_hidden
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_len, d),
        "seg_emb": (2, d),
    }
    for i in range(1, cfg.depth + 1):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1_g": (d,), p + "ln1_b": (d,),
            p + "wq": (d, d), p + "wk": (d, d), p + "wv": (d, d), p + "wo": (d, d),
            p + "ln2_g": (d,), p + "ln2_b": (d,),
            p + "ffn_w1": (d, f), p + "ffn_b1": (f,),
            p + "ffn_w2": (f, d), p + "ffn_b2": (d,),
        })
    for layer in cfg.injection_layers:
        p = f"inject.{layer}."
        shapes.update({p + "w": (d, d), p + "ln_g": (d,), p + "ln_b": (d,)})
    if cfg.injection_layers:
        for direction in ("fwd", "bwd"):
            p = f"kenc.{direction}_"
            shapes.update({p + "w": (d, 3 * kh), p + "u": (kh, 3 * kh), p + "b": (3 * kh,)})
        shapes.update({"kenc.proj_w": (2 * kh, d), "kenc.proj_b": (d,)})
    shapes.update({"lnf_g": (d,), "lnf_b": (d,), "copy_w": (d,), "copy_b": ()})
    return shapes


def _is_gain(name: str) -> bool:
    return name.endswith("_g")


def _is_bias(name: str) -> bool:
    return name.endswith(("_b", "_b1", "_b2"))


def init_params(cfg: ModelConfig, rng: np.random.Generator | None = None) -> Params:
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if _is_gain(name):
            params[name] = np.ones(shape)
        elif _is_bias(name):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape)
    return params


def check_params(params: Params, cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"parameter set mismatch; missing={missing} extra={extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


def save_checkpoint(path: str | Path, cfg: ModelConfig, vocab_tokens: list[str],
                    params: Params, extra: dict | None = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "vocabulary": list(vocab_tokens),
        "parameters": {name: params[name].tolist() for name in param_shapes(cfg)},
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, list[str], Params, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg = ModelConfig.from_dict(doc["config"])
    params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["parameters"].items()}
    check_params(params, cfg)
    extra = {k: v for k, v in doc.items() if k not in ("version", "config", "vocabulary", "parameters")}
    return cfg, doc["vocabulary"], params, extra
