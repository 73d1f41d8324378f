from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields


@dataclass
class ModelConfig:
    vocab_size: int
    depth: int = 4
    d_model: int = 128
    heads: int = 4
    d_ffn: int = 256
    max_len: int = 128
    injection_layers: list[int] = field(default_factory=lambda: [1, 2, 4])
    knowledge_hidden: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 200
    rng_seed: int = 0
    copy_loss_weight: float = 1.0
    init_scale: float = 0.05

    def __post_init__(self):
        self.injection_layers = sorted(int(x) for x in self.injection_layers)
        dims = (self.vocab_size, self.depth, self.d_model, self.heads, self.d_ffn,
                self.max_len, self.knowledge_hidden, self.batch_size)
        if min(dims) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        bad = [x for x in self.injection_layers if not 1 <= x <= self.depth]
        if bad or len(set(self.injection_layers)) != len(self.injection_layers):
            raise ValueError(f"injection layers {self.injection_layers} invalid for depth {self.depth}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})
