"""Flat run configuration shared by every command."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import SyntheticSpec
from .document import ModelConfig
from .errors import ContractError, ParseError
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = ""

    # synthetic data
    n_docs: int = 2000
    vocab_size: int = 1024
    n_patches: int = 4
    patch_dim: int = 16
    complementary_fraction: float = 0.6
    n_queries: int | None = None
    group_size: int = 8
    n_concepts: int = 24
    n_attributes: int = 48
    redundant_patches: int = 1
    patch_noise: float = 0.3
    shared_concepts: bool = False
    text_only_fraction: float = 0.0
    dev_fraction: float = 0.1
    test_fraction: float = 0.2

    # model
    dim: int = 32
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 64
    max_len: int = 128
    emb_scale: float = 0.1
    proj_scale: float = 0.15
    clip_dim: int = 48
    frozen_seed: int = 0
    weights_mode: str = "dissimilar"
    reweight: bool = True

    # losses and training (desk scale)
    temperature: float = 0.05
    lam: float = 0.2
    min_len: int = 2
    epochs: int = 1
    batch_size: int = 16
    learning_rate: float = 3e-3
    weight_decay: float = 0.01
    eval_every_steps: int = 100
    early_stop_patience: int = 5
    negative_mode: str = "hard"
    hard_neg_pool: int = 20
    hard_negatives_per_query: int = 2
    hard_epochs: int | None = 12
    max_steps: int | None = None

    # retrieval and ablation
    top_k: int = 100
    ablation_seeds: int = 5

    def __post_init__(self):
        self.train_config()
        self.synthetic_spec().validate()
        if self.top_k < 1:
            raise ContractError("top_k must be at least 1")
        if self.ablation_seeds < 1:
            raise ContractError("ablation_seeds must be at least 1")

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, d):
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise ContractError(f"unknown configuration keys: {', '.join(unknown)}")
        types = {f.name: f.type for f in fields(cls)}
        clean = {}
        for k, v in d.items():
            clean[k] = _coerce(k, v, types[k])
        return cls(**clean)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        return RunConfig.from_dict({**self.to_dict(), **changes})

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, exc.msg) from None
        if not isinstance(raw, dict):
            raise ParseError(path, 1, "configuration must be a JSON object")
        return cls.from_dict(raw)

    # --- views for the individual modules ---

    def synthetic_spec(self):
        names = {f.name for f in fields(SyntheticSpec)}
        return SyntheticSpec(**{k: v for k, v in self.to_dict().items() if k in names})

    def model_config(self, vocab_size, init_seed=None):
        names = {f.name for f in fields(ModelConfig)} - {"vocab_size", "init_seed"}
        kw = {k: v for k, v in self.to_dict().items() if k in names}
        return ModelConfig(vocab_size=vocab_size, init_seed=self.seed if init_seed is None else init_seed, **kw)

    def train_config(self, seed=None):
        names = {f.name for f in fields(TrainConfig)} - {"seed"}
        kw = {k: v for k, v in self.to_dict().items() if k in names}
        return TrainConfig(seed=self.seed if seed is None else seed, **kw)


def _coerce(key, value, type_name):
    optional = "None" in type_name
    if value is None:
        if optional:
            return None
        raise ContractError(f"{key} may not be null")
    base = type_name.split("|")[0].strip()
    try:
        if base == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
                return value.lower() in ("true", "1", "yes")
            raise ValueError
        if base == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            if isinstance(value, str) and value.lower() == "none" and optional:
                return None
            return int(value)
        if base == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ContractError(f"{key}: cannot interpret {value!r} as {base}") from None
