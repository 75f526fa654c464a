"""Configuration objects shared across the library."""

from __future__ import annotations

import enum
from dataclasses import dataclass, asdict


class ConfigError(ValueError):
    """Raised when a configuration violates its invariants."""


class Activation(str, enum.Enum):
    GELU = "gelu"
    RELU = "relu"


class Granularity(str, enum.Enum):
    SENTENCE = "sentence"
    TOKEN = "token"


class RoutingStrategy(str, enum.Enum):
    ENFORCED = "enforced"
    ROUTER_CE = "router_ce"
    MUTUAL_INFO = "mutual_info"


class Scheduler(str, enum.Enum):
    ONE_CYCLE = "one_cycle"
    COSINE = "cosine"


@dataclass(frozen=True)
class ModelConfig:
    """Shape of a bidirectional encoder.

    ``hidden_dim`` must be divisible by ``num_heads`` and strictly smaller
    than ``intermediate_dim``.
    """

    vocab_size: int
    hidden_dim: int
    intermediate_dim: int
    num_blocks: int
    num_heads: int
    max_seq_len: int
    activation: Activation = Activation.GELU

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.intermediate_dim <= self.hidden_dim:
            raise ConfigError(
                "intermediate_dim must exceed hidden_dim, got "
                f"{self.intermediate_dim} <= {self.hidden_dim}"
            )
        if self.num_blocks < 0:
            raise ConfigError(f"num_blocks must be >= 0, got {self.num_blocks}")
        if self.num_heads < 1:
            raise ConfigError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.max_seq_len < 1:
            raise ConfigError(f"max_seq_len must be >= 1, got {self.max_seq_len}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation"] = self.activation.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["activation"] = Activation(d["activation"])
        return cls(**d)


def middle_block(num_blocks: int) -> int:
    """Block index used by the single-layer extension variant."""
    if num_blocks < 1:
        raise ConfigError("cannot pick a middle block of an empty stack")
    return num_blocks // 2


@dataclass(frozen=True)
class MoEConfig:
    """How an encoder is extended into a mixture-of-experts model.

    ``extended_layers`` lists the block indices whose MLP is replaced by
    experts; the enforced strategy additionally needs a total
    ``domain_to_expert`` map.
    """

    num_experts: int
    granularity: Granularity = Granularity.SENTENCE
    top_k: int = 1
    strategy: RoutingStrategy = RoutingStrategy.ENFORCED
    extended_layers: tuple[int, ...] = ()
    mi_loss_weight: float = 1.0
    domain_to_expert: dict[str, int] | None = None

    def __post_init__(self) -> None:
        if self.num_experts < 1:
            raise ConfigError(f"num_experts must be >= 1, got {self.num_experts}")
        if not 1 <= self.top_k <= self.num_experts:
            raise ConfigError(
                f"top_k must be in [1, {self.num_experts}], got {self.top_k}"
            )
        if not self.extended_layers:
            raise ConfigError("extended_layers must be non-empty")
        if len(set(self.extended_layers)) != len(self.extended_layers):
            raise ConfigError("extended_layers contains duplicates")
        object.__setattr__(self, "extended_layers", tuple(sorted(self.extended_layers)))
        if self.mi_loss_weight < 0:
            raise ConfigError("mi_loss_weight must be non-negative")
        if self.domain_to_expert is not None:
            for domain, expert in self.domain_to_expert.items():
                if not 0 <= expert < self.num_experts:
                    raise ConfigError(
                        f"domain {domain!r} mapped to expert {expert}, "
                        f"outside [0, {self.num_experts})"
                    )

    def validate_for(self, model_cfg: ModelConfig, domains: tuple[str, ...] = ()) -> None:
        """Cross-check against a concrete encoder and its dataset domains."""
        for i in self.extended_layers:
            if not 0 <= i < model_cfg.num_blocks:
                raise ConfigError(
                    f"extended layer {i} outside [0, {model_cfg.num_blocks})"
                )
        if self.strategy is RoutingStrategy.ENFORCED:
            if self.domain_to_expert is None:
                raise ConfigError("enforced routing requires a domain_to_expert map")
            missing = [d for d in domains if d not in self.domain_to_expert]
            if missing:
                raise ConfigError(f"domains without an expert mapping: {missing}")

    def expert_for(self, domain: str) -> int:
        if self.domain_to_expert is None or domain not in self.domain_to_expert:
            raise ConfigError(f"no expert mapped for domain {domain!r}")
        return self.domain_to_expert[domain]

    def to_dict(self) -> dict:
        return {
            "num_experts": self.num_experts,
            "granularity": self.granularity.value,
            "top_k": self.top_k,
            "strategy": self.strategy.value,
            "extended_layers": list(self.extended_layers),
            "mi_loss_weight": self.mi_loss_weight,
            "domain_to_expert": self.domain_to_expert,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MoEConfig":
        return cls(
            num_experts=d["num_experts"],
            granularity=Granularity(d["granularity"]),
            top_k=d["top_k"],
            strategy=RoutingStrategy(d["strategy"]),
            extended_layers=tuple(d["extended_layers"]),
            mi_loss_weight=d["mi_loss_weight"],
            domain_to_expert=dict(d["domain_to_expert"]) if d.get("domain_to_expert") else None,
        )


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the contrastive training run.

    In-batch negatives need at least two pairs, hence ``batch_size >= 2``.
    Optimizer details (decoupled weight decay, betas, clipping) are pinned
    here so every run records them.
    """

    batch_size: int = 20
    learning_rate: float = 1e-5
    scheduler: Scheduler = Scheduler.ONE_CYCLE
    warmup_steps: int = 500
    max_epochs: int = 10
    validate_every: int = 5000
    patience: int = 3
    router_ce_weight: float = 1.0
    seed: int = 0
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    init_temperature: float = 1.0 / 0.07

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.validate_every < 1:
            raise ConfigError("validate_every must be >= 1")
        if self.init_temperature <= 0:
            raise ConfigError("init_temperature must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheduler"] = self.scheduler.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["scheduler"] = Scheduler(d["scheduler"])
        return cls(**d)
