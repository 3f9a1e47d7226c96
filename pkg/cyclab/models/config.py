from dataclasses import dataclass, asdict, fields
from typing import Any, Dict, Optional
from ..utils import ConfigError
from ..tasks import default_vocabulary


__all__ = ['ModelConfig', 'TrainSchedule']


def _from_dict(cls, d: Dict[str, Any]):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(cls.__name__ + " has no fields " + str(sorted(unknown)))
    config = cls(**d)
    config.validate()
    return config


@dataclass
class ModelConfig:
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_mlp: int = 512
    vocab_size: Optional[int] = None
    max_seq_len: int = 32
    rms_norm_epsilon: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size is None:
            self.vocab_size = len(default_vocabulary())

    def validate(self):
        for name in ('n_layers', 'd_model', 'n_heads', 'd_mlp', 'vocab_size', 'max_seq_len'):
            if getattr(self, name) < 1:
                raise ConfigError(name + " must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ConfigError("head dimension must be even for rotary positions")
        if self.rms_norm_epsilon <= 0:
            raise ConfigError("rms_norm_epsilon must be positive")

    def to_dict(self) -> Dict[str, Any]: return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'ModelConfig': return _from_dict(cls, d)


@dataclass
class TrainSchedule:
    """
    Multi-task training schedule. One step draws one batch from every task; an epoch covers the largest task.

    :param in_cycle_only: train only on in-cycle prompts (offset <= p, addition sums <= 100)
    """
    n_epoch: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.0
    eval_every: int = 1
    print_every: int = 100
    patience: Optional[int] = None
    in_cycle_only: bool = False
    seed: int = 0

    def validate(self):
        if self.n_epoch < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("n_epoch, batch_size and eval_every must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def to_dict(self) -> Dict[str, Any]: return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'TrainSchedule': return _from_dict(cls, d)
