from dataclasses import asdict, dataclass, fields
from typing import Tuple

from tbn.tbn_error import ConfigKeyError

# minibatch size of the desk-scale demo; the full-scale default stays 256
DESK_BATCH_SIZE = 32


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyper-parameters. Defaults follow the ImageNet schedule: momentum 0.9,
    weight decay 1e-4, learning rate 0.1 divided by 10 at epochs 30, 40 and 50, 58 epochs."""

    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 256
    lr_drop_epochs: Tuple[int, ...] = (30, 40, 50)
    lr_divisor: float = 10.0
    epochs: int = 58
    seed: int = 0
    # shadow weights are clipped to [-(2 + clip_margin), 2 + clip_margin]
    clip: bool = True
    clip_margin: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "lr_drop_epochs", tuple(int(e) for e in self.lr_drop_epochs))

        if not self.learning_rate >= 0:
            raise ConfigKeyError("learning_rate must be >= 0, got {}".format(self.learning_rate))
        if not 0 <= self.momentum < 1:
            raise ConfigKeyError("momentum must be in [0, 1), got {}".format(self.momentum))
        if not self.weight_decay >= 0:
            raise ConfigKeyError("weight_decay must be >= 0, got {}".format(self.weight_decay))
        if int(self.batch_size) < 1:
            raise ConfigKeyError("batch_size must be >= 1, got {}".format(self.batch_size))
        if int(self.epochs) < 0:
            raise ConfigKeyError("epochs must be >= 0, got {}".format(self.epochs))
        if not self.lr_divisor > 0:
            raise ConfigKeyError("lr_divisor must be > 0, got {}".format(self.lr_divisor))
        if not self.clip_margin >= 0:
            raise ConfigKeyError("clip_margin must be >= 0, got {}".format(self.clip_margin))
        drops = self.lr_drop_epochs
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ConfigKeyError("lr_drop_epochs must be strictly increasing, got {}".format(drops))

    @property
    def clip_bound(self) -> float:
        return 2.0 + self.clip_margin

    @classmethod
    def field_names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_params(cls, params: dict) -> "TrainConfig":
        """builds a config from the matching keys of an experiment's params dict."""
        known = {k: params[k] for k in cls.field_names() if k in params}
        try:
            return cls(**known)
        except (TypeError, ValueError) as e:
            raise ConfigKeyError("invalid training parameters: {}".format(e)) from e

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_drop_epochs"] = list(self.lr_drop_epochs)
        return d


def schedule_lr(epoch: int, config: TrainConfig) -> float:
    """base learning rate divided by lr_divisor once for every drop epoch <= epoch"""
    if epoch < 0:
        raise ValueError("epoch must be >= 0, got {}".format(epoch))
    drops = sum(1 for e in config.lr_drop_epochs if e <= epoch)
    return config.learning_rate / (config.lr_divisor**drops)
