import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..core.exceptions import ConfigError
from ..core.utils import b64decode, b64encode
from ..infra.database import load_json, save_json
from ..infra.settings import SettingsLoader


def fault_tolerance(n: int) -> int:
    return (n - 1) // 3


def quorum_size(n: int) -> int:
    """2*floor((n-1)/3) + 1."""
    if n < 1:
        raise ConfigError(f"число валидаторов должно быть >= 1, получено {n}")
    return 2 * fault_tolerance(n) + 1


@dataclass(frozen=True)
class ValidatorInfo:
    validator_id: str
    public_key: bytes

    def to_dict(self) -> dict:
        return {"id": self.validator_id, "publicKey": b64encode(self.public_key)}


@dataclass
class ConsensusConfig:
    """Набор валидаторов (упорядочен) и параметры раундов в логических тиках."""

    validators: Tuple[ValidatorInfo, ...]
    round_timeout: int = 10
    max_rounds: int = 8
    _index: Dict[str, int] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        self.validators = tuple(self.validators)
        if not self.validators:
            raise ConfigError("список валидаторов пуст")
        self._index = {v.validator_id: i for i, v in enumerate(self.validators)}
        if len(self._index) != len(self.validators):
            raise ConfigError("идентификаторы валидаторов повторяются")
        if self.round_timeout < 1:
            raise ConfigError("roundTimeout должен быть >= 1")
        if self.n < 3 * self.f + 1:
            raise ConfigError(f"n={self.n} меньше 3f+1 при f={self.f}")

    @property
    def n(self) -> int:
        return len(self.validators)

    @property
    def f(self) -> int:
        return fault_tolerance(self.n)

    @property
    def quorum(self) -> int:
        return quorum_size(self.n)

    @property
    def ids(self) -> List[str]:
        return [v.validator_id for v in self.validators]

    def leader(self, height: int, round_: int) -> str:
        return self.validators[(height + round_) % self.n].validator_id

    def public_key(self, validator_id: str) -> Optional[bytes]:
        index = self._index.get(validator_id)
        return None if index is None else self.validators[index].public_key

    def is_validator(self, validator_id: str) -> bool:
        return validator_id in self._index

    def round_deadline(self, round_: int) -> int:
        """Линейное увеличение таймаута с номером раунда."""
        return self.round_timeout * (round_ + 1)

    def to_dict(self) -> dict:
        return {
            "validators": [v.to_dict() for v in self.validators],
            "roundTimeout": self.round_timeout,
            "maxRounds": self.max_rounds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConsensusConfig":
        try:
            validators = tuple(
                ValidatorInfo(v["id"], b64decode(v["publicKey"]))
                for v in data["validators"]
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"некорректный список валидаторов: {e}")
        settings = SettingsLoader()
        return cls(
            validators=validators,
            round_timeout=int(
                data.get("roundTimeout", settings.get("consensus_round_timeout", 10))
            ),
            max_rounds=int(
                data.get("maxRounds", settings.get("consensus_max_rounds", 8))
            ),
        )

    @classmethod
    def load(cls, path: str) -> "ConsensusConfig":
        data = load_json(path)
        if data is None:
            raise ConfigError(f"файл конфигурации валидаторов не найден: {path}")
        return cls.from_dict(data)

    def save(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        save_json(path, self.to_dict())
