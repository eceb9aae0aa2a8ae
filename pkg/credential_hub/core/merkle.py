"""
Бинарное дерево Меркла над упорядоченными листьями. Непарный узел уровня
поднимается без изменений (не дублируется). Пустое дерево = SHA-256(b"").
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence

from .utils import sha256

EMPTY_ROOT = sha256(b"")


class Side(str, Enum):
    """Положение соседнего узла относительно текущего."""

    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class PathStep:
    sibling: bytes
    side: Side

    def to_dict(self) -> dict:
        return {"hash": self.sibling.hex(), "side": self.side.value}

    @classmethod
    def from_dict(cls, data: dict) -> "PathStep":
        return cls(sibling=bytes.fromhex(data["hash"]), side=Side(data["side"]))


def hash_pair(left: bytes, right: bytes) -> bytes:
    return sha256(left + right)


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    if not leaves:
        return EMPTY_ROOT
    level = list(leaves)
    while len(level) > 1:
        level = _next_level(level)
    return level[0]


def _next_level(level: List[bytes]) -> List[bytes]:
    upper = [hash_pair(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
    if len(level) % 2 == 1:
        upper.append(level[-1])
    return upper


def merkle_path(leaves: Sequence[bytes], index: int) -> List[PathStep]:
    """Путь от листа index до корня; для поднятого узла шаг пропускается."""
    if not 0 <= index < len(leaves):
        raise IndexError(f"Лист {index} вне дерева из {len(leaves)} листьев")
    path: List[PathStep] = []
    level = list(leaves)
    while len(level) > 1:
        if index % 2 == 1:
            path.append(PathStep(level[index - 1], Side.LEFT))
        elif index + 1 < len(level):
            path.append(PathStep(level[index + 1], Side.RIGHT))
        level = _next_level(level)
        index //= 2
    return path


def fold_path(leaf: bytes, path: Sequence[PathStep]) -> bytes:
    current = leaf
    for step in path:
        if step.side is Side.LEFT:
            current = hash_pair(step.sibling, current)
        else:
            current = hash_pair(current, step.sibling)
    return current
