"""
Двухцепочечная схема: приватный реестр хранит транзакции целиком,
публичный журнал якорей хранит только хеши (корни состояния и блоков).
"""

import threading
from dataclasses import dataclass
from typing import List, Optional

from ..infra.database import JsonLinesJournal
from ..logging_config import get_logger
from .exceptions import (
    AnchorLogCorruptedError,
    LedgerContractError,
    OutOfOrderError,
    UnknownCredentialError,
)
from .ledger import Block, LedgerState, credential_leaf, sorted_leaves, state_commitment
from .merkle import PathStep, fold_path, merkle_path
from .utils import canonical_json, sha256

ZERO_HASH = bytes(32)

logger = get_logger(__name__)


@dataclass(frozen=True)
class PublicAnchor:
    anchor_index: int
    private_height: int
    private_block_hash: bytes
    state_root: bytes
    prev_anchor_hash: bytes

    def to_dict(self) -> dict:
        return {
            "anchorIndex": self.anchor_index,
            "privateHeight": self.private_height,
            "privateBlockHash": self.private_block_hash.hex(),
            "stateRoot": self.state_root.hex(),
            "prevAnchorHash": self.prev_anchor_hash.hex(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PublicAnchor":
        return cls(
            anchor_index=int(data["anchorIndex"]),
            private_height=int(data["privateHeight"]),
            private_block_hash=bytes.fromhex(data["privateBlockHash"]),
            state_root=bytes.fromhex(data["stateRoot"]),
            prev_anchor_hash=bytes.fromhex(data["prevAnchorHash"]),
        )

    @property
    def hash(self) -> bytes:
        return sha256(canonical_json(self.to_dict()))


@dataclass(frozen=True)
class ClaimedStatus:
    doc_hash: bytes
    revoked: bool


@dataclass(frozen=True)
class InclusionProof:
    credential_id: str
    leaf_hash: bytes
    path: tuple
    anchor_index: Optional[int]

    def to_dict(self) -> dict:
        return {
            "credentialId": self.credential_id,
            "leafHash": self.leaf_hash.hex(),
            "path": [step.to_dict() for step in self.path],
            "anchorIndex": self.anchor_index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InclusionProof":
        return cls(
            credential_id=data["credentialId"],
            leaf_hash=bytes.fromhex(data["leafHash"]),
            path=tuple(PathStep.from_dict(step) for step in data["path"]),
            anchor_index=data.get("anchorIndex"),
        )


class AnchorLog:
    """
    Публичный журнал якорей: только дописывание, записи сцеплены хешами.
    При path=None журнал живёт только в памяти (симуляция, тесты).
    """

    def __init__(self, path: Optional[str] = None):
        self._journal = JsonLinesJournal(path) if path else None
        self._lock = threading.Lock()
        self._anchors: List[PublicAnchor] = []
        if self._journal is not None:
            for index, record in enumerate(self._read_records()):
                try:
                    self._anchors.append(PublicAnchor.from_dict(record))
                except (KeyError, TypeError, ValueError) as e:
                    raise AnchorLogCorruptedError(index, str(e))
            self.verify_chain()

    def _read_records(self):
        try:
            return self._journal.read_all()
        except ValueError as e:
            raise AnchorLogCorruptedError(len(self._anchors), str(e))

    def __len__(self) -> int:
        return len(self._anchors)

    @property
    def last_height(self) -> int:
        return self._anchors[-1].private_height if self._anchors else 0

    def latest(self) -> Optional[PublicAnchor]:
        return self._anchors[-1] if self._anchors else None

    def get(self, index: int) -> Optional[PublicAnchor]:
        if 0 <= index < len(self._anchors):
            return self._anchors[index]
        return None

    def anchors(self) -> List[PublicAnchor]:
        return list(self._anchors)

    def anchor_block(self, block: Block, state: LedgerState) -> PublicAnchor:
        """Якорит финализированный блок; state берётся после блока."""
        root = state_commitment(state)
        if state.height != block.height or root.hex() != block.state_root:
            raise LedgerContractError(
                f"состояние не соответствует блоку {block.height}"
            )
        with self._lock:
            if block.height <= self.last_height:
                raise OutOfOrderError(block.height, self.last_height)
            previous = self.latest()
            anchor = PublicAnchor(
                anchor_index=len(self._anchors),
                private_height=block.height,
                private_block_hash=bytes.fromhex(block.hash),
                state_root=root,
                prev_anchor_hash=previous.hash if previous else ZERO_HASH,
            )
            if self._journal is not None:
                self._journal.append(anchor.to_dict())
            self._anchors.append(anchor)
        logger.debug(f"Якорь {anchor.anchor_index} для блока {block.height}")
        return anchor

    def verify_chain(self) -> bool:
        """Проверяет сцепление и монотонность высот; первый разрыв -> исключение."""
        previous = None
        for index, anchor in enumerate(self._anchors):
            if anchor.anchor_index != index:
                raise AnchorLogCorruptedError(index, "нарушена нумерация")
            expected = previous.hash if previous else ZERO_HASH
            if anchor.prev_anchor_hash != expected:
                raise AnchorLogCorruptedError(index, "разорвана хеш-цепочка")
            if previous and anchor.private_height <= previous.private_height:
                raise AnchorLogCorruptedError(index, "высоты не возрастают")
            previous = anchor
        return True


def build_inclusion_proof(
    state: LedgerState, credential_id: str, anchor_index: Optional[int] = None
) -> InclusionProof:
    leaves = sorted_leaves(state)
    for position, (leaf_id, leaf) in enumerate(leaves):
        if leaf_id == credential_id:
            path = merkle_path([item for _, item in leaves], position)
            return InclusionProof(credential_id, leaf, tuple(path), anchor_index)
    raise UnknownCredentialError(credential_id)


def verify_with_anchor(
    proof: InclusionProof, claimed: ClaimedStatus, anchor: PublicAnchor
) -> bool:
    """Чистая проверка третьей стороной: доступ к реестру не нужен."""
    try:
        leaf = credential_leaf(proof.credential_id, claimed.doc_hash, claimed.revoked)
        if leaf != proof.leaf_hash:
            return False
        return fold_path(proof.leaf_hash, proof.path) == anchor.state_root
    except (AttributeError, TypeError, ValueError):
        return False
