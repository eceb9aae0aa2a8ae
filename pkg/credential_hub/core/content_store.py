"""
Хранилище блобов с адресацией по содержимому (замена IPFS на одном узле)
и таблица изменяемых указателей для права на забвение.
"""

import os
import threading
from collections import defaultdict
from enum import Enum
from typing import Dict, Optional, Union

from ..infra.database import JsonLinesJournal, write_bytes_atomic
from ..logging_config import get_logger
from .credentials import generate_credential_id
from .exceptions import (
    IntegrityError,
    NotFoundError,
    StorageFullError,
    UnknownPointerError,
)
from .models import ContentAddress, StoredRef
from .utils import sha256

logger = get_logger(__name__)

POINTERS_FILE = "pointers.jsonl"
TOMBSTONES_FILE = "tombstones.jsonl"


class PointerState(str, Enum):
    INVALIDATED = "INVALIDATED"


INVALIDATED = PointerState.INVALIDATED
PointerTarget = Union[ContentAddress, PointerState]


class PointerTable:
    """Журнал pointerId -> адрес | INVALIDATED. Инвалидация необратима."""

    def __init__(self, path: str):
        self._journal = JsonLinesJournal(path)
        self._lock = threading.Lock()
        self._targets: Dict[str, PointerTarget] = {}
        for record in self._journal:
            self._replay(record)

    def _replay(self, record: dict) -> None:
        pointer_id, target = record["pointerId"], record["target"]
        if target == INVALIDATED.value:
            self._targets[pointer_id] = INVALIDATED
        elif self._targets.get(pointer_id) is not INVALIDATED:
            self._targets[pointer_id] = ContentAddress.from_hex(target)

    def create(
        self, address: ContentAddress, pointer_id: Optional[str] = None, rng=None
    ) -> str:
        pointer_id = pointer_id or generate_credential_id(rng)
        with self._lock:
            if pointer_id in self._targets:
                return pointer_id
            self._journal.append({"pointerId": pointer_id, "target": address.hex})
            self._targets[pointer_id] = address
        return pointer_id

    def resolve(self, pointer_id: str) -> PointerTarget:
        try:
            return self._targets[pointer_id]
        except KeyError:
            raise UnknownPointerError(pointer_id)

    def invalidate(self, pointer_id: str) -> None:
        with self._lock:
            if pointer_id not in self._targets:
                raise UnknownPointerError(pointer_id)
            if self._targets[pointer_id] is INVALIDATED:
                return
            self._journal.append(
                {"pointerId": pointer_id, "target": INVALIDATED.value}
            )
            self._targets[pointer_id] = INVALIDATED


class ContentStore:
    """
    Файлы блобов лежат в <root>/<2 hex>/<62 hex>. Чтение самопроверяемое:
    байты сверяются с адресом до возврата. Стёртые адреса помечаются
    надгробиями, так что стирание побеждает параллельную запись.
    """

    def __init__(self, root: str, max_bytes: Optional[int] = None):
        self.root = root
        self.max_bytes = max_bytes
        os.makedirs(root, exist_ok=True)
        self._locks = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        self._usage_lock = threading.Lock()
        self._tombstones_journal = JsonLinesJournal(os.path.join(root, TOMBSTONES_FILE))
        self._tombstones = {r["address"] for r in self._tombstones_journal}
        self.pointers = PointerTable(os.path.join(root, POINTERS_FILE))
        self._used = self._scan_usage()

    def _scan_usage(self) -> int:
        total = 0
        for name in os.listdir(self.root):
            fan = os.path.join(self.root, name)
            if len(name) == 2 and os.path.isdir(fan):
                for blob in os.listdir(fan):
                    if not blob.endswith(".tmp"):
                        total += os.path.getsize(os.path.join(fan, blob))
        return total

    def _path(self, address: ContentAddress) -> str:
        text = address.hex
        return os.path.join(self.root, text[:2], text[2:])

    def _lock_for(self, address: ContentAddress) -> threading.Lock:
        with self._locks_guard:
            return self._locks[address.hex]

    @property
    def used_bytes(self) -> int:
        return self._used

    # ---------- блобы ----------
    def put(self, content: bytes, sealed: bool = False) -> StoredRef:
        """Идемпотентная запись: повтор тех же байтов даёт тот же адрес."""
        address = ContentAddress.of(content)
        ref = StoredRef(address=address, sealed=sealed)
        with self._lock_for(address):
            if address.hex in self._tombstones:
                logger.warning(f"Запись стёртого адреса {address.hex} отклонена")
                return ref
            path = self._path(address)
            if os.path.exists(path):
                return ref
            with self._usage_lock:
                limit = self.max_bytes
                if limit is not None and self._used + len(content) > limit:
                    raise StorageFullError(self._used, self.max_bytes, len(content))
                self._used += len(content)
            write_bytes_atomic(path, content)
        logger.debug(f"Сохранён блоб {address.hex} ({len(content)} байт)")
        return ref

    def get(self, address: ContentAddress) -> bytes:
        path = self._path(address)
        try:
            with open(path, "rb") as f:
                content = f.read()
        except FileNotFoundError:
            raise NotFoundError(address.hex)
        actual = sha256(content)
        if actual != address.digest:
            raise IntegrityError(address.hex, actual.hex())
        return content

    def exists(self, address: ContentAddress) -> bool:
        return os.path.isfile(self._path(address))

    def erase(self, address: ContentAddress) -> None:
        """Затирает и удаляет файл блоба. Отсутствующий блоб -> NotFoundError."""
        with self._lock_for(address):
            path = self._path(address)
            if not os.path.exists(path):
                raise NotFoundError(address.hex)
            size = os.path.getsize(path)
            with open(path, "r+b") as f:
                f.write(b"\x00" * size)
                f.flush()
                os.fsync(f.fileno())
            os.remove(path)
            if address.hex not in self._tombstones:
                self._tombstones_journal.append({"address": address.hex})
                self._tombstones.add(address.hex)
            with self._usage_lock:
                self._used -= size
        logger.info(f"Блоб {address.hex} стёрт")

    def is_erased(self, address: ContentAddress) -> bool:
        return address.hex in self._tombstones

    # ---------- указатели ----------
    def create_pointer(
        self, address: ContentAddress, pointer_id: Optional[str] = None, rng=None
    ) -> str:
        return self.pointers.create(address, pointer_id, rng)

    def resolve_pointer(self, pointer_id: str) -> PointerTarget:
        return self.pointers.resolve(pointer_id)

    def invalidate_pointer(self, pointer_id: str) -> None:
        self.pointers.invalidate(pointer_id)
        logger.info(f"Указатель {pointer_id} инвалидирован")
