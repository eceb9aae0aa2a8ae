import os
import threading
from typing import List, Optional

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.pbkdf2 import PBKDF2HMAC

from ..infra.database import load_json, save_json
from .crypto import (
    AES_KEY_LENGTH,
    decrypt_payload,
    encrypt_payload,
    generate_keypair,
    generate_symmetric_key,
    load_keypair,
)
from .exceptions import (
    AuthFailureError,
    DuplicateKeyError,
    KeystoreError,
    UnknownKeyError,
)
from .models import KeyPair, ProofType, PublicKeyRecord, SealedPayload
from .utils import b64decode, b64encode

BLOB_KEY_ALGORITHM = "AES-256-GCM"
SALT_LENGTH = 16
DEFAULT_KDF_ITERATIONS = 200_000


def blob_key_id(address) -> str:
    """Идентификатор ключа запечатывания блоба в хранилище ключей."""
    return f"blob:{address}"


class Keystore:
    """
    Файловое хранилище ключей: keyId -> {algorithm, publicKey, owner,
    sealedPrivateKey, kdfSalt}. Закрытые ключи запечатаны AES-GCM ключом,
    выведенным из парольной фразы через PBKDF2-HMAC-SHA256.
    """

    def __init__(
        self,
        path: str,
        passphrase: str,
        iterations: int = DEFAULT_KDF_ITERATIONS,
        rng=None,
    ):
        if not passphrase:
            raise KeystoreError("не задана парольная фраза (BACIP_KEYSTORE_PASSPHRASE)")
        self.path = path
        self._passphrase = passphrase.encode("utf-8")
        self._iterations = iterations
        self._rng = rng
        self._lock = threading.RLock()

    # ---------- низкоуровневые операции ----------
    def _load(self) -> dict:
        data = load_json(self.path, default={})
        if not isinstance(data, dict):
            raise KeystoreError(f"повреждён файл {self.path}")
        return data

    def _derive(self, salt: bytes) -> bytes:
        kdf = PBKDF2HMAC(
            algorithm=hashes.SHA256(),
            length=AES_KEY_LENGTH,
            salt=salt,
            iterations=self._iterations,
        )
        return kdf.derive(self._passphrase)

    def _seal(self, key_id: str, secret: bytes) -> dict:
        if self._rng is not None:
            salt = self._rng.randbytes(SALT_LENGTH)
        else:
            salt = os.urandom(SALT_LENGTH)
        sealed = encrypt_payload(
            secret,
            self._derive(salt),
            rng=self._rng,
            associated_data=key_id.encode("utf-8"),
        )
        return {"sealedPrivateKey": sealed.to_dict(), "kdfSalt": b64encode(salt)}

    def _unseal(self, key_id: str, entry: dict) -> bytes:
        try:
            sealed = SealedPayload.from_dict(entry["sealedPrivateKey"])
            wrapping = self._derive(b64decode(entry["kdfSalt"]))
        except (KeyError, ValueError) as e:
            raise KeystoreError(f"повреждена запись '{key_id}': {e}")
        try:
            return decrypt_payload(
                sealed, wrapping, associated_data=key_id.encode("utf-8")
            )
        except AuthFailureError:
            raise KeystoreError(f"неверная парольная фраза для ключа '{key_id}'")

    def _store(self, key_id: str, entry: dict) -> None:
        with self._lock:
            data = self._load()
            if key_id in data:
                raise DuplicateKeyError(key_id)
            data[key_id] = entry
            save_json(self.path, data)

    # ---------- ключи подписи ----------
    def add(self, key: KeyPair, owner: Optional[str] = None) -> PublicKeyRecord:
        entry = {
            "algorithm": key.algorithm.value,
            "publicKey": b64encode(key.public_key),
            "owner": owner,
        }
        entry.update(self._seal(key.key_id, key.private_key))
        self._store(key.key_id, entry)
        return key.public_only()

    def generate(
        self,
        algorithm,
        key_id: Optional[str] = None,
        owner: Optional[str] = None,
        rng=None,
    ) -> KeyPair:
        key = generate_keypair(algorithm, rng=rng or self._rng, key_id=key_id)
        self.add(key, owner=owner)
        return key

    def get(self, key_id: str) -> KeyPair:
        entry = self._entry(key_id)
        if entry["algorithm"] == BLOB_KEY_ALGORITHM:
            raise KeystoreError(f"'{key_id}' не является ключом подписи")
        private = self._unseal(key_id, entry)
        return load_keypair(ProofType.parse(entry["algorithm"]), private, key_id)

    def owner_of(self, key_id: str) -> Optional[str]:
        return self._entry(key_id).get("owner")

    def find_by_owner(self, owner: str) -> Optional[KeyPair]:
        """Первый (по keyId) ключ подписи, принадлежащий DID."""
        for key_id, entry in sorted(self._load().items()):
            if entry.get("owner") == owner and entry["algorithm"] != BLOB_KEY_ALGORITHM:
                return self.get(key_id)
        return None

    def list_keys(self) -> List[dict]:
        return [
            {
                "keyId": key_id,
                "algorithm": entry["algorithm"],
                "owner": entry.get("owner"),
            }
            for key_id, entry in sorted(self._load().items())
        ]

    def __contains__(self, key_id: str) -> bool:
        return key_id in self._load()

    def _entry(self, key_id: str) -> dict:
        entry = self._load().get(key_id)
        if entry is None:
            raise UnknownKeyError(key_id)
        return entry

    # ---------- ключи блобов ----------
    def new_symmetric_key(self) -> bytes:
        return generate_symmetric_key(self._rng)

    def put_blob_key(self, address, key: bytes) -> None:
        """Сохраняет ключ запечатывания блоба под адресом шифртекста."""
        key_id = blob_key_id(address)
        entry = {"algorithm": BLOB_KEY_ALGORITHM, "owner": None}
        entry.update(self._seal(key_id, key))
        self._store(key_id, entry)

    def blob_key(self, address) -> bytes:
        key_id = blob_key_id(address)
        return self._unseal(key_id, self._entry(key_id))

    def destroy(self, key_id: str) -> None:
        """Безвозвратно удаляет запись (крипто-уничтожение для ключей блобов)."""
        with self._lock:
            data = self._load()
            if key_id not in data:
                raise UnknownKeyError(key_id)
            del data[key_id]
            save_json(self.path, data)
