from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .utils import b64decode, b64encode, sha256

SIGNATURE_LENGTH = 64
NONCE_LENGTH = 12
TAG_LENGTH = 16


class ProofType(str, Enum):
    """Поддерживаемые алгоритмы подписи."""

    ES256 = "ES256"
    ED25519 = "Ed25519"

    @classmethod
    def parse(cls, value: str) -> "ProofType":
        for member in cls:
            if member.value.lower() == str(value).strip().lower():
                return member
        from .exceptions import UnsupportedAlgorithmError

        raise UnsupportedAlgorithmError(str(value))


@dataclass(frozen=True)
class Proof:
    """Подпись документа или транзакции (raw r||s для ES256)."""

    proof_type: ProofType
    created: str
    verification_method: str
    signature_value: str

    @property
    def signature_bytes(self) -> bytes:
        return b64decode(self.signature_value)

    def to_dict(self) -> dict:
        return {
            "type": self.proof_type.value,
            "created": self.created,
            "verificationMethod": self.verification_method,
            "signatureValue": self.signature_value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Proof":
        return cls(
            proof_type=ProofType.parse(data["type"]),
            created=data["created"],
            verification_method=data["verificationMethod"],
            signature_value=data["signatureValue"],
        )


@dataclass(frozen=True)
class KeyPair:
    """Пара ключей; private_key — 32-байтовый скаляр (ES256) или seed (Ed25519)."""

    algorithm: ProofType
    private_key: bytes = field(repr=False)
    public_key: bytes
    key_id: str

    def public_only(self) -> "PublicKeyRecord":
        return PublicKeyRecord(self.key_id, self.algorithm, self.public_key)


@dataclass(frozen=True)
class PublicKeyRecord:
    key_id: str
    algorithm: ProofType
    public_key: bytes

    def to_dict(self) -> dict:
        return {
            "keyId": self.key_id,
            "algorithm": self.algorithm.value,
            "publicKey": b64encode(self.public_key),
        }


@dataclass(frozen=True)
class SealedPayload:
    """Результат AES-GCM: шифртекст, 12-байтовый nonce, 16-байтовый тег."""

    ciphertext: bytes
    nonce: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        """Сериализация для хранения: nonce || ciphertext || tag."""
        return self.nonce + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SealedPayload":
        if len(blob) < NONCE_LENGTH + TAG_LENGTH:
            raise ValueError("Слишком короткий запечатанный блок")
        return cls(
            ciphertext=blob[NONCE_LENGTH:-TAG_LENGTH],
            nonce=blob[:NONCE_LENGTH],
            tag=blob[-TAG_LENGTH:],
        )

    def to_dict(self) -> dict:
        return {
            "ciphertext": b64encode(self.ciphertext),
            "nonce": b64encode(self.nonce),
            "tag": b64encode(self.tag),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SealedPayload":
        return cls(
            ciphertext=b64decode(data["ciphertext"]),
            nonce=b64decode(data["nonce"]),
            tag=b64decode(data["tag"]),
        )


@dataclass(frozen=True)
class ContentAddress:
    """SHA-256 содержимого; строковая форма: 64 hex-символа в нижнем регистре."""

    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("Адрес содержимого должен быть 32 байта")

    @property
    def hex(self) -> str:
        return self.digest.hex()

    def __str__(self) -> str:
        return self.hex

    @classmethod
    def from_hex(cls, text: str) -> "ContentAddress":
        try:
            digest = bytes.fromhex(text)
        except (ValueError, TypeError):
            raise ValueError(f"Некорректный адрес содержимого: {text!r}")
        if text != digest.hex():
            raise ValueError(f"Адрес должен быть в нижнем регистре: {text!r}")
        return cls(digest)

    @classmethod
    def of(cls, content: bytes) -> "ContentAddress":
        return cls(sha256(content))


@dataclass(frozen=True)
class StoredRef:
    address: ContentAddress
    sealed: bool
    pointer_id: Optional[str] = None

    def to_dict(self) -> dict:
        data = {"address": self.address.hex, "sealed": self.sealed}
        if self.pointer_id is not None:
            data["pointerId"] = self.pointer_id
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "StoredRef":
        return cls(
            address=ContentAddress.from_hex(data["address"]),
            sealed=bool(data["sealed"]),
            pointer_id=data.get("pointerId"),
        )
