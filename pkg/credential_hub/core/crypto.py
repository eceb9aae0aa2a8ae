"""
Криптографические примитивы узла: ключи ES256 и Ed25519, подписи,
запечатывание AES-GCM-256, адресация по содержимому.
"""

import base64
import os
from typing import Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .exceptions import AuthFailureError, BadKeyLengthError, UnsupportedAlgorithmError
from .models import (
    NONCE_LENGTH,
    SIGNATURE_LENGTH,
    TAG_LENGTH,
    ContentAddress,
    KeyPair,
    Proof,
    ProofType,
    SealedPayload,
)
from .utils import b64encode, format_instant, sha256_hex, utc_now

AES_KEY_LENGTH = 32
SEED_LENGTH = 32

# Порядок группы P-256
P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


def _random_bytes(length: int, rng=None) -> bytes:
    if rng is None:
        return os.urandom(length)
    return rng.randbytes(length)


def default_key_id(public_key: bytes) -> str:
    return "urn:bacip:key:" + sha256_hex(public_key)[:32]


# ---------- Ключи ----------
def generate_keypair(algorithm, rng=None, key_id: Optional[str] = None) -> KeyPair:
    """
    Создаёт пару ключей. Семя берётся из rng (random.Random в тестах)
    или из os.urandom. Для ES256 семя сводится к скаляру в [1, n-1].
    """
    algorithm = ProofType.parse(getattr(algorithm, "value", algorithm))
    seed = _random_bytes(SEED_LENGTH, rng)
    if algorithm is ProofType.ES256:
        scalar = int.from_bytes(seed, "big") % (P256_ORDER - 1) + 1
        seed = scalar.to_bytes(32, "big")
    return load_keypair(algorithm, seed, key_id)


def load_keypair(
    algorithm, private_key: bytes, key_id: Optional[str] = None
) -> KeyPair:
    """Восстанавливает пару по закрытому ключу (скаляр ES256 или seed Ed25519)."""
    algorithm = ProofType.parse(getattr(algorithm, "value", algorithm))
    public = public_key_bytes(private_key_object(algorithm, private_key))
    return KeyPair(
        algorithm=algorithm,
        private_key=bytes(private_key),
        public_key=public,
        key_id=key_id or default_key_id(public),
    )


def private_key_object(algorithm: ProofType, private_key: bytes):
    """Объект закрытого ключа cryptography (нужен также для подписи JWT)."""
    if len(private_key) != SEED_LENGTH:
        raise ValueError("Закрытый ключ должен быть 32 байта")
    if algorithm is ProofType.ES256:
        scalar = int.from_bytes(private_key, "big")
        if not 1 <= scalar < P256_ORDER:
            raise ValueError("Скаляр ES256 вне допустимого диапазона")
        return ec.derive_private_key(scalar, ec.SECP256R1())
    if algorithm is ProofType.ED25519:
        return Ed25519PrivateKey.from_private_bytes(private_key)
    raise UnsupportedAlgorithmError(str(algorithm))


def public_key_object(algorithm: ProofType, public_key: bytes):
    if algorithm is ProofType.ES256:
        return ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), public_key)
    if algorithm is ProofType.ED25519:
        return Ed25519PublicKey.from_public_bytes(public_key)
    raise UnsupportedAlgorithmError(str(algorithm))


def public_key_bytes(private_obj) -> bytes:
    """ES256: несжатая точка X9.62 (65 байт); Ed25519: 32 байта."""
    public = private_obj.public_key()
    if isinstance(public, ec.EllipticCurvePublicKey):
        return public.public_bytes(
            serialization.Encoding.X962,
            serialization.PublicFormat.UncompressedPoint,
        )
    return public.public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


def public_key_jwk(algorithm: ProofType, public_key: bytes) -> dict:
    """JWK открытого ключа для DID-документа."""

    def b64url(data: bytes) -> str:
        return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")

    if algorithm is ProofType.ES256:
        return {
            "kty": "EC",
            "crv": "P-256",
            "x": b64url(public_key[1:33]),
            "y": b64url(public_key[33:65]),
        }
    return {"kty": "OKP", "crv": "Ed25519", "x": b64url(public_key)}


# ---------- Подписи ----------
def sign_bytes(message: bytes, key: KeyPair) -> bytes:
    """Сырая 64-байтовая подпись; ES256 с детерминированным nonce (RFC 6979)."""
    private_obj = private_key_object(key.algorithm, key.private_key)
    if key.algorithm is ProofType.ES256:
        der = private_obj.sign(
            message, ec.ECDSA(hashes.SHA256(), deterministic_signing=True)
        )
        r, s = decode_dss_signature(der)
        return r.to_bytes(32, "big") + s.to_bytes(32, "big")
    return private_obj.sign(message)


def sign(message: bytes, key: KeyPair, created: Optional[str] = None) -> Proof:
    return Proof(
        proof_type=key.algorithm,
        created=created or format_instant(utc_now()),
        verification_method=key.key_id,
        signature_value=b64encode(sign_bytes(message, key)),
    )


def verify_bytes(
    message: bytes, signature: bytes, algorithm: ProofType, public_key: bytes
) -> bool:
    """Тотальная функция: любые некорректные входные данные дают False."""
    try:
        if len(signature) != SIGNATURE_LENGTH:
            return False
        public_obj = public_key_object(ProofType(algorithm), bytes(public_key))
        if isinstance(public_obj, ec.EllipticCurvePublicKey):
            der = encode_dss_signature(
                int.from_bytes(signature[:32], "big"),
                int.from_bytes(signature[32:], "big"),
            )
            public_obj.verify(der, message, ec.ECDSA(hashes.SHA256()))
        else:
            public_obj.verify(signature, message)
        return True
    except InvalidSignature:
        return False
    except Exception:
        # битые ключи, неверные типы, неизвестный алгоритм
        return False


def verify(message: bytes, proof: Proof, public_key: bytes) -> bool:
    try:
        signature = proof.signature_bytes
        algorithm = proof.proof_type
    except (ValueError, AttributeError, TypeError):
        return False
    return verify_bytes(message, signature, algorithm, public_key)


# ---------- AES-GCM ----------
def generate_symmetric_key(rng=None) -> bytes:
    return _random_bytes(AES_KEY_LENGTH, rng)


def encrypt_payload(
    plaintext: bytes,
    key: bytes,
    rng=None,
    associated_data: Optional[bytes] = None,
) -> SealedPayload:
    """
    Запечатывает данные AES-256-GCM. Nonce свежий на каждый вызов;
    rng с методом randbytes подставляется только в тестах.
    """
    if len(key) != AES_KEY_LENGTH:
        raise BadKeyLengthError(len(key))
    nonce = _random_bytes(NONCE_LENGTH, rng)
    sealed = AESGCM(key).encrypt(nonce, plaintext, associated_data)
    return SealedPayload(
        ciphertext=sealed[:-TAG_LENGTH], nonce=nonce, tag=sealed[-TAG_LENGTH:]
    )


def decrypt_payload(
    sealed: SealedPayload, key: bytes, associated_data: Optional[bytes] = None
) -> bytes:
    if len(key) != AES_KEY_LENGTH:
        raise BadKeyLengthError(len(key))
    if len(sealed.nonce) != NONCE_LENGTH or len(sealed.tag) != TAG_LENGTH:
        raise AuthFailureError()
    try:
        return AESGCM(key).decrypt(
            sealed.nonce, sealed.ciphertext + sealed.tag, associated_data
        )
    except InvalidTag:
        raise AuthFailureError()


# ---------- Хеширование ----------
def content_hash(content: bytes) -> ContentAddress:
    return ContentAddress.of(content)
