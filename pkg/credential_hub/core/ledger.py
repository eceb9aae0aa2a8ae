"""
Детерминированная машина состояний реестра: записи о выпуске,
реестр отзывов, реестр согласий, права ролей, реестр ключей и журнал аудита.

Состояние неизменяемо: каждая операция возвращает новый снимок.
Побочные действия вне реестра (стирание блобов) возвращаются списком эффектов.
"""

import secrets
from dataclasses import dataclass, field, replace
from enum import Enum, IntFlag
from functools import cached_property
from types import MappingProxyType
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

from .credentials import (
    CredentialDocument,
    ValidityStatus,
    canonicalize,
    document_hash,
    temporal_status,
    validate_document,
    validate_document_dict,
)
from .crypto import public_key_jwk, sign, verify
from .exceptions import (
    BacipError,
    LedgerContractError,
    MalformedJsonError,
    SchemaViolationError,
    UnknownCredentialError,
)
from .merkle import merkle_root
from .models import ContentAddress, KeyPair, Proof, ProofType, StoredRef
from .utils import (
    Instant,
    b64decode,
    b64encode,
    canonical_json,
    format_instant,
    is_did,
    parse_instant,
    sha256,
    utc_now,
)

PUBLIC_KEY_LENGTHS = {ProofType.ES256: 65, ProofType.ED25519: 32}


class Permission(IntFlag):
    NONE = 0
    ISSUE = 1
    REVOKE = 2
    VERIFY = 4
    ADMIN = 8


ALL_PERMISSIONS = (
    Permission.ISSUE | Permission.REVOKE | Permission.VERIFY | Permission.ADMIN
)

# Права по ролям токена (Issuer, Verifier, Student)
ROLE_PERMISSIONS = {
    "Issuer": Permission.ISSUE | Permission.REVOKE | Permission.VERIFY,
    "Verifier": Permission.VERIFY,
    "Student": Permission.NONE,
    "Admin": ALL_PERMISSIONS,
}


class TxKind(str, Enum):
    ISSUE = "IssueCredential"
    REVOKE = "RevokeCredential"
    GIVE_CONSENT = "GiveConsent"
    WITHDRAW_CONSENT = "WithdrawConsent"
    DELETE_DATA = "DeleteData"
    SET_PERMISSIONS = "SetPermissions"
    REGISTER_KEY = "RegisterKey"


class EventName(str, Enum):
    CREDENTIAL_ISSUED = "CredentialIssued"
    CERTIFICATE_REVOKED = "CertificateRevoked"
    CONSENT_GIVEN = "ConsentGiven"
    CONSENT_WITHDRAWN = "ConsentWithdrawn"
    DATA_DELETED = "DataDeleted"
    PERMISSIONS_SET = "PermissionsSet"
    KEY_REGISTERED = "KeyRegistered"
    TX_REJECTED = "TxRejected"


class RejectReason(str, Enum):
    BAD_PAYLOAD = "BadPayload"
    UNKNOWN_SENDER = "UnknownSender"
    BAD_SIGNATURE = "BadSignature"
    DUPLICATE_TX = "DuplicateTx"
    SCHEMA_VIOLATION = "SchemaViolation"
    MISSING_PERMISSION = "MissingPermission"
    DUPLICATE_ID = "DuplicateId"
    DOCUMENT_SIGNATURE_INVALID = "DocumentSignatureInvalid"
    DOCUMENT_EXPIRED = "DocumentExpired"
    UNKNOWN_CREDENTIAL = "UnknownCredential"
    ALREADY_REVOKED = "AlreadyRevoked"
    NOT_CREDENTIAL_ISSUER = "NotCredentialIssuer"
    NOT_SUBJECT = "NotSubject"
    CONSENT_NOT_GIVEN = "ConsentNotGiven"
    CONSENT_STILL_GIVEN = "ConsentStillGiven"
    NOT_ADMIN = "NotAdmin"
    UNKNOWN_PERMISSION_BITS = "UnknownPermissionBits"
    DUPLICATE_KEY = "DuplicateKey"


class VerificationOutcome(str, Enum):
    """Итог проверки; значения совпадают со словами статуса в ответах API."""

    MALFORMED = "malformed"
    UNKNOWN_ISSUER = "unknown_issuer"
    INVALID_SIGNATURE = "invalid_signature"
    REVOKED = "revoked"
    EXPIRED = "expired"
    NOT_YET_VALID = "not_yet_valid"
    VALID = "valid"


class EffectKind(str, Enum):
    ERASE_CONTENT = "EraseContent"
    INVALIDATE_POINTER = "InvalidatePointer"
    DESTROY_BLOB_KEY = "DestroyBlobKey"


@dataclass(frozen=True)
class Effect:
    kind: EffectKind
    target: str


@dataclass(frozen=True)
class Verdict:
    reason: Optional[RejectReason] = None

    @property
    def valid(self) -> bool:
        return self.reason is None


VALID = Verdict()


# ---------- Записи состояния ----------
@dataclass(frozen=True)
class CredentialRecord:
    credential_id: str
    issuer: str
    holder: str
    content_address: str
    doc_hash: bytes
    pointer_id: Optional[str] = None
    height: int = 0

    def to_dict(self) -> dict:
        return {
            "credentialId": self.credential_id,
            "issuer": self.issuer,
            "holder": self.holder,
            "contentAddress": self.content_address,
            "docHash": self.doc_hash.hex(),
            "pointerId": self.pointer_id,
            "height": self.height,
        }


@dataclass(frozen=True)
class KeyRecord:
    key_id: str
    owner: str
    algorithm: ProofType
    public_key: bytes
    issuer_uri: Optional[str] = None

    def to_dict(self) -> dict:
        data = {
            "keyId": self.key_id,
            "owner": self.owner,
            "algorithm": self.algorithm.value,
            "publicKey": b64encode(self.public_key),
        }
        if self.issuer_uri is not None:
            data["issuerUri"] = self.issuer_uri
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "KeyRecord":
        return cls(
            key_id=data["keyId"],
            owner=data["owner"],
            algorithm=ProofType.parse(data["algorithm"]),
            public_key=b64decode(data["publicKey"]),
            issuer_uri=data.get("issuerUri"),
        )


@dataclass(frozen=True)
class AuditEvent:
    sequence: int
    height: int
    tx_id: str
    event_name: EventName
    subject: str
    timestamp: str
    detail: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "sequence": self.sequence,
            "height": self.height,
            "txId": self.tx_id,
            "eventName": self.event_name.value,
            "subject": self.subject,
            "timestamp": self.timestamp,
            "detail": self.detail,
        }


# ---------- Транзакции и блоки ----------
@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    sender: str
    payload: Mapping[str, Any]
    nonce: int
    created: str
    signature: Optional[Proof] = None

    def unsigned_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "sender": self.sender,
            "payload": dict(self.payload),
            "nonce": self.nonce,
            "created": self.created,
        }

    def signing_bytes(self) -> bytes:
        return canonical_json(self.unsigned_dict())

    @cached_property
    def tx_id(self) -> str:
        """SHA-256 канонических байтов без подписи (hex)."""
        return sha256(self.signing_bytes()).hex()

    def to_dict(self) -> dict:
        data = self.unsigned_dict()
        data["senderSignature"] = self.signature.to_dict() if self.signature else None
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Transaction":
        signature = data.get("senderSignature")
        return cls(
            kind=TxKind(data["kind"]),
            sender=data["sender"],
            payload=data["payload"],
            nonce=int(data["nonce"]),
            created=data["created"],
            signature=Proof.from_dict(signature) if signature else None,
        )


def build_transaction(
    kind: TxKind,
    sender: str,
    payload: dict,
    key: KeyPair,
    created: Optional[str] = None,
    nonce: Optional[int] = None,
    rng=None,
) -> Transaction:
    """Собирает и подписывает транзакцию ключом отправителя."""
    if nonce is None:
        nonce = (rng or secrets.SystemRandom()).getrandbits(63)
    tx = Transaction(
        kind=TxKind(kind),
        sender=sender,
        payload=payload,
        nonce=nonce,
        created=created or format_instant(utc_now()),
    )
    return replace(tx, signature=sign(tx.signing_bytes(), key, created=tx.created))


def issue_payload(doc: CredentialDocument, ref: StoredRef) -> dict:
    return {"document": doc.to_dict(), "storedRef": ref.to_dict()}


@dataclass(frozen=True)
class Rejection:
    position: int
    tx: Transaction
    reason: RejectReason

    def to_dict(self) -> dict:
        return {
            "position": self.position,
            "tx": self.tx.to_dict(),
            "reason": self.reason.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Rejection":
        return cls(
            position=int(data["position"]),
            tx=Transaction.from_dict(data["tx"]),
            reason=RejectReason(data["reason"]),
        )


@dataclass(frozen=True)
class Block:
    height: int
    parent_hash: str
    transactions: Tuple[Transaction, ...]
    rejections: Tuple[Rejection, ...]
    state_root: str
    proposer: str
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "parentHash": self.parent_hash,
            "transactions": [tx.to_dict() for tx in self.transactions],
            "rejections": [r.to_dict() for r in self.rejections],
            "stateRoot": self.state_root,
            "proposer": self.proposer,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Block":
        return cls(
            height=int(data["height"]),
            parent_hash=data["parentHash"],
            transactions=tuple(Transaction.from_dict(t) for t in data["transactions"]),
            rejections=tuple(
                Rejection.from_dict(r) for r in data.get("rejections", [])
            ),
            state_root=data["stateRoot"],
            proposer=data["proposer"],
            timestamp=data["timestamp"],
        )

    @cached_property
    def hash(self) -> str:
        return sha256(canonical_json(self.to_dict())).hex()


# ---------- Генезис и состояние ----------
@dataclass(frozen=True)
class Genesis:
    """Начальная конфигурация: администратор, ключи, роли."""

    admin: str
    keys: Tuple[KeyRecord, ...] = ()
    roles: Mapping[str, int] = field(default_factory=dict)
    issuer_only_revocation: bool = False
    timestamp: str = "1970-01-01T00:00:00Z"

    def to_dict(self) -> dict:
        return {
            "admin": self.admin,
            "keys": [k.to_dict() for k in self.keys],
            "roles": {did: int(bits) for did, bits in self.roles.items()},
            "issuerOnlyRevocation": self.issuer_only_revocation,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Genesis":
        return cls(
            admin=data["admin"],
            keys=tuple(KeyRecord.from_dict(k) for k in data.get("keys", [])),
            roles={did: int(bits) for did, bits in data.get("roles", {}).items()},
            issuer_only_revocation=bool(data.get("issuerOnlyRevocation", False)),
            timestamp=data.get("timestamp", "1970-01-01T00:00:00Z"),
        )

    @property
    def hash(self) -> str:
        return sha256(canonical_json(self.to_dict())).hex()


@dataclass(frozen=True)
class LedgerState:
    admin: str
    credentials: Mapping[str, CredentialRecord]
    revoked: FrozenSet[bytes]
    revocation_index: Mapping[bytes, str]
    consent: Mapping[str, bool]
    roles: Mapping[str, int]
    keys: Mapping[str, KeyRecord]
    audit_log: Tuple[AuditEvent, ...]
    height: int
    last_block_hash: str
    applied_txs: FrozenSet[str]
    issuer_only_revocation: bool = False


def genesis_state(genesis: Genesis) -> LedgerState:
    roles = {did: int(bits) for did, bits in genesis.roles.items()}
    roles[genesis.admin] = int(roles.get(genesis.admin, 0) | ALL_PERMISSIONS)
    return LedgerState(
        admin=genesis.admin,
        credentials=MappingProxyType({}),
        revoked=frozenset(),
        revocation_index=MappingProxyType({}),
        consent=MappingProxyType({}),
        roles=MappingProxyType(roles),
        keys=MappingProxyType({k.key_id: k for k in genesis.keys}),
        audit_log=(),
        height=0,
        last_block_hash=genesis.hash,
        applied_txs=frozenset(),
        issuer_only_revocation=genesis.issuer_only_revocation,
    )


# ---------- Запросы к состоянию ----------
def revocation_key(credential_id: str) -> bytes:
    return sha256(credential_id.encode("utf-8"))


def is_revoked(state: LedgerState, key: Union[bytes, str]) -> bool:
    if isinstance(key, str):
        key = bytes.fromhex(key)
    return key in state.revoked


def authorize_action(state: LedgerState, user: str, required: int) -> bool:
    """Default deny: неизвестный пользователь имеет права 0."""
    bits = state.roles.get(user, 0)
    return (bits & int(required)) == int(required)


def credential_leaf(credential_id: str, doc_hash: bytes, revoked: bool) -> bytes:
    flag = b"\x01" if revoked else b"\x00"
    return sha256(credential_id.encode("utf-8") + doc_hash + flag)


def sorted_leaves(state: LedgerState) -> List[Tuple[str, bytes]]:
    out = []
    for credential_id in sorted(state.credentials):
        record = state.credentials[credential_id]
        revoked = revocation_key(credential_id) in state.revoked
        leaf = credential_leaf(credential_id, record.doc_hash, revoked)
        out.append((credential_id, leaf))
    return out


def state_commitment(state: LedgerState) -> bytes:
    return merkle_root([leaf for _, leaf in sorted_leaves(state)])


def audit_query(
    state: LedgerState,
    event_name: Optional[Union[EventName, str]] = None,
    subject: Optional[str] = None,
    from_height: Optional[int] = None,
    to_height: Optional[int] = None,
    limit: Optional[int] = None,
) -> List[AuditEvent]:
    name = EventName(event_name) if event_name else None
    events = []
    for event in state.audit_log:
        if name is not None and event.event_name is not name:
            continue
        if subject is not None and event.subject != subject:
            continue
        if from_height is not None and event.height < from_height:
            continue
        if to_height is not None and event.height > to_height:
            continue
        events.append(event)
        if limit is not None and len(events) >= limit:
            break
    return events


def credentials_of(state: LedgerState, holder: str) -> List[CredentialRecord]:
    return [r for _, r in sorted(state.credentials.items()) if r.holder == holder]


def keys_of(state: LedgerState, owner: str) -> List[KeyRecord]:
    return [k for _, k in sorted(state.keys.items()) if k.owner == owner]


def issuer_key(state: LedgerState, issuer: str, key_id: str) -> Optional[KeyRecord]:
    """Ключ издателя: keyId из proof, владелец или псевдоним issuerUri совпадает."""
    record = state.keys.get(key_id)
    if record is None:
        return None
    if issuer in (record.owner, record.issuer_uri):
        return record
    return None


def did_document(state: LedgerState, did: str) -> Optional[dict]:
    """DID-документ по ключам из реестра; None, если у DID нет ключей."""
    keys = keys_of(state, did)
    if not keys:
        return None
    methods = []
    for key in keys:
        method = {"id": key.key_id, "controller": did}
        if key.algorithm is ProofType.ED25519:
            method["type"] = "Ed25519VerificationKey2020"
        else:
            method["type"] = "JsonWebKey2020"
        method["publicKeyJwk"] = public_key_jwk(key.algorithm, key.public_key)
        methods.append(method)
    ids = [m["id"] for m in methods]
    document = {
        "@context": ["https://www.w3.org/ns/did/v1"],
        "id": did,
        "verificationMethod": methods,
        "assertionMethod": ids,
        "authentication": ids,
    }
    aliases = sorted({k.issuer_uri for k in keys if k.issuer_uri})
    if aliases:
        document["alsoKnownAs"] = aliases
    return document


# ---------- Проверка транзакций ----------
def validate_transaction(
    tx: Transaction, state: LedgerState, clock: Instant
) -> Verdict:
    """
    Проверки в порядке: подпись отправителя, затем правила по виду
    транзакции. Причина отказа: первая непройденная проверка.
    """
    reason = _check_signature(tx, state)
    if reason is None:
        checker = _CHECKERS.get(tx.kind)
        reason = checker(tx, state, clock) if checker else RejectReason.BAD_PAYLOAD
    return Verdict(reason)


def _check_signature(tx: Transaction, state: LedgerState) -> Optional[RejectReason]:
    owned = keys_of(state, tx.sender)
    if not owned:
        return RejectReason.UNKNOWN_SENDER
    if tx.signature is None:
        return RejectReason.BAD_SIGNATURE
    record = state.keys.get(tx.signature.verification_method)
    if record is None or record.owner != tx.sender:
        return RejectReason.BAD_SIGNATURE
    if record.algorithm is not tx.signature.proof_type:
        return RejectReason.BAD_SIGNATURE
    if not verify(tx.signing_bytes(), tx.signature, record.public_key):
        return RejectReason.BAD_SIGNATURE
    if tx.tx_id in state.applied_txs:
        return RejectReason.DUPLICATE_TX
    return None


def _check_issue(
    tx: Transaction, state: LedgerState, clock: Instant
) -> Optional[RejectReason]:
    try:
        doc = validate_document_dict(tx.payload.get("document"))
        StoredRef.from_dict(tx.payload["storedRef"])
    except (SchemaViolationError, MalformedJsonError):
        return RejectReason.SCHEMA_VIOLATION
    except (KeyError, TypeError, ValueError):
        return RejectReason.BAD_PAYLOAD
    if doc.id is None or doc.proof is None:
        return RejectReason.SCHEMA_VIOLATION
    if not authorize_action(state, tx.sender, Permission.ISSUE):
        return RejectReason.MISSING_PERMISSION
    if doc.id in state.credentials:
        return RejectReason.DUPLICATE_ID
    key = issuer_key(state, doc.issuer, doc.proof.verification_method)
    if key is None or key.owner != tx.sender:
        return RejectReason.DOCUMENT_SIGNATURE_INVALID
    if not verify(canonicalize(doc, exclude_proof=True), doc.proof, key.public_key):
        return RejectReason.DOCUMENT_SIGNATURE_INVALID
    if temporal_status(doc, clock) is ValidityStatus.EXPIRED:
        return RejectReason.DOCUMENT_EXPIRED
    return None


def _check_revoke(
    tx: Transaction, state: LedgerState, clock: Instant
) -> Optional[RejectReason]:
    try:
        key = bytes.fromhex(tx.payload["revocationKey"])
    except (KeyError, TypeError, ValueError):
        return RejectReason.BAD_PAYLOAD
    if not authorize_action(state, tx.sender, Permission.REVOKE):
        return RejectReason.MISSING_PERMISSION
    credential_id = state.revocation_index.get(key)
    if credential_id is None:
        return RejectReason.UNKNOWN_CREDENTIAL
    if key in state.revoked:
        return RejectReason.ALREADY_REVOKED
    issuer = state.credentials[credential_id].issuer
    if state.issuer_only_revocation and issuer != tx.sender:
        return RejectReason.NOT_CREDENTIAL_ISSUER
    return None


def _consent_subject(tx: Transaction) -> Optional[str]:
    subject = tx.payload.get("subject")
    return subject if is_did(subject) else None


def _check_give(
    tx: Transaction, state: LedgerState, clock: Instant
) -> Optional[RejectReason]:
    subject = _consent_subject(tx)
    if subject is None:
        return RejectReason.BAD_PAYLOAD
    if subject != tx.sender:
        return RejectReason.NOT_SUBJECT
    return None


def _check_withdraw(
    tx: Transaction, state: LedgerState, clock: Instant
) -> Optional[RejectReason]:
    reason = _check_give(tx, state, clock)
    if reason is None and not state.consent.get(tx.sender, False):
        return RejectReason.CONSENT_NOT_GIVEN
    return reason


def _check_delete(
    tx: Transaction, state: LedgerState, clock: Instant
) -> Optional[RejectReason]:
    reason = _check_give(tx, state, clock)
    if reason is None and state.consent.get(tx.sender, False):
        return RejectReason.CONSENT_STILL_GIVEN
    return reason


def _is_admin(state: LedgerState, sender: str) -> bool:
    return sender == state.admin or authorize_action(state, sender, Permission.ADMIN)


def _check_permissions(
    tx: Transaction, state: LedgerState, clock: Instant
) -> Optional[RejectReason]:
    if not _is_admin(state, tx.sender):
        return RejectReason.NOT_ADMIN
    user, bits = tx.payload.get("user"), tx.payload.get("permissionBits")
    is_count = isinstance(bits, int) and not isinstance(bits, bool)
    if not is_did(user) or not is_count or bits < 0:
        return RejectReason.BAD_PAYLOAD
    if bits & ~int(ALL_PERMISSIONS):
        return RejectReason.UNKNOWN_PERMISSION_BITS
    return None


def _check_register_key(
    tx: Transaction, state: LedgerState, clock: Instant
) -> Optional[RejectReason]:
    if not _is_admin(state, tx.sender):
        return RejectReason.NOT_ADMIN
    try:
        record = KeyRecord.from_dict(dict(tx.payload))
    except (BacipError, KeyError, TypeError, ValueError):
        return RejectReason.BAD_PAYLOAD
    expected_length = PUBLIC_KEY_LENGTHS[record.algorithm]
    if not is_did(record.owner) or len(record.public_key) != expected_length:
        return RejectReason.BAD_PAYLOAD
    if record.key_id in state.keys:
        return RejectReason.DUPLICATE_KEY
    return None


_CHECKERS = {
    TxKind.ISSUE: _check_issue,
    TxKind.REVOKE: _check_revoke,
    TxKind.GIVE_CONSENT: _check_give,
    TxKind.WITHDRAW_CONSENT: _check_withdraw,
    TxKind.DELETE_DATA: _check_delete,
    TxKind.SET_PERMISSIONS: _check_permissions,
    TxKind.REGISTER_KEY: _check_register_key,
}


# ---------- Применение ----------
class _Draft:
    """Изменяемая копия снимка на время применения блока."""

    def __init__(self, state: LedgerState):
        self.base = state
        self.credentials = dict(state.credentials)
        self.revoked = set(state.revoked)
        self.revocation_index = dict(state.revocation_index)
        self.consent = dict(state.consent)
        self.roles = dict(state.roles)
        self.keys = dict(state.keys)
        self.audit_log = list(state.audit_log)
        self.applied_txs = set(state.applied_txs)
        self.height = state.height
        self.last_block_hash = state.last_block_hash

    def freeze(self) -> LedgerState:
        return LedgerState(
            admin=self.base.admin,
            credentials=MappingProxyType(self.credentials),
            revoked=frozenset(self.revoked),
            revocation_index=MappingProxyType(self.revocation_index),
            consent=MappingProxyType(self.consent),
            roles=MappingProxyType(self.roles),
            keys=MappingProxyType(self.keys),
            audit_log=tuple(self.audit_log),
            height=self.height,
            last_block_hash=self.last_block_hash,
            applied_txs=frozenset(self.applied_txs),
            issuer_only_revocation=self.base.issuer_only_revocation,
        )

    def emit(
        self,
        tx_id: str,
        name: EventName,
        subject: str,
        timestamp: str,
        detail=None,
    ) -> AuditEvent:
        event = AuditEvent(
            sequence=len(self.audit_log),
            height=self.height,
            tx_id=tx_id,
            event_name=name,
            subject=subject,
            timestamp=timestamp,
            detail=detail,
        )
        self.audit_log.append(event)
        return event


def _apply(
    draft: _Draft, tx: Transaction, timestamp: str
) -> Tuple[List[AuditEvent], List[Effect]]:
    payload = tx.payload
    tx_id = tx.tx_id
    draft.applied_txs.add(tx_id)
    effects: List[Effect] = []

    if tx.kind is TxKind.ISSUE:
        doc = validate_document_dict(payload["document"])
        ref = StoredRef.from_dict(payload["storedRef"])
        draft.credentials[doc.id] = CredentialRecord(
            credential_id=doc.id,
            issuer=tx.sender,
            holder=doc.recipient.id,
            content_address=ref.address.hex,
            doc_hash=document_hash(doc),
            pointer_id=ref.pointer_id,
            height=draft.height,
        )
        draft.revocation_index[revocation_key(doc.id)] = doc.id
        event = draft.emit(tx_id, EventName.CREDENTIAL_ISSUED, doc.id, timestamp)
    elif tx.kind is TxKind.REVOKE:
        key = bytes.fromhex(payload["revocationKey"])
        draft.revoked.add(key)
        credential_id = draft.revocation_index[key]
        event = draft.emit(
            tx_id,
            EventName.CERTIFICATE_REVOKED,
            credential_id,
            timestamp,
            payload.get("reason"),
        )
    elif tx.kind is TxKind.GIVE_CONSENT:
        draft.consent[payload["subject"]] = True
        event = draft.emit(
            tx_id, EventName.CONSENT_GIVEN, payload["subject"], timestamp
        )
    elif tx.kind is TxKind.WITHDRAW_CONSENT:
        draft.consent[payload["subject"]] = False
        event = draft.emit(
            tx_id, EventName.CONSENT_WITHDRAWN, payload["subject"], timestamp
        )
    elif tx.kind is TxKind.DELETE_DATA:
        subject = payload["subject"]
        for credential_id in sorted(draft.credentials):
            record = draft.credentials[credential_id]
            if record.holder != subject:
                continue
            effects.append(Effect(EffectKind.ERASE_CONTENT, record.content_address))
            effects.append(Effect(EffectKind.DESTROY_BLOB_KEY, record.content_address))
            if record.pointer_id:
                effects.append(Effect(EffectKind.INVALIDATE_POINTER, record.pointer_id))
        event = draft.emit(tx_id, EventName.DATA_DELETED, subject, timestamp)
    elif tx.kind is TxKind.SET_PERMISSIONS:
        draft.roles[payload["user"]] = int(payload["permissionBits"])
        event = draft.emit(
            tx_id,
            EventName.PERMISSIONS_SET,
            payload["user"],
            timestamp,
            str(int(payload["permissionBits"])),
        )
    elif tx.kind is TxKind.REGISTER_KEY:
        record = KeyRecord.from_dict(dict(payload))
        draft.keys[record.key_id] = record
        event = draft.emit(
            tx_id, EventName.KEY_REGISTERED, record.owner, timestamp, record.key_id
        )
    else:
        raise LedgerContractError(f"неизвестный вид транзакции {tx.kind}")
    return [event], effects


def apply_transaction(
    state: LedgerState, tx: Transaction, clock: Optional[Instant] = None
) -> Tuple[LedgerState, List[AuditEvent], List[Effect]]:
    """Применяет проверенную транзакцию. Непроверенная -> LedgerContractError."""
    moment = clock if clock is not None else tx.created
    timestamp = format_instant(parse_instant(moment))
    verdict = validate_transaction(tx, state, timestamp)
    if not verdict.valid:
        raise LedgerContractError(
            f"транзакция {tx.tx_id} недействительна: {verdict.reason.value}"
        )
    draft = _Draft(state)
    events, effects = _apply(draft, tx, timestamp)
    return draft.freeze(), events, effects


def _reject(draft: _Draft, rejection: Rejection, timestamp: str) -> AuditEvent:
    return draft.emit(
        rejection.tx.tx_id,
        EventName.TX_REJECTED,
        rejection.tx.sender,
        timestamp,
        rejection.reason.value,
    )


def build_block(
    state: LedgerState,
    pending: List[Transaction],
    proposer: str,
    timestamp: Instant,
    max_transactions: Optional[int] = None,
) -> Tuple[Block, LedgerState, List[AuditEvent], List[Effect]]:
    """
    Собирает блок следующей высоты: транзакции проверяются последовательно
    против промежуточного состояния, недействительные уходят в rejections.
    """
    stamp = format_instant(parse_instant(timestamp))
    batch = list(pending if max_transactions is None else pending[:max_transactions])
    draft = _Draft(state)
    draft.height = state.height + 1
    accepted: List[Transaction] = []
    rejected: List[Rejection] = []
    events: List[AuditEvent] = []
    effects: List[Effect] = []
    for position, tx in enumerate(batch):
        verdict = validate_transaction(tx, draft.freeze(), stamp)
        if verdict.valid:
            tx_events, tx_effects = _apply(draft, tx, stamp)
            accepted.append(tx)
            events.extend(tx_events)
            effects.extend(tx_effects)
        else:
            rejection = Rejection(position, tx, verdict.reason)
            rejected.append(rejection)
            events.append(_reject(draft, rejection, stamp))
    interim = draft.freeze()
    block = Block(
        height=draft.height,
        parent_hash=state.last_block_hash,
        transactions=tuple(accepted),
        rejections=tuple(rejected),
        state_root=state_commitment(interim).hex(),
        proposer=proposer,
        timestamp=stamp,
    )
    draft.last_block_hash = block.hash
    return block, draft.freeze(), events, effects


def apply_block(
    state: LedgerState, block: Block
) -> Tuple[LedgerState, List[AuditEvent], List[Effect]]:
    """
    Применяет блок, заново выводя вердикт каждой транзакции и каждого отказа
    по времени блока. Любое расхождение -> LedgerContractError.
    """
    if block.height != state.height + 1:
        raise LedgerContractError(
            f"ожидалась высота {state.height + 1}, получена {block.height}"
        )
    if block.parent_hash != state.last_block_hash:
        raise LedgerContractError(f"блок {block.height} не продолжает цепочку")
    rejections = {r.position: r for r in block.rejections}
    total = len(block.transactions) + len(block.rejections)
    out_of_range = any(p >= total or p < 0 for p in rejections)
    if len(rejections) != len(block.rejections) or out_of_range:
        raise LedgerContractError("некорректные позиции отказов")
    draft = _Draft(state)
    draft.height = block.height
    events: List[AuditEvent] = []
    effects: List[Effect] = []
    accepted = iter(block.transactions)
    for position in range(total):
        rejection = rejections.get(position)
        tx = rejection.tx if rejection else next(accepted)
        verdict = validate_transaction(tx, draft.freeze(), block.timestamp)
        if rejection is not None:
            if verdict.reason is not rejection.reason:
                raise LedgerContractError(
                    f"отказ на позиции {position} не подтверждён: "
                    f"{rejection.reason.value}"
                )
            events.append(_reject(draft, rejection, block.timestamp))
            continue
        if not verdict.valid:
            raise LedgerContractError(
                f"транзакция {tx.tx_id} в блоке {block.height} недействительна: "
                f"{verdict.reason.value}"
            )
        tx_events, tx_effects = _apply(draft, tx, block.timestamp)
        events.extend(tx_events)
        effects.extend(tx_effects)
    root = state_commitment(draft.freeze()).hex()
    if root != block.state_root:
        raise LedgerContractError(f"stateRoot блока {block.height} не совпадает")
    draft.last_block_hash = block.hash
    return draft.freeze(), events, effects


# ---------- Проверка удостоверений ----------
def verify_credential(
    state: LedgerState,
    doc: Union[CredentialDocument, bytes, Dict[str, Any]],
    clock: Instant,
) -> VerificationOutcome:
    """
    Порядок: Malformed -> UnknownIssuer -> InvalidSignature -> Revoked ->
    Expired/NotYetValid -> Valid.
    """
    try:
        if isinstance(doc, (bytes, str)):
            doc = validate_document(doc)
        elif isinstance(doc, dict):
            doc = validate_document_dict(doc)
    except (MalformedJsonError, SchemaViolationError):
        return VerificationOutcome.MALFORMED
    if doc.id is None or doc.proof is None:
        return VerificationOutcome.MALFORMED

    key = issuer_key(state, doc.issuer, doc.proof.verification_method)
    if key is None:
        return VerificationOutcome.UNKNOWN_ISSUER
    if not verify(canonicalize(doc, exclude_proof=True), doc.proof, key.public_key):
        return VerificationOutcome.INVALID_SIGNATURE
    record = state.credentials.get(doc.id)
    if record is not None and record.doc_hash != document_hash(doc):
        # Подписан ключом издателя, но это не зарегистрированный документ
        return VerificationOutcome.INVALID_SIGNATURE
    if is_revoked(state, revocation_key(doc.id)):
        return VerificationOutcome.REVOKED
    status = temporal_status(doc, clock)
    if status is ValidityStatus.EXPIRED:
        return VerificationOutcome.EXPIRED
    if status is ValidityStatus.NOT_YET_VALID:
        return VerificationOutcome.NOT_YET_VALID
    return VerificationOutcome.VALID


def credential_status(state: LedgerState, credential_id: str) -> VerificationOutcome:
    """Статус по идентификатору: существование и отзыв, без проверки сроков."""
    if credential_id not in state.credentials:
        raise UnknownCredentialError(credential_id)
    if is_revoked(state, revocation_key(credential_id)):
        return VerificationOutcome.REVOKED
    return VerificationOutcome.VALID


def address_of(record: CredentialRecord) -> ContentAddress:
    return ContentAddress.from_hex(record.content_address)
