"""
Сервис узла: собирает хранилище ключей, хранилище блобов, реестр,
консенсус и журнал якорей и выполняет операции жизненного цикла
удостоверений. Используется и CLI, и REST-шлюзом.
"""

import threading
from dataclasses import dataclass, replace
from datetime import timedelta
from typing import Any, Callable, Dict, List, Optional, Union

from ..consensus.config import ConsensusConfig, ValidatorInfo
from ..consensus.ibft import FinalizedBlock
from ..consensus.local import LocalConsensus
from ..decorators import log_action
from ..infra.config import CliConfig
from ..infra.database import load_json, save_json
from ..logging_config import get_logger
from .anchors import (
    AnchorLog,
    ClaimedStatus,
    InclusionProof,
    PublicAnchor,
    build_inclusion_proof,
    verify_with_anchor,
)
from .content_store import INVALIDATED, ContentStore
from .credentials import (
    CredentialDocument,
    Recipient,
    Violation,
    build_credential,
    canonicalize,
    date_of,
    generate_credential_id,
    serialize_document,
    validate_document,
    validate_document_dict,
    validate_issue_request,
)
from .crypto import decrypt_payload, encrypt_payload, sign
from .exceptions import (
    ConfigError,
    MalformedJsonError,
    NotFoundError,
    SchemaViolationError,
    TransactionRejectedError,
    UnknownCredentialError,
    UnknownKeyError,
    UnknownPointerError,
)
from .journal import BlockJournal
from .keystore import Keystore, blob_key_id
from .ledger import (
    ROLE_PERMISSIONS,
    AuditEvent,
    CredentialRecord,
    EffectKind,
    EventName,
    Genesis,
    KeyRecord,
    LedgerState,
    Permission,
    RejectReason,
    Transaction,
    TxKind,
    VerificationOutcome,
    address_of,
    audit_query,
    authorize_action,
    build_transaction,
    credential_status,
    credentials_of,
    did_document,
    is_revoked,
    issue_payload,
    keys_of,
    revocation_key,
    verify_credential,
)
from .models import ContentAddress, KeyPair, ProofType, SealedPayload, StoredRef
from .utils import Instant, format_instant, is_did, parse_instant, utc_now

logger = get_logger(__name__)

CONSENT_ACTIONS = {
    "give": TxKind.GIVE_CONSENT,
    "withdraw": TxKind.WITHDRAW_CONSENT,
    "delete": TxKind.DELETE_DATA,
}
BOOTSTRAP_VALIDATOR = "v0"


@dataclass(frozen=True)
class IssueResult:
    document: CredentialDocument
    tx_id: str


@dataclass(frozen=True)
class VerifyResponse:
    """Ответ проверки; status берётся из VerificationOutcome."""

    status: VerificationOutcome
    credential_id: Optional[str]
    checked_at: str
    anchor_proof: Optional[dict] = None

    @property
    def valid(self) -> bool:
        return self.status is VerificationOutcome.VALID

    def to_dict(self) -> dict:
        data = {
            "status": self.status.value,
            "credentialId": self.credential_id,
            "checkedAt": self.checked_at,
        }
        if self.anchor_proof is not None:
            data["anchorProof"] = self.anchor_proof
        return data


def parse_permissions(value: Union[int, str]) -> int:
    """Биты прав из числа или имени роли (Issuer, Verifier, Student, Admin)."""
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    text = str(value).strip()
    if text.isdigit():
        return int(text)
    for role, bits in ROLE_PERMISSIONS.items():
        if role.lower() == text.lower():
            return int(bits)
    raise ValueError(f"Неизвестные права: {value!r}")


def owner_of_key_id(key_id: str) -> Optional[str]:
    """did:example:456#key-1 -> did:example:456."""
    did = key_id.split("#", 1)[0]
    return did if is_did(did) else None


class CredentialService:
    """Узел реестра удостоверений с локальным консенсусом."""

    def __init__(
        self,
        config: CliConfig,
        clock: Callable[[], Instant] = utc_now,
        rng=None,
    ):
        self.config = config
        self.clock = clock
        self.rng = rng
        self.keystore = Keystore(
            config.keystore_path,
            config.resolve_passphrase(),
            iterations=config.keystore_kdf_iterations,
            rng=rng,
        )
        self.store = ContentStore(config.store_root, config.store_max_bytes)
        self.anchors = AnchorLog(config.anchor_log_path)
        self.journal = BlockJournal(config.ledger_journal_path)
        self._lock = threading.Lock()

        self.validators = self._load_validators()
        self.genesis = self._load_genesis()
        state, chain = self.journal.replay(self.genesis)
        keys = {
            validator_id: self.keystore.get(validator_id)
            for validator_id in self.validators.ids
            if validator_id in self.keystore
        }
        self.consensus = LocalConsensus(
            self.validators,
            keys,
            state,
            max_block_transactions=config.max_block_transactions,
            clock=clock,
        )
        self.consensus.add_listener(self._on_finalized)
        if chain and self.anchors.last_height < chain[-1].height:
            self.anchors.anchor_block(chain[-1], state)

    # ---------- начальная настройка ----------
    def _load_validators(self) -> ConsensusConfig:
        if load_json(self.config.validator_config_path) is not None:
            return ConsensusConfig.load(self.config.validator_config_path)
        key = self.keystore.generate(ProofType.ED25519, key_id=BOOTSTRAP_VALIDATOR)
        validators = ConsensusConfig(
            validators=(ValidatorInfo(key.key_id, key.public_key),),
            round_timeout=self.config.round_timeout,
            max_rounds=self.config.max_rounds,
        )
        validators.save(self.config.validator_config_path)
        logger.info(f"Создана конфигурация из одного валидатора: {key.key_id}")
        return validators

    def _load_genesis(self) -> Genesis:
        data = load_json(self.config.genesis_path)
        if data is not None:
            try:
                return Genesis.from_dict(data)
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError(
                    f"некорректный генезис {self.config.genesis_path}: {e}"
                )
        admin = self.config.admin_did
        key = self.keystore.generate(
            ProofType.ED25519, key_id=f"{admin}#key-1", owner=admin
        )
        genesis = Genesis(
            admin=admin,
            keys=(KeyRecord(key.key_id, admin, key.algorithm, key.public_key),),
            issuer_only_revocation=bool(self.config.issuer_only_revocation),
            timestamp=format_instant(parse_instant(self.clock())),
        )
        save_json(self.config.genesis_path, genesis.to_dict())
        logger.info(f"Создан генезис с администратором {admin}")
        return genesis

    # ---------- финализация ----------
    @property
    def state(self) -> LedgerState:
        return self.consensus.state

    def _on_finalized(self, finalized: FinalizedBlock) -> None:
        block = finalized.block
        self.journal.append(block)
        if block.height % max(int(self.config.anchor_interval), 1) == 0:
            self.anchors.anchor_block(block, finalized.state)
        for effect in finalized.effects:
            self._execute_effect(effect.kind, effect.target)

    def _execute_effect(self, kind: EffectKind, target: str) -> None:
        """Эффекты идемпотентны: отсутствующая цель пропускается."""
        try:
            if kind is EffectKind.ERASE_CONTENT:
                self.store.erase(ContentAddress.from_hex(target))
            elif kind is EffectKind.DESTROY_BLOB_KEY:
                self.keystore.destroy(blob_key_id(target))
            elif kind is EffectKind.INVALIDATE_POINTER:
                self.store.invalidate_pointer(target)
        except (NotFoundError, UnknownKeyError, UnknownPointerError):
            logger.debug(f"Эффект {kind.value} для {target}: цель уже отсутствует")

    def _submit(self, tx: Transaction) -> str:
        """Отправляет транзакцию в консенсус и ждёт финализации."""
        with self._lock:
            self.consensus.submit([tx])
        reason = self.consensus.outcome(tx.tx_id)
        if reason is not None:
            raise TransactionRejectedError(reason, tx.tx_id)
        return tx.tx_id

    # ---------- ключи ----------
    def _sender_key(self, actor: str) -> KeyPair:
        """Ключ отправителя: зарегистрирован в реестре и есть в хранилище."""
        for record in keys_of(self.state, actor):
            if record.key_id in self.keystore:
                return self.keystore.get(record.key_id)
        raise UnknownKeyError(actor)

    def _issuer_key(self, actor: str, issuer: str) -> KeyPair:
        for record in keys_of(self.state, actor):
            if issuer in (record.owner, record.issuer_uri) and (
                record.key_id in self.keystore
            ):
                return self.keystore.get(record.key_id)
        raise TransactionRejectedError(RejectReason.DOCUMENT_SIGNATURE_INVALID)

    def _now(self, at: Optional[Instant] = None):
        return parse_instant(at if at is not None else self.clock())

    # ---------- выпуск ----------
    @log_action("ISSUE")
    def issue(self, request: Any, actor: str) -> IssueResult:
        """
        Выпуск по телу запроса: проверка схемы, сборка и подпись документа,
        запечатывание копии в хранилище блобов, транзакция IssueCredential.
        """
        violations = validate_issue_request(request)
        if violations:
            raise SchemaViolationError(violations)
        if not authorize_action(self.state, actor, Permission.ISSUE):
            raise TransactionRejectedError(RejectReason.MISSING_PERMISSION)

        now = self._now()
        issue_date = date_of(now)
        expiration = request.get("expirationDate")
        if expiration is None and self.config.default_validity_days:
            validity = timedelta(days=self.config.default_validity_days)
            expiration = date_of(now + validity)
        credential = request["credential"]
        subject = {k: v for k, v in credential.items() if k != "type"}
        recipient = request["recipient"]
        doc = build_credential(
            issuer=request["issuer"],
            recipient=Recipient(recipient["id"], recipient.get("name")),
            subject=subject,
            credential_type=credential["type"],
            issue_date=issue_date,
            expiration_date=expiration,
            credential_id=generate_credential_id(self.rng),
        )
        signing_key = self._issuer_key(actor, doc.issuer)
        sender_key = self._sender_key(actor)
        proof = sign(
            canonicalize(doc, exclude_proof=True),
            signing_key,
            created=format_instant(now),
        )
        doc = doc.with_proof(proof)

        ref = self._seal_and_store(doc)
        tx = build_transaction(
            TxKind.ISSUE,
            actor,
            issue_payload(doc, ref),
            sender_key,
            created=format_instant(now),
            rng=self.rng,
        )
        try:
            tx_id = self._submit(tx)
        except TransactionRejectedError:
            self._discard_blob(ref)
            raise
        return IssueResult(doc, tx_id)

    def _seal_and_store(self, doc: CredentialDocument) -> StoredRef:
        blob_key = self.keystore.new_symmetric_key()
        sealed = encrypt_payload(
            serialize_document(doc, pretty=False), blob_key, rng=self.rng
        )
        ref = self.store.put(sealed.to_bytes(), sealed=True)
        self.keystore.put_blob_key(ref.address.hex, blob_key)
        pointer_id = self.store.create_pointer(ref.address, rng=self.rng)
        return replace(ref, pointer_id=pointer_id)

    def _discard_blob(self, ref: StoredRef) -> None:
        self._execute_effect(EffectKind.ERASE_CONTENT, ref.address.hex)
        self._execute_effect(EffectKind.DESTROY_BLOB_KEY, ref.address.hex)
        if ref.pointer_id:
            self._execute_effect(EffectKind.INVALIDATE_POINTER, ref.pointer_id)

    def fetch_document(self, record: CredentialRecord) -> CredentialDocument:
        """Открывает запечатанную копию: указатель -> блоб -> ключ -> AES-GCM."""
        address = address_of(record)
        if record.pointer_id:
            target = self.store.resolve_pointer(record.pointer_id)
            if target is INVALIDATED:
                raise NotFoundError(address.hex)
            address = target
        sealed = SealedPayload.from_bytes(self.store.get(address))
        try:
            key = self.keystore.blob_key(address.hex)
        except UnknownKeyError:
            raise NotFoundError(address.hex)
        return validate_document(decrypt_payload(sealed, key))

    # ---------- проверка ----------
    @log_action("VERIFY")
    def verify(
        self,
        document: Any = None,
        credential_id: Optional[str] = None,
        at: Optional[Instant] = None,
    ) -> VerifyResponse:
        """
        Проверка документа целиком или статуса по идентификатору.
        По идентификатору сроки не проверяются, зато прикладывается
        доказательство включения в заякоренный корень.
        """
        now = self._now(at)
        state = self.state
        checked_at = format_instant(now)
        if credential_id is not None:
            status = credential_status(state, credential_id)
            return VerifyResponse(
                status,
                credential_id,
                checked_at,
                self._anchor_proof(state, credential_id),
            )
        if isinstance(document, (bytes, str)):
            try:
                document = validate_document(document)
            except (MalformedJsonError, SchemaViolationError):
                return VerifyResponse(VerificationOutcome.MALFORMED, None, checked_at)
        status = verify_credential(state, document, now)
        return VerifyResponse(status, _credential_id_of(document), checked_at)

    def _anchor_proof(self, state: LedgerState, credential_id: str) -> dict:
        anchor = self.anchors.latest()
        index = None
        if anchor is not None and anchor.private_height == state.height:
            index = anchor.anchor_index
        return build_inclusion_proof(state, credential_id, index).to_dict()

    # ---------- отзыв ----------
    @log_action("REVOKE")
    def revoke(
        self, credential_id: str, actor: str, reason: Optional[str] = None
    ) -> Dict[str, Any]:
        """Идемпотентный отзыв: повтор возвращает alreadyRevoked=True."""
        state = self.state
        if credential_id not in state.credentials:
            raise UnknownCredentialError(credential_id)
        key = revocation_key(credential_id)
        if is_revoked(state, key):
            return {"credentialId": credential_id, "alreadyRevoked": True}
        payload = {"revocationKey": key.hex()}
        if reason:
            payload["reason"] = reason
        tx = build_transaction(
            TxKind.REVOKE, actor, payload, self._sender_key(actor), rng=self.rng
        )
        try:
            tx_id = self._submit(tx)
        except TransactionRejectedError as e:
            # параллельный отзыв успел раньше
            if e.reason is RejectReason.ALREADY_REVOKED:
                return {"credentialId": credential_id, "alreadyRevoked": True}
            raise
        event = _event_of(self.state, tx_id, EventName.CERTIFICATE_REVOKED)
        return {
            "credentialId": credential_id,
            "alreadyRevoked": False,
            "txId": tx_id,
            "eventId": event.sequence if event else None,
        }

    # ---------- согласие и право на забвение ----------
    @log_action("CONSENT")
    def consent(self, action: str, actor: str) -> Dict[str, Any]:
        kind = CONSENT_ACTIONS.get(str(action).lower())
        if kind is None:
            raise SchemaViolationError(
                [Violation("/action", "enum", "ожидалось give, withdraw или delete")]
            )
        tx = build_transaction(
            kind, actor, {"subject": actor}, self._sender_key(actor), rng=self.rng
        )
        tx_id = self._submit(tx)
        return {
            "action": str(action).lower(),
            "subject": actor,
            "consentGiven": self.state.consent.get(actor, False),
            "txId": tx_id,
        }

    # ---------- администрирование ----------
    @log_action("GRANT")
    def grant(self, user: str, permission_bits: int, actor: str) -> Dict[str, Any]:
        tx = build_transaction(
            TxKind.SET_PERMISSIONS,
            actor,
            {"user": user, "permissionBits": int(permission_bits)},
            self._sender_key(actor),
            rng=self.rng,
        )
        return {
            "user": user,
            "permissionBits": int(permission_bits),
            "txId": self._submit(tx),
        }

    @log_action("REGISTER_KEY")
    def register_key(self, record: KeyRecord, actor: str) -> Dict[str, Any]:
        tx = build_transaction(
            TxKind.REGISTER_KEY,
            actor,
            record.to_dict(),
            self._sender_key(actor),
            rng=self.rng,
        )
        return {"keyId": record.key_id, "owner": record.owner, "txId": self._submit(tx)}

    @log_action("KEYGEN")
    def create_key(
        self,
        algorithm: Union[str, ProofType],
        key_id: str,
        owner: Optional[str] = None,
        register: bool = False,
        permissions: Optional[int] = None,
        issuer_uri: Optional[str] = None,
        actor: Optional[str] = None,
    ) -> KeyPair:
        """
        Новая пара ключей в хранилище; при register также регистрация в реестре
        от имени администратора и, если заданы, выдача прав владельцу.
        """
        owner = owner or owner_of_key_id(key_id)
        key = self.keystore.generate(ProofType.parse(algorithm), key_id, owner=owner)
        if register:
            if owner is None:
                raise ConfigError(f"для регистрации ключа '{key_id}' нужен --owner")
            admin = actor or self.config.admin_did
            self.register_key(
                KeyRecord(key.key_id, owner, key.algorithm, key.public_key, issuer_uri),
                actor=admin,
            )
            if permissions is not None:
                self.grant(owner, permissions, actor=admin)
        return key

    # ---------- запросы ----------
    def audit(
        self,
        event_name: Optional[str] = None,
        subject: Optional[str] = None,
        from_height: Optional[int] = None,
        to_height: Optional[int] = None,
        limit: Optional[int] = None,
    ) -> List[AuditEvent]:
        return audit_query(
            self.state, event_name, subject, from_height, to_height, limit
        )

    def my_credentials(self, subject: str) -> List[Dict[str, Any]]:
        """Право доступа: записи субъекта и, пока не стёрта, расшифрованная копия."""
        state = self.state
        out = []
        for record in credentials_of(state, subject):
            item = record.to_dict()
            item["revoked"] = is_revoked(state, revocation_key(record.credential_id))
            item["erased"] = self.store.is_erased(address_of(record))
            try:
                item["document"] = self.fetch_document(record).to_dict()
            except (NotFoundError, UnknownPointerError):
                item["document"] = None
            out.append(item)
        return out

    def did_document(self, did: str) -> Optional[dict]:
        return did_document(self.state, did)

    def anchor(self, index: int) -> Optional[PublicAnchor]:
        return self.anchors.get(index)

    def anchor_proof(self, credential_id: str) -> Dict[str, Any]:
        """Доказательство включения и его проверка по последнему якорю."""
        state = self.state
        if credential_id not in state.credentials:
            raise UnknownCredentialError(credential_id)
        proof = self._anchor_proof(state, credential_id)
        record = state.credentials[credential_id]
        claimed = ClaimedStatus(
            record.doc_hash, is_revoked(state, revocation_key(credential_id))
        )
        anchor = self.anchors.latest()
        verified = False
        if anchor is not None and proof["anchorIndex"] is not None:
            verified = verify_with_anchor(
                InclusionProof.from_dict(proof), claimed, anchor
            )
        return {
            "proof": proof,
            "claimed": {"docHash": claimed.doc_hash.hex(), "revoked": claimed.revoked},
            "anchor": anchor.to_dict() if anchor else None,
            "verified": verified,
        }


def _credential_id_of(document: Any) -> Optional[str]:
    if isinstance(document, CredentialDocument):
        return document.id
    if isinstance(document, dict):
        try:
            return validate_document_dict(document).id
        except (MalformedJsonError, SchemaViolationError):
            value = document.get("id")
            return value if isinstance(value, str) else None
    return None


def _event_of(state: LedgerState, tx_id: str, name: EventName) -> Optional[AuditEvent]:
    for event in reversed(state.audit_log):
        if event.tx_id == tx_id and event.event_name is name:
            return event
    return None
