"""
Модель академического удостоверения: идентификаторы, разбор и проверка
по схеме, каноническая сериализация для подписи, срок действия.
"""

import json
import secrets
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional
from urllib.parse import urlparse

from jsonschema import Draft7Validator

from .exceptions import MalformedJsonError, SchemaViolationError
from .models import SIGNATURE_LENGTH, Proof
from .utils import (
    DID_RE,
    UUID4_RE,
    Instant,
    b64decode,
    canonical_json,
    is_did,
    is_uuid4,
    parse_instant,
    sha256,
)

_SYSTEM_RNG = secrets.SystemRandom()

DEFAULT_CONTEXT = "https://schema.org"
VC_CONTEXT = "https://www.w3.org/2018/credentials/v1"
SUBJECT_KEYS = ("degree", "course")

DOCUMENT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "@context": {"type": "string", "minLength": 1},
        "@type": {"type": "string", "minLength": 1},
        "id": {"type": "string", "pattern": UUID4_RE.pattern},
        "externalId": {"type": "string", "minLength": 1},
        "issuer": {"type": "string", "minLength": 1},
        "recipient": {
            "type": "object",
            "properties": {
                "id": {"type": "string", "pattern": DID_RE.pattern},
                "name": {"type": "string"},
                "type": {"type": "string"},
            },
            "required": ["id"],
            "additionalProperties": False,
        },
        "credentialSubject": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {"type": "string"},
        },
        "issueDate": {"type": "string", "minLength": 1},
        "expirationDate": {"type": "string", "minLength": 1},
        "proof": {
            "type": "object",
            "properties": {
                "type": {"enum": ["ES256", "Ed25519"]},
                "created": {"type": "string"},
                "verificationMethod": {"type": "string", "minLength": 1},
                "signatureValue": {"type": "string"},
            },
            "required": ["type", "created", "verificationMethod", "signatureValue"],
            "additionalProperties": False,
        },
    },
    "required": [
        "@context",
        "@type",
        "issuer",
        "recipient",
        "credentialSubject",
        "issueDate",
    ],
    "additionalProperties": False,
}

# Схема тела запроса POST /issueCredential
ISSUE_REQUEST_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "issuer": {"type": "string", "minLength": 1},
        "recipient": {
            "type": "object",
            "properties": {"name": {"type": "string"}, "id": {"type": "string"}},
            "required": ["id"],
        },
        "credential": {
            "type": "object",
            "properties": {"type": {"type": "string"}, "course": {"type": "string"}},
            "required": ["type", "course"],
            "additionalProperties": {"type": "string"},
        },
        "expirationDate": {"type": "string"},
    },
    "required": ["issuer", "recipient", "credential"],
}

_DOCUMENT_VALIDATOR = Draft7Validator(DOCUMENT_SCHEMA)
_ISSUE_REQUEST_VALIDATOR = Draft7Validator(ISSUE_REQUEST_SCHEMA)

_REASONS = {
    "required": "required",
    "type": "type",
    "pattern": "format",
    "enum": "enum",
    "additionalProperties": "unknown",
    "minLength": "empty",
    "minProperties": "empty",
}


class ValidityStatus(str, Enum):
    VALID = "Valid"
    NOT_YET_VALID = "NotYetValid"
    EXPIRED = "Expired"


@dataclass(frozen=True)
class Violation:
    """Нарушение схемы: JSON-pointer поля и машинно-читаемая причина."""

    path: str
    reason: str
    message: str = ""

    def to_dict(self) -> dict:
        return {"path": self.path, "reason": self.reason, "message": self.message}


@dataclass(frozen=True)
class Recipient:
    id: str
    name: Optional[str] = None
    type: Optional[str] = None

    def to_dict(self) -> dict:
        data = {"id": self.id}
        if self.name is not None:
            data["name"] = self.name
        if self.type is not None:
            data["type"] = self.type
        return data


@dataclass(frozen=True)
class CredentialDocument:
    """Удостоверение в именах полей метаданных (JSON-LD форма)."""

    context: str
    type: str
    issuer: str
    recipient: Recipient
    credential_subject: Dict[str, str]
    issue_date: str
    id: Optional[str] = None
    expiration_date: Optional[str] = None
    external_id: Optional[str] = None
    proof: Optional[Proof] = field(default=None, compare=True)

    def to_dict(self, include_proof: bool = True) -> dict:
        data: Dict[str, Any] = {
            "@context": self.context,
            "@type": self.type,
            "issuer": self.issuer,
            "recipient": self.recipient.to_dict(),
            "credentialSubject": dict(self.credential_subject),
            "issueDate": self.issue_date,
        }
        if self.id is not None:
            data["id"] = self.id
        if self.external_id is not None:
            data["externalId"] = self.external_id
        if self.expiration_date is not None:
            data["expirationDate"] = self.expiration_date
        if include_proof and self.proof is not None:
            data["proof"] = self.proof.to_dict()
        return data

    def with_proof(self, proof: Optional[Proof]) -> "CredentialDocument":
        return replace(self, proof=proof)

    def with_id(self, credential_id: str) -> "CredentialDocument":
        return replace(self, id=credential_id)


# ---------- Идентификаторы ----------
def generate_credential_id(rng=None) -> str:
    """
    UUIDv4 из переданного генератора (random.Random для тестов).
    Издатель и время привязываются подписью документа, а не кодируются в id.
    """
    rng = rng or _SYSTEM_RNG
    raw = rng.getrandbits(128).to_bytes(16, "big")
    return str(uuid.UUID(bytes=raw, version=4))


# ---------- Разбор и проверка ----------
def validate_document(raw: bytes) -> CredentialDocument:
    """
    Разбирает JSON-текст удостоверения. Возвращает документ или поднимает
    SchemaViolationError со списком всех нарушений.
    """
    return validate_document_dict(_load_json_object(raw))


def validate_document_dict(obj: Any) -> CredentialDocument:
    if not isinstance(obj, dict):
        raise MalformedJsonError("ожидался JSON-объект")
    native = normalize_aliases(obj)
    violations = _schema_violations(_DOCUMENT_VALIDATOR, native)
    violations.extend(_semantic_violations(native, violations))
    if violations:
        raise SchemaViolationError(violations)
    return _build(native)


def validate_issue_request(obj: Any) -> List[Violation]:
    """Проверка тела запроса на выпуск по схеме draft-07."""
    if not isinstance(obj, dict):
        return [Violation("/", "type", "ожидался JSON-объект")]
    violations = _schema_violations(_ISSUE_REQUEST_VALIDATOR, obj)
    recipient = obj.get("recipient")
    if isinstance(recipient, dict) and isinstance(recipient.get("id"), str):
        if not is_did(recipient["id"]):
            violations.append(Violation("/recipient/id", "format", "ожидался DID"))
    return violations


def _load_json_object(raw: bytes) -> Any:
    if isinstance(raw, str):
        raw = raw.encode("utf-8")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedJsonError(f"не UTF-8: {e}")
    try:
        return json.loads(text, parse_float=_reject_float)
    except (json.JSONDecodeError, ValueError) as e:
        raise MalformedJsonError(str(e))


def _reject_float(text: str):
    raise ValueError(f"числа с плавающей точкой не допускаются: {text}")


def normalize_aliases(obj: dict) -> dict:
    """
    Приводит имена полей Verifiable Credential к именам метаданных:
    type→@type, issuanceDate→issueDate, signature→proof,
    credentialSubject.id→recipient.id. Исходный объект не изменяется.
    """
    data = dict(obj)
    is_vc = (
        "issuanceDate" in data
        or isinstance(data.get("type"), list)
        or isinstance(data.get("@context"), list)
        or (
            "recipient" not in data
            and isinstance(data.get("credentialSubject"), dict)
            and "id" in data["credentialSubject"]
        )
    )

    if "@type" not in data and "type" in data:
        value = data.pop("type")
        if isinstance(value, list) and value and all(isinstance(v, str) for v in value):
            value = value[-1]
        data["@type"] = value
    if isinstance(data.get("@context"), list) and data["@context"]:
        data["@context"] = data["@context"][0]
    if "issueDate" not in data and "issuanceDate" in data:
        data["issueDate"] = data.pop("issuanceDate")
    if "proof" not in data and "signature" in data:
        data["proof"] = data.pop("signature")
    if isinstance(data.get("issuer"), dict) and "id" in data["issuer"]:
        data["issuer"] = data["issuer"]["id"]

    subject = data.get("credentialSubject")
    if "recipient" not in data and isinstance(subject, dict) and "id" in subject:
        subject = dict(subject)
        data["recipient"] = {"id": subject.pop("id")}
        data["credentialSubject"] = subject

    if "id" in data and isinstance(data["id"], str):
        ident = data["id"]
        if ident.startswith("urn:uuid:") and is_uuid4(ident[len("urn:uuid:"):]):
            data["id"] = ident[len("urn:uuid:"):]
        elif is_vc and not is_uuid4(ident) and "externalId" not in data:
            data["externalId"] = data.pop("id")
    return data


def _schema_violations(validator: Draft7Validator, instance: dict) -> List[Violation]:
    seen = set()
    violations: List[Violation] = []

    def add(path: str, reason: str, message: str):
        if (path, reason) not in seen:
            seen.add((path, reason))
            violations.append(Violation(path, reason, message))

    for error in validator.iter_errors(instance):
        base = "/" + "/".join(str(p) for p in error.absolute_path)
        base = base.rstrip("/") if base != "/" else ""
        reason = _REASONS.get(error.validator, error.validator)
        if error.validator == "required":
            for prop in error.validator_value:
                if isinstance(error.instance, dict) and prop not in error.instance:
                    add(f"{base}/{prop}", "required", f"поле '{prop}' обязательно")
        elif error.validator == "additionalProperties" and isinstance(
            error.instance, dict
        ):
            known = error.schema.get("properties", {})
            for prop in error.instance:
                if prop not in known:
                    add(f"{base}/{prop}", "unknown", f"неизвестное поле '{prop}'")
        else:
            add(base or "/", reason, error.message)
    violations.sort(key=lambda v: (v.path, v.reason))
    return violations


def _semantic_violations(data: dict, found: List[Violation]) -> List[Violation]:
    """Проверки, которые не выражаются схемой: URI, даты, длина подписи."""
    bad_paths = {v.path for v in found}
    out: List[Violation] = []

    issuer = data.get("issuer")
    if isinstance(issuer, str) and "/issuer" not in bad_paths:
        if not (is_did(issuer) or _is_absolute_uri(issuer)):
            out.append(
                Violation("/issuer", "format", "ожидался абсолютный URI или DID")
            )

    subject = data.get("credentialSubject")
    if isinstance(subject, dict) and "/credentialSubject" not in bad_paths:
        if not any(k in subject for k in SUBJECT_KEYS):
            out.append(
                Violation(
                    "/credentialSubject/degree",
                    "required",
                    "нужно поле 'degree' или 'course'",
                )
            )

    moments = {}
    for key in ("issueDate", "expirationDate"):
        value = data.get(key)
        if isinstance(value, str) and f"/{key}" not in bad_paths:
            try:
                moments[key] = parse_instant(value)
            except ValueError:
                out.append(Violation(f"/{key}", "format", "ожидалась дата ISO-8601"))
    if len(moments) == 2 and moments["issueDate"] >= moments["expirationDate"]:
        out.append(
            Violation(
                "/expirationDate", "order", "expirationDate должна быть позже issueDate"
            )
        )

    proof = data.get("proof")
    if isinstance(proof, dict):
        value = proof.get("signatureValue")
        if isinstance(value, str) and "/proof/signatureValue" not in bad_paths:
            try:
                if len(b64decode(value)) != SIGNATURE_LENGTH:
                    raise ValueError("длина")
            except ValueError:
                out.append(
                    Violation(
                        "/proof/signatureValue",
                        "format",
                        f"ожидалось {SIGNATURE_LENGTH} байт в base64",
                    )
                )
        created = proof.get("created")
        if isinstance(created, str) and "/proof/created" not in bad_paths:
            try:
                parse_instant(created)
            except ValueError:
                out.append(
                    Violation("/proof/created", "format", "ожидалось время ISO-8601")
                )
    return out


def _is_absolute_uri(value: str) -> bool:
    parsed = urlparse(value)
    return bool(parsed.scheme) and bool(parsed.netloc or parsed.path)


def _build(data: dict) -> CredentialDocument:
    recipient = data["recipient"]
    proof = Proof.from_dict(data["proof"]) if "proof" in data else None
    return CredentialDocument(
        context=data["@context"],
        type=data["@type"],
        issuer=data["issuer"],
        recipient=Recipient(
            id=recipient["id"], name=recipient.get("name"), type=recipient.get("type")
        ),
        credential_subject=dict(data["credentialSubject"]),
        issue_date=data["issueDate"],
        id=data.get("id"),
        expiration_date=data.get("expirationDate"),
        external_id=data.get("externalId"),
        proof=proof,
    )


# ---------- Сериализация ----------
def canonicalize(doc: CredentialDocument, exclude_proof: bool = False) -> bytes:
    """Канонические байты документа; при exclude_proof без поля proof."""
    return canonical_json(doc.to_dict(include_proof=not exclude_proof))


def serialize_document(doc: CredentialDocument, pretty: bool = True) -> bytes:
    if not pretty:
        return canonicalize(doc)
    return json.dumps(
        doc.to_dict(), indent=2, sort_keys=True, ensure_ascii=False
    ).encode("utf-8")


def document_hash(doc: CredentialDocument) -> bytes:
    """SHA-256 канонической формы вместе с подписью."""
    return sha256(canonicalize(doc))


def to_verifiable_credential(doc: CredentialDocument) -> dict:
    """Представление в именах полей W3C Verifiable Credential."""
    subject = {"id": doc.recipient.id}
    subject.update(doc.credential_subject)
    data: Dict[str, Any] = {
        "@context": VC_CONTEXT,
        "type": ["VerifiableCredential", doc.type],
        "issuer": doc.issuer,
        "issuanceDate": doc.issue_date,
        "credentialSubject": subject,
    }
    if doc.id is not None:
        data["id"] = f"urn:uuid:{doc.id}"
    elif doc.external_id is not None:
        data["id"] = doc.external_id
    if doc.expiration_date is not None:
        data["expirationDate"] = doc.expiration_date
    if doc.proof is not None:
        data["proof"] = doc.proof.to_dict()
    return data


# ---------- Срок действия ----------
def temporal_status(doc: CredentialDocument, now: Instant) -> ValidityStatus:
    """Полуоткрытый интервал [issueDate, expirationDate)."""
    moment = parse_instant(now)
    if moment < parse_instant(doc.issue_date):
        return ValidityStatus.NOT_YET_VALID
    if doc.expiration_date is not None and moment >= parse_instant(doc.expiration_date):
        return ValidityStatus.EXPIRED
    return ValidityStatus.VALID


def build_credential(
    issuer: str,
    recipient: Recipient,
    subject: Dict[str, str],
    credential_type: str,
    issue_date: str,
    expiration_date: Optional[str] = None,
    credential_id: Optional[str] = None,
    context: str = DEFAULT_CONTEXT,
) -> CredentialDocument:
    """Собирает неподписанный документ и прогоняет его через проверку схемы."""
    doc = CredentialDocument(
        context=context,
        type=credential_type,
        issuer=issuer,
        recipient=recipient,
        credential_subject=dict(subject),
        issue_date=issue_date,
        id=credential_id,
        expiration_date=expiration_date,
    )
    return validate_document_dict(doc.to_dict())


def date_of(moment: datetime) -> str:
    return parse_instant(moment).date().isoformat()
