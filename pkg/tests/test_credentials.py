import json
import random
from datetime import date, timedelta

import pytest

from credential_hub.core.credentials import (
    Recipient,
    ValidityStatus,
    build_credential,
    canonicalize,
    document_hash,
    generate_credential_id,
    serialize_document,
    temporal_status,
    to_verifiable_credential,
    validate_document,
    validate_document_dict,
    validate_issue_request,
)
from credential_hub.core.crypto import generate_keypair, sign
from credential_hub.core.exceptions import MalformedJsonError, SchemaViolationError
from credential_hub.core.models import ProofType
from credential_hub.core.utils import canonical_json, is_did, is_uuid4

METADATA = {
    "@context": "https://schema.org",
    "@type": "EducationalOccupationalCredential",
    "issuer": "https://university.example.edu",
    "recipient": {
        "type": "Person",
        "id": "did:example:abcdef",
        "name": "Juan Pérez",
    },
    "credentialSubject": {"degree": "MSc Computer Science"},
    "issueDate": "2021-05-01",
    "expirationDate": "2026-05-01",
}

VERIFIABLE_CREDENTIAL = {
    "@context": ["https://www.w3.org/2018/credentials/v1"],
    "id": "did:example:123",
    "type": ["VerifiableCredential"],
    "issuer": "did:example:456",
    "issuanceDate": "2020-04-22T11:52:25Z",
    "credentialSubject": {
        "id": "did:example:789",
        "degree": "Bachelor of Science in Blockchain Technology",
    },
}


def _violations(obj):
    with pytest.raises(SchemaViolationError) as info:
        validate_document_dict(obj)
    return {(v.path, v.reason) for v in info.value.violations}


def test_metadata_example_parses():
    doc = validate_document(json.dumps(METADATA).encode("utf-8"))
    assert doc.type == "EducationalOccupationalCredential"
    assert doc.recipient.name == "Juan Pérez"
    assert doc.recipient.type == "Person"
    assert doc.credential_subject == {"degree": "MSc Computer Science"}
    assert doc.id is None and doc.proof is None


def test_verifiable_credential_aliases():
    doc = validate_document_dict(VERIFIABLE_CREDENTIAL)
    assert doc.external_id == "did:example:123"
    assert doc.id is None
    assert doc.type == "VerifiableCredential"
    assert doc.issue_date == "2020-04-22T11:52:25Z"
    assert doc.recipient.id == "did:example:789"
    assert doc.credential_subject == {
        "degree": "Bachelor of Science in Blockchain Technology"
    }


def test_all_violations_are_reported():
    broken = dict(METADATA)
    del broken["issuer"]
    broken["issueDate"] = "yesterday"
    broken["recipient"] = {"id": "not-a-did"}
    broken["extra"] = "x"
    found = _violations(broken)
    assert ("/issuer", "required") in found
    assert ("/issueDate", "format") in found
    assert ("/recipient/id", "format") in found
    assert ("/extra", "unknown") in found


def test_expiration_must_follow_issue_date():
    broken = dict(METADATA, expirationDate="2021-05-01")
    assert ("/expirationDate", "order") in _violations(broken)


def test_subject_needs_degree_or_course():
    broken = dict(METADATA, credentialSubject={"grade": "A"})
    assert ("/credentialSubject/degree", "required") in _violations(broken)


def test_issuer_must_be_uri_or_did():
    assert ("/issuer", "format") in _violations(dict(METADATA, issuer="university"))


def test_malformed_bytes():
    with pytest.raises(MalformedJsonError):
        validate_document(b"{not json")
    with pytest.raises(MalformedJsonError):
        validate_document(b"\xff\xfe")
    with pytest.raises(MalformedJsonError):
        validate_document(b'{"score": 1.5}')
    with pytest.raises(MalformedJsonError):
        validate_document_dict([1, 2])


def test_canonical_json_sorts_keys_and_rejects_floats():
    assert canonical_json({"b": 1, "a": {"d": 2, "c": "é"}}) == (
        '{"a":{"c":"é","d":2},"b":1}'.encode("utf-8")
    )
    with pytest.raises(TypeError):
        canonical_json({"x": 0.1})


def test_canonical_form_is_stable_across_key_order():
    reordered = dict(reversed(list(METADATA.items())))
    first = validate_document_dict(METADATA)
    second = validate_document_dict(reordered)
    assert canonicalize(first) == canonicalize(second)
    assert document_hash(first) == document_hash(second)
    assert b"proof" not in canonicalize(first, exclude_proof=True)


def test_serialize_round_trip_preserves_document():
    doc = validate_document_dict(METADATA)
    assert validate_document(serialize_document(doc)) == doc
    assert validate_document(serialize_document(doc, pretty=False)) == doc


def _random_document(rng):
    letters = "abcdefghijklmnopqrstuvwxyzéüñжёщ日本 "

    def text():
        size = rng.randint(1, 24)
        return "".join(rng.choice(letters) for _ in range(size)).strip() or "x"

    issued = date(2000, 1, 1) + timedelta(days=rng.randint(0, 10_000))
    expiration = None
    if rng.random() < 0.7:
        expiration = (issued + timedelta(days=rng.randint(1, 3_000))).isoformat()
    subject = {rng.choice(("degree", "course")): text()}
    for _ in range(rng.randint(0, 3)):
        subject[text().replace(" ", "_")] = text()
    recipient = Recipient(
        f"did:example:{rng.getrandbits(48):x}",
        text() if rng.random() < 0.8 else None,
        "Person" if rng.random() < 0.5 else None,
    )
    doc = build_credential(
        issuer=rng.choice(("https://university.example.edu", "did:example:456")),
        recipient=recipient,
        subject=subject,
        credential_type=rng.choice(("Diploma", "Certificate", "Transcript")),
        issue_date=issued.isoformat(),
        expiration_date=expiration,
        credential_id=generate_credential_id(rng),
    )
    if rng.random() < 0.5:
        key = generate_keypair(rng.choice(list(ProofType)), rng=rng, key_id="k-1")
        message = canonicalize(doc, exclude_proof=True)
        doc = doc.with_proof(sign(message, key, created="2021-05-01T00:00:00Z"))
    return doc


def test_generated_documents_round_trip():
    rng = random.Random(2021)
    for _ in range(300):
        doc = _random_document(rng)
        assert validate_document(serialize_document(doc)) == doc
        parsed = validate_document(serialize_document(doc, pretty=False))
        assert canonicalize(parsed) == canonicalize(doc)
        assert document_hash(parsed) == document_hash(doc)


def test_temporal_status_is_half_open():
    doc = validate_document_dict(METADATA)
    assert temporal_status(doc, "2021-04-30T23:59:59Z") is ValidityStatus.NOT_YET_VALID
    assert temporal_status(doc, "2021-05-01") is ValidityStatus.VALID
    assert temporal_status(doc, "2026-04-30T23:59:59Z") is ValidityStatus.VALID
    assert temporal_status(doc, "2026-05-01T00:00:00Z") is ValidityStatus.EXPIRED


def test_credential_ids_are_uuid4_and_seedable():
    first = generate_credential_id(random.Random(3))
    assert is_uuid4(first)
    assert first == generate_credential_id(random.Random(3))
    assert len({generate_credential_id() for _ in range(100_000)}) == 100_000


def test_trailing_newline_is_not_an_identifier():
    credential_id = generate_credential_id(random.Random(3))
    assert not is_uuid4(credential_id + "\n")
    assert is_did("did:example:123") and not is_did("did:example:123\n")
    with pytest.raises(SchemaViolationError):
        validate_document_dict({**METADATA, "id": credential_id + "\n"})
    recipient = {**METADATA["recipient"], "id": "did:example:abcdef\n"}
    found = _violations({**METADATA, "recipient": recipient})
    assert ("/recipient/id", "format") in found


def test_build_credential_and_vc_view():
    credential_id = generate_credential_id(random.Random(5))
    doc = build_credential(
        issuer="https://university.example.edu",
        recipient=Recipient("did:example:123", "John Doe"),
        subject={"course": "BSc Computer Science"},
        credential_type="Diploma",
        issue_date="2021-06-01",
        expiration_date="2026-05-31",
        credential_id=credential_id,
    )
    vc = to_verifiable_credential(doc)
    assert vc["id"] == f"urn:uuid:{credential_id}"
    assert vc["type"] == ["VerifiableCredential", "Diploma"]
    assert vc["credentialSubject"]["id"] == "did:example:123"
    assert validate_document_dict(vc).id == credential_id


def test_issue_request_schema():
    good = {
        "issuer": "https://university.example.edu",
        "recipient": {"name": "John Doe", "id": "did:example:123"},
        "credential": {"type": "Diploma", "course": "BSc Computer Science"},
    }
    assert validate_issue_request(good) == []

    missing = {"issuer": "x", "recipient": {"id": "nope"}, "credential": {}}
    found = {(v.path, v.reason) for v in validate_issue_request(missing)}
    assert ("/credential/type", "required") in found
    assert ("/credential/course", "required") in found
    assert ("/recipient/id", "format") in found
    assert validate_issue_request("text")[0].reason == "type"
