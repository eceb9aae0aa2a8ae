import random

import pytest

from credential_hub.core.crypto import generate_keypair
from credential_hub.core.exceptions import MalformedTokenError
from credential_hub.core.ledger import ROLE_PERMISSIONS, RejectReason
from credential_hub.core.models import ProofType
from credential_hub.gateway.app import create_app, rejection_status
from credential_hub.gateway.auth import authenticate, mint_token, resolve_subject

from .conftest import ISSUE_BODY, ISSUER_URI, STUDENT_DID

ISSUER_SUB = "issuer123"
ISSUER_KEY = "did:bacip:issuer123#key-1"


@pytest.fixture
def gateway(service):
    """Клиент Flask, издатель issuer123 и студент, оба с ключами ES256."""
    issuer = service.create_key(
        "ES256",
        ISSUER_KEY,
        register=True,
        permissions=int(ROLE_PERMISSIONS["Issuer"]),
        issuer_uri=ISSUER_URI,
    )
    student = service.create_key(
        "ES256", f"{STUDENT_DID}#key-1", register=True, permissions=0
    )
    app = create_app(service)
    app.testing = True
    return app.test_client(), issuer, student


def _now(service) -> int:
    return int(service.clock().timestamp())


def _bearer(token: str) -> dict:
    return {"Authorization": f"Bearer {token}"}


def _issuer_token(service, issuer, **claims) -> str:
    claims.setdefault("iat", _now(service))
    return mint_token(issuer, ISSUER_SUB, "Issuer", name="Issuer", **claims)


def _student_token(service, student) -> str:
    return mint_token(student, STUDENT_DID, "Student", iat=_now(service))


def _issue(client, service, issuer):
    response = client.post(
        "/issueCredential",
        json=ISSUE_BODY,
        headers=_bearer(_issuer_token(service, issuer)),
    )
    assert response.status_code == 201
    return response


def test_missing_token(service, gateway):
    client, _, _ = gateway
    response = client.post("/issueCredential", json=ISSUE_BODY)
    assert response.status_code == 401
    assert response.get_json()["error"] == "missing_token"


@pytest.mark.parametrize("token", ["abc", "a.b.c", "only.two"])
def test_malformed_token(service, gateway, token):
    client, _, _ = gateway
    response = client.post("/issueCredential", json=ISSUE_BODY, headers=_bearer(token))
    assert response.status_code == 401
    assert response.get_json()["error"] == "malformed_token"


def test_foreign_signature(service, gateway):
    client, _, _ = gateway
    impostor = generate_keypair(ProofType.ES256, random.Random(7), key_id=ISSUER_KEY)
    response = client.post(
        "/issueCredential",
        json=ISSUE_BODY,
        headers=_bearer(_issuer_token(service, impostor)),
    )
    assert response.status_code == 401
    assert response.get_json()["error"] == "bad_signature"


def test_expired_token(service, gateway):
    client, issuer, _ = gateway
    stale = _issuer_token(service, issuer, iat=_now(service) - 7200)
    response = client.post("/issueCredential", json=ISSUE_BODY, headers=_bearer(stale))
    assert response.status_code == 401
    assert response.get_json()["error"] == "expired"

    now = _now(service)
    fresh = _issuer_token(service, issuer, iat=now - 7200, exp=now + 60)
    assert client.get("/audit", headers=_bearer(fresh)).status_code == 200


def test_unknown_subject(service, gateway):
    client, _, student = gateway
    token = mint_token(student, "ghost", "Verifier", iat=_now(service))
    response = client.get("/audit", headers=_bearer(token))
    assert response.status_code == 401
    assert response.get_json()["error"] == "unknown_subject"


def test_student_cannot_issue(service, gateway):
    client, _, student = gateway
    response = client.post(
        "/issueCredential",
        json=ISSUE_BODY,
        headers=_bearer(_student_token(service, student)),
    )
    assert response.status_code == 403
    assert response.get_json()["error"] == "forbidden"


def test_issue_and_verify(service, gateway):
    client, issuer, _ = gateway
    response = _issue(client, service, issuer)
    document = response.get_json()
    assert response.headers["X-Transaction-Id"]
    assert document["issuer"] == ISSUER_URI
    assert document["proof"]["verificationMethod"] == ISSUER_KEY

    verified = client.post("/verifyCredential", json=document)
    assert verified.status_code == 200
    assert verified.get_json()["status"] == "valid"

    by_id = client.post("/verifyCredential", json={"credentialId": document["id"]})
    body = by_id.get_json()
    assert body["status"] == "valid" and "anchorProof" in body

    unknown = client.post(
        "/verifyCredential",
        json={"credentialId": "00000000-0000-4000-8000-000000000000"},
    )
    assert unknown.status_code == 404

    tampered = dict(document, **{"@type": "PhD"})
    assert client.post("/verifyCredential", json=tampered).get_json()["status"] == (
        "invalid_signature"
    )


def test_issue_body_errors(service, gateway):
    client, issuer, _ = gateway
    headers = _bearer(_issuer_token(service, issuer))
    response = client.post("/issueCredential", data="not json", headers=headers)
    assert response.status_code == 400
    assert response.get_json()["error"] == "malformed_body"

    response = client.post(
        "/issueCredential", json={"issuer": ISSUER_URI}, headers=headers
    )
    assert response.status_code == 400
    paths = [v["path"] for v in response.get_json()["violations"]]
    assert "/recipient" in paths and "/credential" in paths


def test_revoke_twice(service, gateway):
    client, issuer, _ = gateway
    credential_id = _issue(client, service, issuer).get_json()["id"]
    headers = _bearer(_issuer_token(service, issuer))

    first = client.post(
        "/revokeCredential",
        json={"credentialId": credential_id, "reason": "fraud"},
        headers=headers,
    )
    assert first.status_code == 200
    assert first.get_json()["alreadyRevoked"] is False
    assert first.headers["X-Transaction-Id"] == first.get_json()["txId"]

    second = client.post(
        "/revokeCredential", json={"credentialId": credential_id}, headers=headers
    )
    assert second.status_code == 200
    assert second.get_json()["alreadyRevoked"] is True
    assert "X-Transaction-Id" not in second.headers

    status = client.post("/verifyCredential", json={"credentialId": credential_id})
    assert status.get_json()["status"] == "revoked"


def test_consent_and_own_credentials(service, gateway):
    client, issuer, student = gateway
    _issue(client, service, issuer)
    headers = _bearer(_student_token(service, student))

    given = client.post("/consent", json={"action": "give"}, headers=headers)
    assert given.status_code == 200
    assert given.get_json()["consentGiven"] is True

    premature = client.post("/consent", json={"action": "delete"}, headers=headers)
    assert premature.status_code == 409
    assert premature.get_json()["reason"] == "ConsentStillGiven"

    mine = client.get("/subjects/me/credentials", headers=headers).get_json()
    assert mine["subject"] == STUDENT_DID
    assert mine["credentials"][0]["document"]["recipient"]["name"] == "John Doe"

    client.post("/consent", json={"action": "withdraw"}, headers=headers)
    erased = client.post("/consent", json={"action": "delete"}, headers=headers)
    assert erased.status_code == 200
    mine = client.get("/subjects/me/credentials", headers=headers).get_json()
    assert mine["credentials"][0]["document"] is None


def test_audit_requires_verify(service, gateway):
    client, issuer, student = gateway
    _issue(client, service, issuer)
    denied = client.get("/audit", headers=_bearer(_student_token(service, student)))
    assert denied.status_code == 403

    headers = _bearer(_issuer_token(service, issuer))
    events = client.get("/audit?limit=2", headers=headers).get_json()["events"]
    assert len(events) == 2
    issued = client.get("/audit?eventName=CredentialIssued", headers=headers)
    assert [e["eventName"] for e in issued.get_json()["events"]] == [
        "CredentialIssued"
    ]
    bad = client.get("/audit?eventName=Nonsense", headers=headers)
    assert bad.status_code == 400


def test_public_lookups(service, gateway):
    client, _, _ = gateway
    anchor = client.get("/anchors/0")
    assert anchor.status_code == 200
    assert anchor.get_json()["anchorIndex"] == 0
    assert client.get("/anchors/999").status_code == 404

    did = client.get("/did/did:bacip:issuer123").get_json()
    assert did["verificationMethod"][0]["type"] == "JsonWebKey2020"
    assert client.get("/did/did:example:nobody").status_code == 404


def test_authenticate_intersects_ledger_and_role_bits(service, gateway):
    _, issuer, _ = gateway
    token = mint_token(issuer, ISSUER_SUB, "Verifier", iat=_now(service))
    principal = authenticate(token, service.state, service.clock())
    assert principal.subject_did == "did:bacip:issuer123"
    assert principal.permission_bits == int(ROLE_PERMISSIONS["Verifier"])

    with pytest.raises(MalformedTokenError):
        mint_token(
            generate_keypair(ProofType.ED25519, random.Random(1)), "x", "Issuer", 0
        )


def test_helpers():
    assert resolve_subject("issuer123") == "did:bacip:issuer123"
    assert resolve_subject("did:example:1") == "did:example:1"
    assert rejection_status(RejectReason.MISSING_PERMISSION) == 403
    assert rejection_status(RejectReason.DUPLICATE_ID) == 409
    assert rejection_status(RejectReason.UNKNOWN_CREDENTIAL) == 404
    assert rejection_status(RejectReason.BAD_PAYLOAD) == 400


VERIFIER_DID = "did:example:789"

EXPECTED_STATUS = {
    "/issueCredential": {"Issuer": 201, "Verifier": 403, "Student": 403, None: 401},
    "/verifyCredential": {"Issuer": 200, "Verifier": 200, "Student": 200, None: 200},
    "/revokeCredential": {"Issuer": 200, "Verifier": 403, "Student": 403, None: 401},
    "/consent": {"Issuer": 200, "Verifier": 200, "Student": 200, None: 401},
}


@pytest.mark.parametrize("role", ["Issuer", "Verifier", "Student", None])
@pytest.mark.parametrize("path", sorted(EXPECTED_STATUS))
def test_auth_matrix(service, gateway, role, path):
    client, issuer, student = gateway
    verifier = service.create_key(
        "ES256",
        f"{VERIFIER_DID}#key-1",
        register=True,
        permissions=int(ROLE_PERMISSIONS["Verifier"]),
    )
    credential_id = _issue(client, service, issuer).get_json()["id"]
    bodies = {
        "/issueCredential": ISSUE_BODY,
        "/verifyCredential": {"credentialId": credential_id},
        "/revokeCredential": {"credentialId": credential_id},
        "/consent": {"action": "give"},
    }
    tokens = {
        "Issuer": _issuer_token(service, issuer),
        "Verifier": mint_token(verifier, VERIFIER_DID, "Verifier", iat=_now(service)),
        "Student": _student_token(service, student),
    }
    headers = _bearer(tokens[role]) if role else {}

    response = client.post(path, json=bodies[path], headers=headers)
    assert response.status_code == EXPECTED_STATUS[path][role]
