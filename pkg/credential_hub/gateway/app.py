"""REST-шлюз: выпуск, проверка, отзыв, согласие, аудит, якоря."""

import functools
from typing import Optional

from flask import Flask, current_app, g, jsonify, request

from ..core.exceptions import (
    AuthError,
    ConfigError,
    ConsensusUnavailableError,
    MalformedJsonError,
    SchemaViolationError,
    StorageFullError,
    TransactionRejectedError,
    UnknownCredentialError,
    UnknownKeyError,
)
from ..core.ledger import Permission, RejectReason
from ..core.usecases import CredentialService
from ..logging_config import get_logger
from .auth import authenticate

logger = get_logger(__name__)

AUDIT_LIMIT = 500

_FORBIDDEN = {
    RejectReason.MISSING_PERMISSION,
    RejectReason.NOT_ADMIN,
    RejectReason.NOT_CREDENTIAL_ISSUER,
    RejectReason.NOT_SUBJECT,
    RejectReason.DOCUMENT_SIGNATURE_INVALID,
}
_CONFLICT = {
    RejectReason.DUPLICATE_ID,
    RejectReason.DUPLICATE_TX,
    RejectReason.DUPLICATE_KEY,
    RejectReason.ALREADY_REVOKED,
    RejectReason.CONSENT_NOT_GIVEN,
    RejectReason.CONSENT_STILL_GIVEN,
}


def rejection_status(reason: RejectReason) -> int:
    if reason in _FORBIDDEN:
        return 403
    if reason in _CONFLICT:
        return 409
    if reason is RejectReason.UNKNOWN_CREDENTIAL:
        return 404
    return 400


def _error(status: int, code: str, **extra):
    body = {"error": code}
    body.update(extra)
    return jsonify(body), status


def _service() -> CredentialService:
    return current_app.config["SERVICE"]


def require_auth(permission: Optional[int] = None):
    """
    Bearer JWT обязателен; при permission принципалу нужны все эти биты.
    Принципал кладётся в flask.g.principal.
    """

    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            header = request.headers.get("Authorization", "")
            if not header.startswith("Bearer "):
                return _error(401, "missing_token")
            service = _service()
            g.principal = authenticate(
                header.split(" ", 1)[1].strip(),
                service.state,
                service.clock(),
                lifetime=service.config.token_lifetime_seconds,
                did_method=service.config.default_did_method,
            )
            if permission is not None and not g.principal.can(permission):
                logger.info(
                    f"Отказ {g.principal.subject_did} ({g.principal.role}) "
                    f"для {request.path}"
                )
                return _error(403, "forbidden")
            return fn(*args, **kwargs)

        return wrapper

    return decorator


def _json_body() -> dict:
    body = request.get_json(silent=True)
    if not isinstance(body, dict):
        raise MalformedJsonError("тело запроса должно быть JSON-объектом")
    return body


def create_app(service: CredentialService) -> Flask:
    app = Flask(__name__)
    app.config["SERVICE"] = service
    app.json.ensure_ascii = False

    # ---------- ошибки ----------
    @app.errorhandler(AuthError)
    def on_auth_error(e: AuthError):
        return _error(401, e.code, message=str(e))

    @app.errorhandler(SchemaViolationError)
    def on_schema_violation(e: SchemaViolationError):
        return _error(
            400,
            "schema_violation",
            violations=[v.to_dict() for v in e.violations],
        )

    @app.errorhandler(MalformedJsonError)
    def on_malformed(e: MalformedJsonError):
        return _error(400, "malformed_body", message=str(e))

    @app.errorhandler(TransactionRejectedError)
    def on_rejected(e: TransactionRejectedError):
        return _error(
            rejection_status(e.reason), "rejected", reason=e.reason.value, txId=e.tx_id
        )

    @app.errorhandler(UnknownCredentialError)
    def on_unknown_credential(e: UnknownCredentialError):
        return _error(404, "unknown_credential", credentialId=e.credential_id)

    @app.errorhandler(UnknownKeyError)
    def on_no_key(e: UnknownKeyError):
        return _error(403, "no_signing_key", message=str(e))

    @app.errorhandler(ConsensusUnavailableError)
    def on_unavailable(e: ConsensusUnavailableError):
        return _error(503, "consensus_unavailable", message=str(e))

    @app.errorhandler(StorageFullError)
    def on_storage_full(e: StorageFullError):
        return _error(503, "storage_full", message=str(e))

    @app.errorhandler(ConfigError)
    def on_config_error(e: ConfigError):
        return _error(500, "config_error", message=str(e))

    # ---------- удостоверения ----------
    @app.post("/issueCredential")
    @require_auth(Permission.ISSUE)
    def issue_credential():
        result = _service().issue(_json_body(), actor=g.principal.subject_did)
        response = jsonify(result.document.to_dict())
        response.headers["X-Transaction-Id"] = result.tx_id
        return response, 201

    @app.post("/verifyCredential")
    def verify_credential():
        body = _json_body()
        if set(body) == {"credentialId"}:
            if not isinstance(body["credentialId"], str):
                raise MalformedJsonError("credentialId должен быть строкой")
            result = _service().verify(credential_id=body["credentialId"])
        else:
            result = _service().verify(document=body)
        return jsonify(result.to_dict()), 200

    @app.post("/revokeCredential")
    @require_auth(Permission.REVOKE)
    def revoke_credential():
        body = _json_body()
        credential_id = body.get("credentialId")
        if not isinstance(credential_id, str):
            raise MalformedJsonError("нужно поле credentialId")
        result = _service().revoke(
            credential_id, actor=g.principal.subject_did, reason=body.get("reason")
        )
        response = jsonify(result)
        if result.get("txId"):
            response.headers["X-Transaction-Id"] = result["txId"]
        return response, 200

    @app.post("/consent")
    @require_auth()
    def consent():
        body = _json_body()
        result = _service().consent(body.get("action"), actor=g.principal.subject_did)
        response = jsonify(result)
        response.headers["X-Transaction-Id"] = result["txId"]
        return response, 200

    # ---------- запросы ----------
    @app.get("/audit")
    @require_auth(Permission.VERIFY)
    def audit():
        args = request.args
        try:
            limit = min(int(args.get("limit", AUDIT_LIMIT)), AUDIT_LIMIT)
            from_height = args.get("fromHeight", type=int)
            to_height = args.get("toHeight", type=int)
            events = _service().audit(
                event_name=args.get("eventName"),
                subject=args.get("subject"),
                from_height=from_height,
                to_height=to_height,
                limit=limit,
            )
        except ValueError as e:
            return _error(400, "bad_query", message=str(e))
        return jsonify({"events": [e.to_dict() for e in events]}), 200

    @app.get("/anchors/<int:index>")
    def anchor(index: int):
        found = _service().anchor(index)
        if found is None:
            return _error(404, "unknown_anchor", anchorIndex=index)
        return jsonify(found.to_dict()), 200

    @app.get("/did/<path:did>")
    def did_document(did: str):
        document = _service().did_document(did)
        if document is None:
            return _error(404, "unknown_did", did=did)
        return jsonify(document), 200

    @app.get("/subjects/me/credentials")
    @require_auth()
    def my_credentials():
        items = _service().my_credentials(g.principal.subject_did)
        return jsonify({"subject": g.principal.subject_did, "credentials": items}), 200

    return app
