"""
JWT-аутентификация (ES256) и разрешение прав по снимку реестра.
Ключи проверки берутся из реестра ключей, а не из конфигурации.
"""

from dataclasses import dataclass
from typing import Optional

import jwt

from ..core.crypto import private_key_object, public_key_object
from ..core.exceptions import (
    BadSignatureError,
    MalformedTokenError,
    TokenExpiredError,
    UnknownSubjectError,
)
from ..core.ledger import ROLE_PERMISSIONS, LedgerState, keys_of
from ..core.models import KeyPair, ProofType
from ..core.utils import Instant, is_did, parse_instant

TOKEN_ALGORITHM = "ES256"
TOKEN_ROLES = ("Issuer", "Verifier", "Student")
DEFAULT_LIFETIME = 3600

# Подпись и сроки проверяются отдельными шагами в заданном порядке
_SIGNATURE_ONLY = {
    "verify_signature": True,
    "verify_exp": False,
    "verify_nbf": False,
    "verify_iat": False,
    "verify_aud": False,
    "verify_iss": False,
}


@dataclass(frozen=True)
class Principal:
    subject_did: str
    role: str
    permission_bits: int
    name: Optional[str] = None

    def can(self, required: int) -> bool:
        return (self.permission_bits & int(required)) == int(required)


def resolve_subject(sub: str, did_method: str = "bacip") -> str:
    """Голый sub ("issuer123") превращается в did:<method>:issuer123."""
    return sub if is_did(sub) else f"did:{did_method}:{sub}"


def _structure(raw_token: str):
    if not isinstance(raw_token, str) or raw_token.count(".") != 2:
        raise MalformedTokenError("ожидалось три сегмента base64url")
    try:
        header = jwt.get_unverified_header(raw_token)
        claims = jwt.decode(raw_token, options={"verify_signature": False})
    except jwt.InvalidTokenError as e:
        raise MalformedTokenError(str(e))
    if header.get("alg") != TOKEN_ALGORITHM:
        raise MalformedTokenError(f"алгоритм {header.get('alg')!r} не поддерживается")
    sub, role, iat = claims.get("sub"), claims.get("role"), claims.get("iat")
    if not isinstance(sub, str) or not sub:
        raise MalformedTokenError("нет утверждения sub")
    if role not in TOKEN_ROLES:
        raise MalformedTokenError(f"неизвестная роль {role!r}")
    if not isinstance(iat, int) or isinstance(iat, bool):
        raise MalformedTokenError("iat должен быть целым числом секунд")
    exp = claims.get("exp")
    if exp is not None and (not isinstance(exp, int) or isinstance(exp, bool)):
        raise MalformedTokenError("exp должен быть целым числом секунд")
    return header, claims


def authenticate(
    raw_token: str,
    state: LedgerState,
    clock: Instant,
    lifetime: int = DEFAULT_LIFETIME,
    did_method: str = "bacip",
) -> Principal:
    """
    Порядок проверок: структура, подпись ключом субъекта из реестра,
    срок действия. Без exp токен живёт iat + lifetime секунд.
    Права равны пересечению битов субъекта в реестре и прав роли токена.
    """
    header, claims = _structure(raw_token)
    subject = resolve_subject(claims["sub"], did_method)
    candidates = [k for k in keys_of(state, subject) if k.algorithm is ProofType.ES256]
    if header.get("kid"):
        candidates = [k for k in candidates if k.key_id == header["kid"]]
    if not candidates:
        raise UnknownSubjectError(subject)

    for record in candidates:
        try:
            jwt.decode(
                raw_token,
                key=public_key_object(ProofType.ES256, record.public_key),
                algorithms=[TOKEN_ALGORITHM],
                options=_SIGNATURE_ONLY,
            )
            break
        except jwt.InvalidSignatureError:
            continue
        except jwt.InvalidTokenError as e:
            raise MalformedTokenError(str(e))
    else:
        raise BadSignatureError()

    now = int(parse_instant(clock).timestamp())
    exp = claims.get("exp", claims["iat"] + lifetime)
    if exp <= now:
        raise TokenExpiredError(exp, now)

    ledger_bits = state.roles.get(subject, 0)
    return Principal(
        subject_did=subject,
        role=claims["role"],
        permission_bits=int(ledger_bits) & int(ROLE_PERMISSIONS[claims["role"]]),
        name=claims.get("name"),
    )


def mint_token(
    key: KeyPair,
    sub: str,
    role: str,
    iat: int,
    name: Optional[str] = None,
    exp: Optional[int] = None,
) -> str:
    """Подписывает токен ключом ES256 из хранилища; kid = keyId."""
    if key.algorithm is not ProofType.ES256:
        raise MalformedTokenError("токены подписываются только ключом ES256")
    claims = {"sub": sub, "role": role, "iat": int(iat)}
    if name is not None:
        claims["name"] = name
    if exp is not None:
        claims["exp"] = int(exp)
    return jwt.encode(
        claims,
        private_key_object(ProofType.ES256, key.private_key),
        algorithm=TOKEN_ALGORITHM,
        headers={"kid": key.key_id},
    )
