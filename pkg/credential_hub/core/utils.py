import base64
import binascii
import hashlib
import json
import re
from datetime import date, datetime, timezone
from typing import Any, Union

UUID4_RE = re.compile(
    r"^[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}\Z"
)
DID_RE = re.compile(r"^did:[a-z0-9]+:.+\Z")
DATE_ONLY_RE = re.compile(r"^\d{4}-\d{2}-\d{2}\Z")

Instant = Union[str, datetime, date]


# ---------- Хеширование ----------
def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------- Кодирование ----------
def b64encode(data: bytes) -> str:
    """Стандартный алфавит base64 с выравниванием."""
    return base64.b64encode(data).decode("ascii")


def b64decode(text: str) -> bytes:
    """Строгое декодирование base64; при ошибке ValueError."""
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, AttributeError) as e:
        raise ValueError(f"Некорректный base64: {e}")


def canonical_json(value: Any) -> bytes:
    """
    Канонический JSON: ключи отсортированы на всех уровнях, без пробелов, UTF-8.
    Числа с плавающей точкой запрещены.
    """
    _reject_floats(value)
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def _reject_floats(value: Any) -> None:
    if isinstance(value, float):
        raise TypeError("Числа с плавающей точкой недопустимы в каноническом JSON")
    if isinstance(value, dict):
        for item in value.values():
            _reject_floats(item)
    elif isinstance(value, (list, tuple)):
        for item in value:
            _reject_floats(item)


# ---------- Валидация ----------
def is_uuid4(value: Any) -> bool:
    return isinstance(value, str) and bool(UUID4_RE.fullmatch(value))


def is_did(value: Any) -> bool:
    return isinstance(value, str) and bool(DID_RE.fullmatch(value))


# ---------- Время ----------
def parse_instant(value: Instant) -> datetime:
    """
    Разбирает момент времени ISO-8601. Дата без времени означает полночь UTC;
    время без часового пояса считается UTC.
    """
    if isinstance(value, datetime):
        moment = value
    elif isinstance(value, date):
        moment = datetime(value.year, value.month, value.day)
    elif isinstance(value, str):
        text = value.strip()
        if DATE_ONLY_RE.fullmatch(text):
            moment = datetime.fromisoformat(text + "T00:00:00")
        else:
            moment = datetime.fromisoformat(text.replace("Z", "+00:00"))
    else:
        raise ValueError(f"Не момент времени: {value!r}")
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc)


def format_instant(moment: datetime) -> str:
    """UTC, секундная точность, суффикс Z."""
    moment = parse_instant(moment)
    return moment.replace(microsecond=0).strftime("%Y-%m-%dT%H:%M:%SZ")


def utc_now() -> datetime:
    return datetime.now(timezone.utc)
