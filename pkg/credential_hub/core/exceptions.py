from typing import List, Optional


class BacipError(Exception):
    """Базовое исключение узла реестра."""


# ---------- Документы ----------
class MalformedJsonError(BacipError):
    """Текст не является JSON-объектом в UTF-8."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Некорректный JSON: {reason}")


class SchemaViolationError(BacipError):
    """Документ не соответствует схеме. Содержит все нарушения, а не первое."""

    def __init__(self, violations: List["Violation"]):  # noqa: F821
        self.violations = list(violations)
        details = "; ".join(f"{v.path}: {v.reason}" for v in self.violations[:5])
        super().__init__(f"Нарушения схемы ({len(self.violations)}): {details}")


# ---------- Криптография ----------
class BadKeyLengthError(BacipError):
    def __init__(self, length: int):
        self.length = length
        super().__init__(f"Ключ AES-256 должен быть 32 байта, получено {length}")


class AuthFailureError(BacipError):
    """Тег аутентификации не совпал (подмена данных или неверный ключ)."""

    def __init__(self):
        super().__init__("Аутентификация зашифрованных данных не пройдена")


class UnsupportedAlgorithmError(BacipError):
    def __init__(self, algorithm: str):
        self.algorithm = algorithm
        super().__init__(f"Неподдерживаемый алгоритм '{algorithm}'")


class KeystoreError(BacipError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Ошибка хранилища ключей: {reason}")


class DuplicateKeyError(KeystoreError):
    def __init__(self, key_id: str):
        self.key_id = key_id
        BacipError.__init__(self, f"Ключ '{key_id}' уже существует")
        self.reason = "duplicate"


class UnknownKeyError(KeystoreError):
    def __init__(self, key_id: str):
        self.key_id = key_id
        BacipError.__init__(self, f"Ключ '{key_id}' не найден")
        self.reason = "unknown"


# ---------- Хранилище блобов ----------
class NotFoundError(BacipError):
    def __init__(self, address: str):
        self.address = address
        super().__init__(f"Содержимое {address} не найдено")


class IntegrityError(BacipError):
    def __init__(self, address: str, actual: str):
        self.address = address
        self.actual = actual
        super().__init__(
            f"Нарушена целостность: ожидался хеш {address}, получен {actual}"
        )


class StorageFullError(BacipError):
    def __init__(self, used: int, limit: int, requested: int):
        self.used = used
        self.limit = limit
        self.requested = requested
        super().__init__(
            f"Хранилище заполнено: занято {used} из {limit} байт, "
            f"требуется ещё {requested}"
        )


class UnknownPointerError(BacipError):
    def __init__(self, pointer_id: str):
        self.pointer_id = pointer_id
        super().__init__(f"Указатель '{pointer_id}' не найден")


# ---------- Реестр ----------
class TransactionRejectedError(BacipError):
    """Транзакция отклонена проверкой реестра."""

    def __init__(
        self, reason: "RejectReason", tx_id: Optional[str] = None  # noqa: F821
    ):
        self.reason = reason
        self.tx_id = tx_id
        super().__init__(f"Транзакция отклонена: {getattr(reason, 'value', reason)}")


class UnknownCredentialError(BacipError):
    def __init__(self, credential_id: str):
        self.credential_id = credential_id
        super().__init__(f"Удостоверение '{credential_id}' не найдено в реестре")


class LedgerContractError(BacipError):
    """Применение непроверенной транзакции: ошибка программиста."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Нарушение контракта реестра: {reason}")


class JournalReplayError(BacipError):
    def __init__(self, height: int, reason: str):
        self.height = height
        self.reason = reason
        super().__init__(
            f"Воспроизведение журнала прервано на блоке {height}: {reason}"
        )


# ---------- Консенсус ----------
class NotLeaderError(BacipError):
    def __init__(self, validator_id: str, height: int, round_: int, leader: str):
        self.validator_id = validator_id
        self.height = height
        self.round = round_
        self.leader = leader
        super().__init__(
            f"{validator_id} не лидер для высоты {height}, раунда {round_} "
            f"(лидер: {leader})"
        )


class ConfigError(BacipError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Ошибка конфигурации: {reason}")


class ConsensusUnavailableError(BacipError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Консенсус недоступен: {reason}")


# ---------- Якорение ----------
class OutOfOrderError(BacipError):
    def __init__(self, height: int, last_height: int):
        self.height = height
        self.last_height = last_height
        super().__init__(
            f"Блок {height} нельзя заякорить: последний заякоренный блок {last_height}"
        )


class AnchorLogCorruptedError(BacipError):
    def __init__(self, index: int, reason: str):
        self.index = index
        self.reason = reason
        super().__init__(f"Журнал якорей повреждён на записи {index}: {reason}")


# ---------- Аутентификация ----------
class AuthError(BacipError):
    """Базовая ошибка аутентификации (HTTP 401)."""

    code = "auth_error"


class MalformedTokenError(AuthError):
    code = "malformed_token"

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Некорректный токен: {reason}")


class BadSignatureError(AuthError):
    code = "bad_signature"

    def __init__(self):
        super().__init__("Подпись токена не прошла проверку")


class TokenExpiredError(AuthError):
    code = "expired"

    def __init__(self, exp: int, now: int):
        self.exp = exp
        self.now = now
        super().__init__(f"Срок действия токена истёк ({exp} <= {now})")


class UnknownSubjectError(AuthError):
    code = "unknown_subject"

    def __init__(self, subject: str):
        self.subject = subject
        super().__init__(f"Субъект '{subject}' не зарегистрирован")
