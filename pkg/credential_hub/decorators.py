import functools
import time
from typing import Any, Callable, Optional

from .logging_config import get_logger

logger = get_logger(__name__)

# Поля результата, которые попадают в журнал операций
_RESULT_FIELDS = ("txId", "credentialId", "keyId", "action", "alreadyRevoked")


def _summarize(result: Any) -> dict:
    """Идентификаторы из результата операции; содержимое документов не пишется."""
    if isinstance(result, dict):
        return {k: result[k] for k in _RESULT_FIELDS if result.get(k) is not None}
    summary = {}
    for attr, name in (("tx_id", "txId"), ("key_id", "keyId"), ("passed", "passed")):
        value = getattr(result, attr, None)
        if value is not None:
            summary[name] = value
    document = getattr(result, "document", None)
    if document is not None:
        summary["credentialId"] = document.id
    status = getattr(result, "status", None)
    if status is not None:
        summary["status"] = getattr(status, "value", status)
    return summary


def log_action(action_name: Optional[str] = None):
    """
    Журнал операций узла: действие, субъект, итог OK/ERROR, время
    и идентификаторы из результата (txId, credentialId, keyId).
    Аргументы не пишутся: в них бывают документы и ключи.

    :param action_name: название действия (по умолчанию имя функции)
    """

    def decorator(func: Callable):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            log_data = {
                "action": action_name or func.__name__.upper(),
                "actor": kwargs.get("actor"),
            }
            started = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                log_data["result"] = "ERROR"
                log_data["error"] = f"{type(e).__name__}: {e}"
                logger.error(f"{log_data}", exc_info=True)
                raise
            log_data["result"] = "OK"
            log_data["ms"] = round((time.perf_counter() - started) * 1000, 1)
            log_data.update(_summarize(result))
            logger.info(f"{log_data}")
            return result

        return wrapper

    return decorator
