import logging
import os
import re
from logging.handlers import RotatingFileHandler

from .infra.settings import SettingsLoader

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
CONSENSUS_LOGGER = "credential_hub.consensus"

# JWT (три сегмента base64url) и заголовок Bearer
_TOKEN_RE = re.compile(r"eyJ[\w-]+\.[\w-]+\.[\w-]+")
_BEARER_RE = re.compile(r"(Bearer\s+)\S+")

_logging_configured = False


class SecretRedactingFilter(logging.Filter):
    """Вырезает токены доступа из сообщений до записи в файл."""

    def filter(self, record: logging.LogRecord) -> bool:
        message = record.getMessage()
        redacted = _BEARER_RE.sub(r"\1***", _TOKEN_RE.sub("***", message))
        if redacted != message:
            record.msg, record.args = redacted, None
        return True


def setup_logging(force: bool = False) -> logging.Logger:
    """
    Настраивает корневой логгер: файл с ротацией по размеру в logs_dir,
    фильтр секретов, отдельный уровень для сообщений консенсуса.
    """
    global _logging_configured
    if _logging_configured and not force:
        return logging.getLogger()

    settings = SettingsLoader()
    log_dir = settings.get("logs_dir", "logs")
    log_path = os.path.join(log_dir, settings.get("log_file", "credential_hub.log"))
    level = str(settings.get("log_level", "INFO")).upper()
    consensus_level = str(settings.get("consensus_log_level", level)).upper()

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level, logging.INFO))
    logging.getLogger(CONSENSUS_LOGGER).setLevel(
        getattr(logging, consensus_level, logging.INFO)
    )
    # Flask пишет каждый запрос; оставляем только предупреждения
    logging.getLogger("werkzeug").setLevel(logging.WARNING)

    # pytest и flask ставят свои обработчики
    if root_logger.handlers and not force:
        _logging_configured = True
        return root_logger

    os.makedirs(log_dir, exist_ok=True)
    handler = RotatingFileHandler(
        log_path,
        maxBytes=settings.get("log_max_bytes", 1048576),
        backupCount=settings.get("log_backup_count", 3),
        encoding="utf-8",
    )
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%Y-%m-%dT%H:%M:%S"))
    handler.addFilter(SecretRedactingFilter())
    root_logger.addHandler(handler)

    _logging_configured = True
    return root_logger


def get_logger(name: str) -> logging.Logger:
    if not _logging_configured:
        setup_logging()
    return logging.getLogger(name)
