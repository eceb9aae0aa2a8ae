"""Командная строка узла реестра удостоверений."""

from ..logging_config import setup_logging

# Настраиваем логирование один раз при загрузке пакета
setup_logging()
