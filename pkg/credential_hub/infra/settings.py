import json
import os
from typing import Any, Optional

from dotenv import load_dotenv

from ..core.exceptions import ConfigError

load_dotenv()

ENV_PREFIX = "BACIP_"
DEFAULT_CONFIG_PATH = os.path.abspath(
    os.path.join(os.path.dirname(__file__), "..", "..", "config.json")
)


class SettingsLoader:
    """Синглтон настроек: config.json + переопределения из окружения (BACIP_*)."""

    _instance = None
    _config = None
    _path = None

    def __new__(cls, path: Optional[str] = None):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._path = path or DEFAULT_CONFIG_PATH
            cls._instance._load_config()
        elif path is not None and os.path.abspath(path) != cls._instance._path:
            cls._instance._path = os.path.abspath(path)
            cls._instance._load_config()
        return cls._instance

    def _load_config(self):
        """Загружает конфигурацию из JSON-файла. Отсутствующий файл = пустой конфиг."""
        try:
            with open(self._path, "r", encoding="utf-8") as f:
                self._config = json.load(f)
        except FileNotFoundError:
            self._config = {}
        except json.JSONDecodeError:
            raise ConfigError(f"файл настроек повреждён: {self._path}")

    @property
    def path(self) -> str:
        return self._path

    def get(self, key: str, default: Any = None) -> Any:
        """
        Возвращает значение ключа. Переменная окружения BACIP_<KEY>
        имеет приоритет над файлом; тип приводится по значению по умолчанию.
        """
        env_value = os.getenv(ENV_PREFIX + key.upper())
        if env_value is not None:
            return _coerce(env_value, self._config.get(key, default))
        return self._config.get(key, default)

    @classmethod
    def reset(cls):
        """Сбрасывает синглтон (используется в тестах)."""
        cls._instance = None


def _coerce(raw: str, like: Any) -> Any:
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw
