import getpass
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

from dotenv import load_dotenv

from .settings import SettingsLoader

load_dotenv()

PASSPHRASE_ENV = "BACIP_KEYSTORE_PASSPHRASE"


@dataclass
class CliConfig:
    """
    Пути и параметры узла. Незаданные поля берутся из SettingsLoader
    (config.json + BACIP_*), каталоги создаются при построении.
    """

    # Пути (будут заполнены в __post_init__)
    keystore_path: str = ""
    store_root: str = ""
    ledger_journal_path: str = ""
    anchor_log_path: str = ""
    genesis_path: str = ""
    validator_config_path: str = ""
    gateway_bind: str = ""

    # Идентичность и выпуск
    admin_did: str = ""
    default_did_method: str = ""
    default_validity_days: Optional[int] = None
    token_lifetime_seconds: Optional[int] = None

    # Хранилища
    store_max_bytes: Optional[int] = None
    keystore_kdf_iterations: Optional[int] = None

    # Реестр и консенсус
    anchor_interval: Optional[int] = None
    issuer_only_revocation: Optional[bool] = None
    round_timeout: Optional[int] = None
    max_rounds: Optional[int] = None
    max_block_transactions: Optional[int] = None

    passphrase: Optional[str] = field(default=None, repr=False)

    def __post_init__(self):
        settings = SettingsLoader()
        data_dir = settings.get("data_dir", "data")

        def path(attr: str, key: str, default_name: str) -> None:
            if not getattr(self, attr):
                default = os.path.join(data_dir, default_name)
                setattr(self, attr, settings.get(key, default))

        path("keystore_path", "keystore_path", "keystore.json")
        path("store_root", "store_root", "blobs")
        path("ledger_journal_path", "ledger_journal_path", "ledger.jsonl")
        path("anchor_log_path", "anchor_log_path", "anchors.jsonl")
        path("genesis_path", "genesis_path", "genesis.json")
        path("validator_config_path", "validator_config_path", "validators.json")

        self.gateway_bind = self.gateway_bind or settings.get(
            "gateway_bind", "127.0.0.1:8080"
        )
        self.admin_did = self.admin_did or settings.get("admin_did", "did:bacip:admin")
        self.default_did_method = self.default_did_method or settings.get(
            "default_did_method", "bacip"
        )

        defaults = {
            "default_validity_days": 1825,
            "token_lifetime_seconds": 3600,
            "store_max_bytes": 0,
            "keystore_kdf_iterations": 200_000,
            "anchor_interval": 1,
            "issuer_only_revocation": False,
            "round_timeout": 10,
            "max_rounds": 8,
            "max_block_transactions": 0,
        }
        setting_keys = {
            "round_timeout": "consensus_round_timeout",
            "max_rounds": "consensus_max_rounds",
        }
        for attr, default in defaults.items():
            if getattr(self, attr) is None:
                setattr(self, attr, settings.get(setting_keys.get(attr, attr), default))

        # 0 в конфиге означает «без ограничения»
        self.store_max_bytes = self.store_max_bytes or None
        self.max_block_transactions = self.max_block_transactions or None

        for directory in (
            data_dir,
            self.store_root,
            os.path.dirname(self.keystore_path),
            os.path.dirname(self.ledger_journal_path),
            os.path.dirname(self.anchor_log_path),
        ):
            if directory:
                os.makedirs(directory, exist_ok=True)

    @classmethod
    def from_settings(
        cls, config_path: Optional[str] = None, keystore_path: Optional[str] = None
    ) -> "CliConfig":
        """Конфигурация из файла настроек; глобальные флаги CLI переопределяют."""
        if config_path:
            SettingsLoader(config_path)
        return cls(keystore_path=keystore_path or "")

    @property
    def bind_host(self) -> str:
        return self.gateway_bind.rsplit(":", 1)[0]

    @property
    def bind_port(self) -> int:
        return int(self.gateway_bind.rsplit(":", 1)[1])

    def resolve_passphrase(self) -> str:
        """
        Парольная фраза хранилища ключей: явное значение, затем
        BACIP_KEYSTORE_PASSPHRASE, затем запрос в терминале.
        """
        if self.passphrase:
            return self.passphrase
        env_value = os.getenv(PASSPHRASE_ENV)
        if env_value:
            self.passphrase = env_value
        elif sys.stdin is not None and sys.stdin.isatty():
            self.passphrase = getpass.getpass("Парольная фраза хранилища ключей: ")
        return self.passphrase or ""
