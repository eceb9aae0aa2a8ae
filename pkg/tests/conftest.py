import random
from datetime import datetime, timedelta, timezone

import pytest

from credential_hub.core.ledger import Permission
from credential_hub.core.usecases import CredentialService
from credential_hub.infra.config import CliConfig
from credential_hub.infra.settings import SettingsLoader

PASSPHRASE = "test-passphrase"
ISSUER_DID = "did:example:456"
ISSUER_KEY_ID = "did:example:456#key-1"
ISSUER_URI = "https://university.example.edu"
STUDENT_DID = "did:example:123"

ISSUE_BODY = {
    "issuer": ISSUER_URI,
    "recipient": {"name": "John Doe", "id": STUDENT_DID},
    "credential": {"type": "Diploma", "course": "BSc Computer Science"},
}


class FrozenClock:
    """Часы, которые двигаются только вручную."""

    def __init__(self, now: datetime):
        self.now = now

    def __call__(self) -> datetime:
        return self.now

    def advance(self, **delta) -> None:
        self.now += timedelta(**delta)


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    monkeypatch.setenv("BACIP_DATA_DIR", str(tmp_path / "data"))
    monkeypatch.setenv("BACIP_KEYSTORE_PASSPHRASE", PASSPHRASE)
    monkeypatch.setenv("BACIP_KEYSTORE_KDF_ITERATIONS", "1000")
    SettingsLoader.reset()
    yield
    SettingsLoader.reset()


@pytest.fixture
def clock():
    return FrozenClock(datetime(2021, 6, 1, 12, 0, tzinfo=timezone.utc))


@pytest.fixture
def rng():
    return random.Random(20210501)


@pytest.fixture
def config(tmp_path):
    data = tmp_path / "data"
    return CliConfig(
        keystore_path=str(data / "keystore.json"),
        store_root=str(data / "blobs"),
        ledger_journal_path=str(data / "ledger.jsonl"),
        anchor_log_path=str(data / "anchors.jsonl"),
        genesis_path=str(data / "genesis.json"),
        validator_config_path=str(data / "validators.json"),
        keystore_kdf_iterations=1000,
        passphrase=PASSPHRASE,
    )


@pytest.fixture
def service(config, clock, rng):
    return CredentialService(config, clock=clock, rng=rng)


@pytest.fixture
def issuer(service):
    """Издатель с ключом Ed25519, псевдонимом issuerUri и правами Issuer."""
    return service.create_key(
        "Ed25519",
        ISSUER_KEY_ID,
        register=True,
        permissions=int(Permission.ISSUE | Permission.REVOKE | Permission.VERIFY),
        issuer_uri=ISSUER_URI,
    )


@pytest.fixture
def student(service):
    return service.create_key(
        "Ed25519", f"{STUDENT_DID}#key-1", register=True, permissions=0
    )


@pytest.fixture
def issued(service, issuer):
    return service.issue(dict(ISSUE_BODY), actor=ISSUER_DID)
