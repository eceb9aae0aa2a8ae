import json
import random

import pytest

from credential_hub.core.exceptions import (
    DuplicateKeyError,
    KeystoreError,
    UnknownKeyError,
)
from credential_hub.core.keystore import Keystore, blob_key_id
from credential_hub.core.models import ProofType


@pytest.fixture
def keystore(tmp_path):
    return Keystore(
        str(tmp_path / "keys.json"), "secret", iterations=1000, rng=random.Random(1)
    )


def test_generate_and_reload(keystore, tmp_path):
    key = keystore.generate(
        ProofType.ES256, "did:example:456#key-1", owner="did:example:456"
    )
    reopened = Keystore(str(tmp_path / "keys.json"), "secret", iterations=1000)
    loaded = reopened.get("did:example:456#key-1")
    assert loaded.private_key == key.private_key
    assert loaded.public_key == key.public_key
    assert reopened.owner_of("did:example:456#key-1") == "did:example:456"
    assert reopened.find_by_owner("did:example:456").key_id == key.key_id


def test_private_keys_are_not_stored_in_clear(keystore, tmp_path):
    key = keystore.generate(ProofType.ED25519, "k1")
    raw = (tmp_path / "keys.json").read_text(encoding="utf-8")
    assert key.private_key.hex() not in raw
    entry = json.loads(raw)["k1"]
    assert set(entry["sealedPrivateKey"]) == {"ciphertext", "nonce", "tag"}


def test_wrong_passphrase(keystore, tmp_path):
    keystore.generate(ProofType.ED25519, "k1")
    wrong = Keystore(str(tmp_path / "keys.json"), "other", iterations=1000)
    with pytest.raises(KeystoreError):
        wrong.get("k1")


def test_empty_passphrase_refused(tmp_path):
    with pytest.raises(KeystoreError):
        Keystore(str(tmp_path / "keys.json"), "")


def test_duplicate_and_unknown(keystore):
    keystore.generate(ProofType.ED25519, "k1")
    with pytest.raises(DuplicateKeyError):
        keystore.generate(ProofType.ES256, "k1")
    with pytest.raises(UnknownKeyError):
        keystore.get("missing")
    assert "k1" in keystore and "missing" not in keystore


def test_blob_keys_and_destroy(keystore):
    address = "ab" * 32
    secret = keystore.new_symmetric_key()
    keystore.put_blob_key(address, secret)
    assert keystore.blob_key(address) == secret
    with pytest.raises(KeystoreError):
        keystore.get(blob_key_id(address))

    keystore.destroy(blob_key_id(address))
    with pytest.raises(UnknownKeyError):
        keystore.blob_key(address)
    with pytest.raises(UnknownKeyError):
        keystore.destroy(blob_key_id(address))


def test_list_keys_hides_secrets(keystore):
    keystore.generate(ProofType.ED25519, "b", owner="did:example:1")
    keystore.generate(ProofType.ES256, "a")
    listed = keystore.list_keys()
    assert [item["keyId"] for item in listed] == ["a", "b"]
    assert all(set(item) == {"keyId", "algorithm", "owner"} for item in listed)
