import random
from dataclasses import replace

import pytest

from credential_hub.consensus import ibft
from credential_hub.consensus.config import (
    ConsensusConfig,
    ValidatorInfo,
    fault_tolerance,
    quorum_size,
)
from credential_hub.consensus.ibft import ConsensusMessage, IbftNode, MessageKind
from credential_hub.consensus.local import LocalConsensus
from credential_hub.core.crypto import generate_keypair, sign_bytes
from credential_hub.core.exceptions import (
    ConfigError,
    ConsensusUnavailableError,
    NotLeaderError,
)
from credential_hub.core.ledger import (
    Genesis,
    KeyRecord,
    RejectReason,
    TxKind,
    build_transaction,
    genesis_state,
)
from credential_hub.core.models import ProofType

NOW = "2021-06-01T12:00:00Z"
ADMIN = "did:bacip:admin"


@pytest.fixture
def network():
    rng = random.Random(4)
    keys = {
        f"v{i}": generate_keypair(ProofType.ED25519, rng=rng, key_id=f"v{i}")
        for i in range(4)
    }
    config = ConsensusConfig(
        validators=tuple(ValidatorInfo(k, v.public_key) for k, v in keys.items()),
        round_timeout=5,
        max_rounds=6,
    )
    admin = generate_keypair(ProofType.ED25519, rng=rng, key_id=f"{ADMIN}#key-1")
    genesis = Genesis(
        admin=ADMIN,
        keys=(KeyRecord(admin.key_id, ADMIN, admin.algorithm, admin.public_key),),
    )
    return config, keys, admin, genesis_state(genesis)


def _grant(admin, user, bits, nonce):
    return build_transaction(
        TxKind.SET_PERMISSIONS,
        ADMIN,
        {"user": user, "permissionBits": bits},
        admin,
        created=NOW,
        nonce=nonce,
    )


@pytest.mark.parametrize(
    "n,f,quorum", [(1, 0, 1), (3, 0, 1), (4, 1, 3), (5, 1, 3), (7, 2, 5), (10, 3, 7)]
)
def test_quorum_arithmetic(n, f, quorum):
    assert fault_tolerance(n) == f
    assert quorum_size(n) == quorum


def test_config_validation():
    with pytest.raises(ConfigError):
        ConsensusConfig(validators=())
    info = ValidatorInfo("v0", bytes(32))
    with pytest.raises(ConfigError):
        ConsensusConfig(validators=(info, info))
    with pytest.raises(ConfigError):
        ConsensusConfig(validators=(info,), round_timeout=0)


def test_leader_rotates_with_height_and_round(network):
    config, _, _, _ = network
    assert config.leader(1, 0) == "v1"
    assert config.leader(1, 1) == "v2"
    assert config.leader(4, 0) == "v0"
    assert config.round_deadline(2) == 15


def test_all_nodes_agree(network):
    config, keys, admin, state = network
    consensus = LocalConsensus(config, keys, state, clock=lambda: NOW)
    txs = [_grant(admin, f"did:example:u{i}", 4, i) for i in range(5)]
    txs.append(_grant(admin, "did:example:bad", 16, 99))
    finalized = consensus.submit(txs)

    assert finalized[-1].block.height == 1
    assert {node.chain[-1].hash for node in consensus.nodes.values()} == {
        finalized[-1].block.hash
    }
    assert consensus.outcome(txs[0].tx_id) is None
    assert consensus.outcome(txs[-1].tx_id) is RejectReason.UNKNOWN_PERMISSION_BITS
    assert consensus.state.roles["did:example:u3"] == 4
    assert len(finalized[-1].commits) >= config.quorum


def test_progress_with_one_validator_offline(network):
    config, keys, admin, state = network
    # v1 ведёт высоту 1 и недоступен: нужен переход в раунд 1
    online = {k: v for k, v in keys.items() if k != "v1"}
    consensus = LocalConsensus(config, online, state, clock=lambda: NOW)
    finalized = consensus.submit([_grant(admin, "did:example:u", 1, 1)])
    assert finalized[-1].round >= 1
    assert consensus.state.roles["did:example:u"] == 1


def test_no_quorum_is_unavailable(network):
    config, keys, admin, state = network
    online = {k: keys[k] for k in ("v0", "v2")}
    consensus = LocalConsensus(config, online, state, clock=lambda: NOW)
    with pytest.raises(ConsensusUnavailableError):
        consensus.submit([_grant(admin, "did:example:u", 1, 1)])


def test_listener_sees_every_block_once(network):
    config, keys, admin, state = network
    consensus = LocalConsensus(config, keys, state, clock=lambda: NOW)
    seen = []
    consensus.add_listener(lambda finalized: seen.append(finalized.block.height))
    for nonce in range(3):
        consensus.submit([_grant(admin, "did:example:u", 4, nonce)])
    assert seen == [1, 2, 3]


def test_only_leader_proposes(network):
    config, keys, _, state = network
    follower = IbftNode(config, "v0", keys["v0"], state)
    with pytest.raises(NotLeaderError):
        follower.propose(NOW)


def test_forged_and_foreign_messages_are_discarded(network):
    config, keys, admin, state = network
    leader = IbftNode(config, "v1", keys["v1"], state)
    follower = IbftNode(config, "v2", keys["v2"], state)
    leader.submit(_grant(admin, "did:example:u", 4, 1))
    pre_prepare = leader.propose(NOW)[0].message
    assert pre_prepare.kind is MessageKind.PRE_PREPARE

    forged = replace(pre_prepare, signature=bytes(64))
    outbound, finalized = follower.handle_message(forged, NOW)
    assert outbound == [] and finalized == []
    assert follower.discarded == 1

    outbound, _ = follower.handle_message(pre_prepare, NOW)
    assert [o.message.kind for o in outbound] == [MessageKind.PREPARE]
    assert follower.handle_message("garbage", NOW) == ([], [])
    assert follower.discarded == 2


def test_timeout_moves_to_next_round(network):
    config, keys, _, state = network
    node = IbftNode(config, "v0", keys["v0"], state)
    outbound = node.on_timeout(NOW)
    assert node.round == 1
    assert [o.message.kind for o in outbound] == [MessageKind.ROUND_CHANGE]
    assert outbound[0].message.round == 1
    assert outbound[0].message.certificate is None
    node.on_timeout(NOW)
    assert node.round == 2


def _prepare_from(key, sender, height, round_):
    message = ConsensusMessage(
        kind=MessageKind.PREPARE,
        height=height,
        round=round_,
        sender=sender,
        block_hash="00" * 32,
    )
    return replace(message, signature=sign_bytes(message.signing_bytes(), key))


def test_future_heights_are_buffered_within_limits(network, monkeypatch):
    config, keys, _, state = network
    node = IbftNode(config, "v0", keys["v0"], state)
    far = node.height + ibft.FUTURE_HEIGHT_WINDOW + 1
    message = _prepare_from(keys["v1"], "v1", far, 0)
    outbound, finalized = node.handle_message(message, NOW)
    assert outbound == [] and finalized == []
    assert node.discarded == 1

    monkeypatch.setattr(ibft, "MAX_FUTURE_MESSAGES", 3)
    for round_ in range(5):
        node.handle_message(
            _prepare_from(keys["v1"], "v1", node.height + 1, round_), NOW
        )
    assert node.discarded == 3
