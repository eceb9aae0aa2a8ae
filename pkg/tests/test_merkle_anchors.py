import json
import random
from dataclasses import replace

import pytest

from credential_hub.core.anchors import (
    ZERO_HASH,
    AnchorLog,
    ClaimedStatus,
    build_inclusion_proof,
    verify_with_anchor,
)
from credential_hub.core.exceptions import (
    AnchorLogCorruptedError,
    OutOfOrderError,
    UnknownCredentialError,
)
from credential_hub.core.merkle import (
    EMPTY_ROOT,
    Side,
    fold_path,
    hash_pair,
    merkle_path,
    merkle_root,
)
from credential_hub.core.utils import sha256

from .conftest import ISSUE_BODY, ISSUER_DID


def _leaves(n):
    return [sha256(bytes([i])) for i in range(n)]


def test_empty_and_single_leaf():
    assert merkle_root([]) == EMPTY_ROOT == sha256(b"")
    leaf = sha256(b"only")
    assert merkle_root([leaf]) == leaf
    assert merkle_path([leaf], 0) == []


def test_odd_node_is_promoted_not_duplicated():
    a, b, c = _leaves(3)
    assert merkle_root([a, b, c]) == hash_pair(hash_pair(a, b), c)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 13])
def test_every_path_folds_to_root(n):
    leaves = _leaves(n)
    root = merkle_root(leaves)
    for index, leaf in enumerate(leaves):
        assert fold_path(leaf, merkle_path(leaves, index)) == root


def test_path_index_out_of_range():
    with pytest.raises(IndexError):
        merkle_path(_leaves(2), 2)


def test_anchor_proof_for_issued_credential(service, issued):
    state = service.state
    anchor = service.anchors.latest()
    assert anchor.private_height == state.height
    credential_id = issued.document.id
    proof = build_inclusion_proof(state, credential_id, anchor.anchor_index)
    record = state.credentials[credential_id]

    assert verify_with_anchor(proof, ClaimedStatus(record.doc_hash, False), anchor)
    assert not verify_with_anchor(proof, ClaimedStatus(record.doc_hash, True), anchor)
    assert not verify_with_anchor(proof, ClaimedStatus(bytes(32), False), anchor)
    with pytest.raises(UnknownCredentialError):
        build_inclusion_proof(state, "00000000-0000-4000-8000-000000000000")



def _flip(data: bytes, bit: int) -> bytes:
    mutated = bytearray(data)
    mutated[bit // 8] ^= 1 << (bit % 8)
    return bytes(mutated)


def test_single_bit_mutations_never_verify(service, issued):
    for _ in range(6):
        service.issue(dict(ISSUE_BODY), actor=ISSUER_DID)
    state = service.state
    anchor = service.anchors.latest()
    credential_id = issued.document.id
    proof = build_inclusion_proof(state, credential_id, anchor.anchor_index)
    claimed = ClaimedStatus(state.credentials[credential_id].doc_hash, False)
    assert len(proof.path) >= 2
    assert verify_with_anchor(proof, claimed, anchor)
    assert not verify_with_anchor(proof, replace(claimed, revoked=True), anchor)

    rng = random.Random(10_000)
    targets = ["doc_hash", "leaf_hash", *range(len(proof.path))]
    for _ in range(10_000):
        target = rng.choice(targets)
        bit = rng.randrange(256)
        forged_proof, forged_claim = proof, claimed
        if target == "doc_hash":
            forged_claim = replace(claimed, doc_hash=_flip(claimed.doc_hash, bit))
        elif target == "leaf_hash":
            forged_proof = replace(proof, leaf_hash=_flip(proof.leaf_hash, bit))
        else:
            path = list(proof.path)
            step = path[target]
            path[target] = replace(step, sibling=_flip(step.sibling, bit))
            forged_proof = replace(proof, path=tuple(path))
        assert not verify_with_anchor(forged_proof, forged_claim, anchor)

    for index, step in enumerate(proof.path):
        other = Side.LEFT if step.side is Side.RIGHT else Side.RIGHT
        path = list(proof.path)
        path[index] = replace(step, side=other)
        forged = replace(proof, path=tuple(path))
        assert not verify_with_anchor(forged, claimed, anchor)

def test_anchor_chain_is_linked(service, issued):
    anchors = service.anchors.anchors()
    assert anchors[0].prev_anchor_hash == ZERO_HASH
    for previous, current in zip(anchors, anchors[1:]):
        assert current.prev_anchor_hash == previous.hash
        assert current.private_height > previous.private_height
    assert service.anchors.verify_chain()


def test_out_of_order_anchor_refused(service, issued):
    block = service.journal.blocks()
    last = list(block)[-1]
    with pytest.raises(OutOfOrderError):
        service.anchors.anchor_block(last, service.state)


def test_tampered_anchor_log_detected(service, issued, config):
    with open(config.anchor_log_path, "r", encoding="utf-8") as f:
        records = [json.loads(line) for line in f if line.strip()]
    records[0]["stateRoot"] = "00" * 32
    with open(config.anchor_log_path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    with pytest.raises(AnchorLogCorruptedError):
        AnchorLog(config.anchor_log_path)


def test_anchors_hold_only_hashes(service, issued, config):
    with open(config.anchor_log_path, "r", encoding="utf-8") as f:
        text = f.read()
    assert "John Doe" not in text
    assert issued.document.id not in text
