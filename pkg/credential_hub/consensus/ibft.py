"""
Трёхфазный автомат IBFT (PrePrepare, Prepare, Commit) со сменой раунда.

Каждый валидатор — изолированный объект IbftNode; вызовы handle_message
одного узла сериализуются вызывающим кодом. Узел сам не знает о времени:
таймеры раундов ведёт драйвер (LocalConsensus или симулятор).
"""

import functools
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set, Tuple

from ..core.crypto import sign_bytes, verify_bytes
from ..core.exceptions import (
    ConfigError,
    ConsensusUnavailableError,
    LedgerContractError,
    NotLeaderError,
)
from ..core.ledger import (
    AuditEvent,
    Block,
    Effect,
    LedgerState,
    Transaction,
    apply_block,
    build_block,
)
from ..core.models import KeyPair, ProofType
from ..core.utils import Instant, canonical_json
from ..logging_config import get_logger
from .config import ConsensusConfig, quorum_size

logger = get_logger(__name__)

# Сообщения для высот впереди текущей буферизуются в этих пределах
FUTURE_HEIGHT_WINDOW = 16
MAX_FUTURE_MESSAGES = 4096

__all__ = [
    "ConsensusMessage",
    "FinalizedBlock",
    "IbftNode",
    "MessageKind",
    "Outbound",
    "Phase",
    "PreparedCertificate",
    "handle_message",
    "on_timeout",
    "propose",
    "quorum_size",
]


class MessageKind(str, Enum):
    PRE_PREPARE = "PrePrepare"
    PREPARE = "Prepare"
    COMMIT = "Commit"
    ROUND_CHANGE = "RoundChange"


class Phase(str, Enum):
    IDLE = "Idle"
    PRE_PREPARED = "PrePrepared"
    PREPARED = "Prepared"
    COMMITTED = "Committed"


@dataclass(frozen=True)
class ConsensusMessage:
    kind: MessageKind
    height: int
    round: int
    sender: str
    block_hash: Optional[str] = None
    block: Optional[Block] = None
    certificate: Optional["PreparedCertificate"] = None
    justification: Tuple["ConsensusMessage", ...] = ()
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        body = {
            "kind": self.kind.value,
            "height": self.height,
            "round": self.round,
            "sender": self.sender,
            "blockHash": self.block_hash,
        }
        # Подпись RoundChange закрепляет и переносимый сертификат
        if self.certificate is not None:
            body["preparedRound"] = self.certificate.round
            body["preparedHash"] = self.certificate.block.hash
        return canonical_json(body)


@dataclass(frozen=True)
class PreparedCertificate:
    """Блок и кворум подписанных Prepare за один раунд."""

    round: int
    block: Block
    prepares: Tuple[ConsensusMessage, ...]


@dataclass(frozen=True)
class Outbound:
    message: ConsensusMessage
    recipient: Optional[str] = None  # None: всем валидаторам, включая себя


@dataclass(frozen=True)
class FinalizedBlock:
    block: Block
    state: LedgerState
    events: Tuple[AuditEvent, ...]
    effects: Tuple[Effect, ...]
    round: int
    commits: Tuple[ConsensusMessage, ...]


@functools.lru_cache(maxsize=1 << 16)
def _signature_ok(message: bytes, signature: bytes, public_key: bytes) -> bool:
    return verify_bytes(message, signature, ProofType.ED25519, public_key)


class IbftNode:
    """Состояние одного валидатора: высота, раунд, фаза, блокировка, журнал голосов."""

    def __init__(
        self,
        config: ConsensusConfig,
        validator_id: str,
        key: Optional[KeyPair],
        state: LedgerState,
        max_block_transactions: Optional[int] = None,
    ):
        if not config.is_validator(validator_id):
            raise ConfigError(f"{validator_id} не входит в набор валидаторов")
        self.config = config
        self.validator_id = validator_id
        self.key = key
        self.state = state
        self.max_block_transactions = max_block_transactions
        self.chain: List[Block] = []
        self.height = state.height + 1
        self.round = 0
        self.phase = Phase.IDLE
        self.locked: Optional[PreparedCertificate] = None
        self.proposal: Optional[Block] = None
        self.mempool: Dict[str, Transaction] = {}
        self.discarded = 0
        self._reset_height()
        self._future: List[ConsensusMessage] = []
        self._commit_certificates: Dict[int, Tuple[ConsensusMessage, ...]] = {}

    def _reset_height(self) -> None:
        self._votes: Dict[Tuple[int, MessageKind], Dict[str, ConsensusMessage]] = (
            defaultdict(dict)
        )
        self._round_changes: Dict[int, Dict[str, ConsensusMessage]] = defaultdict(dict)
        self._pre_prepares: Dict[int, ConsensusMessage] = {}
        self._validated: Dict[str, Tuple[LedgerState, list, list]] = {}
        self._sent_prepares: Dict[int, str] = {}
        self._sent_round_changes: Set[int] = set()
        self._proposed_rounds: Set[int] = set()

    # ---------- вспомогательное ----------
    @property
    def quorum(self) -> int:
        return self.config.quorum

    def is_leader(self, round_: Optional[int] = None) -> bool:
        round_ = self.round if round_ is None else round_
        return self.config.leader(self.height, round_) == self.validator_id

    def submit(self, tx: Transaction) -> None:
        """Кладёт транзакцию в локальный пул ожидания."""
        if tx.tx_id not in self.state.applied_txs:
            self.mempool.setdefault(tx.tx_id, tx)

    def _sign(self, message: ConsensusMessage) -> ConsensusMessage:
        return replace(message, signature=sign_bytes(message.signing_bytes(), self.key))

    def _broadcast(self, message: ConsensusMessage) -> Outbound:
        return Outbound(self._sign(message))

    def _signed_by_validator(self, message: ConsensusMessage) -> bool:
        public_key = self.config.public_key(message.sender)
        if public_key is None or not isinstance(message.signature, bytes):
            return False
        return _signature_ok(message.signing_bytes(), message.signature, public_key)

    def _discard(self, message: ConsensusMessage, why: str) -> Tuple[list, list]:
        self.discarded += 1
        logger.debug(
            f"{self.validator_id}: отброшено {message.kind.value} от {message.sender} "
            f"(h={message.height}, r={message.round}): {why}"
        )
        return [], []

    # ---------- предложение ----------
    def fresh_block(self, clock: Instant) -> Block:
        block, _, _, _ = build_block(
            self.state,
            list(self.mempool.values()),
            self.validator_id,
            clock,
            self.max_block_transactions,
        )
        return block

    def propose(self, clock: Instant) -> List[Outbound]:
        """
        PrePrepare лидера текущего раунда. В раунде > 0 нужен кворум
        RoundChange; при переносимом сертификате предлагается его блок.
        """
        if not self.is_leader():
            raise NotLeaderError(
                self.validator_id,
                self.height,
                self.round,
                self.config.leader(self.height, self.round),
            )
        if self.round in self._proposed_rounds:
            return []
        justification: Tuple[ConsensusMessage, ...] = ()
        block = None
        if self.round > 0:
            collected = self._round_changes.get(self.round, {})
            if len(collected) < self.quorum:
                return []
            justification = tuple(collected.values())
            highest = _highest_certificate(justification)
            if highest is not None:
                block = highest.block
        if block is None:
            block = self.fresh_block(clock)
        self._proposed_rounds.add(self.round)
        logger.debug(
            f"{self.validator_id}: предлагает блок {block.hash[:12]} "
            f"(h={self.height}, r={self.round}, tx={len(block.transactions)})"
        )
        return [
            self._broadcast(
                ConsensusMessage(
                    kind=MessageKind.PRE_PREPARE,
                    height=self.height,
                    round=self.round,
                    sender=self.validator_id,
                    block_hash=block.hash,
                    block=block,
                    justification=justification,
                )
            )
        ]

    # ---------- приём сообщений ----------
    def handle_message(
        self, message: ConsensusMessage, clock: Instant
    ) -> Tuple[List[Outbound], List[FinalizedBlock]]:
        """Тотальная функция: некорректный ввод отбрасывается и считается."""
        try:
            return self._handle(message, clock)
        except (AttributeError, TypeError, ValueError, KeyError) as e:
            return self._discard(message, f"некорректное сообщение: {e}")

    def _handle(self, message, clock):
        if not isinstance(message, ConsensusMessage) or not isinstance(
            message.kind, MessageKind
        ):
            self.discarded += 1
            return [], []
        if not self._signed_by_validator(message):
            return self._discard(message, "неверная подпись")
        if message.height < self.height:
            return self._handle_stale(message)
        if message.height > self.height:
            return self._buffer_future(message)

        handlers = {
            MessageKind.PRE_PREPARE: self._on_pre_prepare,
            MessageKind.PREPARE: self._on_prepare,
            MessageKind.COMMIT: self._on_commit,
            MessageKind.ROUND_CHANGE: self._on_round_change,
        }
        outbound = handlers[message.kind](message, clock)
        more, finalized = self._progress(clock)
        return outbound + more, finalized

    def _buffer_future(self, message: ConsensusMessage) -> Tuple[list, list]:
        if message.height > self.height + FUTURE_HEIGHT_WINDOW:
            return self._discard(message, "высота слишком далеко впереди")
        if len(self._future) >= MAX_FUTURE_MESSAGES:
            return self._discard(message, "буфер будущих высот заполнен")
        self._future.append(message)
        return [], []

    def _handle_stale(self, message):
        """Отстающему узлу отвечаем сертификатом коммита его высоты."""
        commits = self._commit_certificates.get(message.height)
        if message.kind is MessageKind.ROUND_CHANGE and commits:
            return [Outbound(c, recipient=message.sender) for c in commits], []
        return [], []

    def _carries_current_block(self, message: ConsensusMessage) -> bool:
        block = message.block
        return (
            block is not None
            and block.hash == message.block_hash
            and block.height == self.height
        )

    def _on_pre_prepare(self, message: ConsensusMessage, clock) -> List[Outbound]:
        if message.sender != self.config.leader(self.height, message.round):
            self._discard(message, "PrePrepare не от лидера раунда")
            return []
        block = message.block
        if not self._carries_current_block(message):
            self._discard(message, "блок не совпадает с хешем или высотой")
            return []
        if message.round < self.round:
            self._discard(message, "устаревший раунд")
            return []
        known = self._pre_prepares.get(message.round)
        if known is not None:
            if known.block_hash != message.block_hash:
                self._discard(message, "второе предложение в раунде")
            return []
        justified, highest = self._check_justification(message)
        if not justified:
            self._discard(message, "нет обоснования RoundChange")
            return []
        if highest is not None and highest.block.hash != block.hash:
            self._discard(message, "блок расходится с переносимым сертификатом")
            return []
        if block.hash not in self._validated:
            try:
                self._validated[block.hash] = apply_block(self.state, block)
            except LedgerContractError as e:
                self._discard(message, f"недопустимый блок: {e.reason}")
                return []
        self._pre_prepares[message.round] = message
        outbound: List[Outbound] = []
        if message.round > self.round:
            outbound.extend(self._enter_round(message.round, clock))
        elif message.round == self.round:
            outbound.extend(self._accept_proposal(message))
        return outbound

    def _accept_proposal(self, message: ConsensusMessage) -> List[Outbound]:
        block = message.block
        if self.locked is not None and self.locked.block.hash != block.hash:
            highest = _highest_certificate(message.justification)
            if highest is None or highest.round <= self.locked.round:
                logger.info(
                    f"{self.validator_id}: заблокирован на "
                    f"{self.locked.block.hash[:12]}, "
                    f"отказ голосовать за {block.hash[:12]}"
                )
                return []
        self.proposal = block
        if self.phase is Phase.IDLE:
            self.phase = Phase.PRE_PREPARED
        if self.round in self._sent_prepares:
            return []
        self._sent_prepares[self.round] = block.hash
        return [
            self._broadcast(
                ConsensusMessage(
                    kind=MessageKind.PREPARE,
                    height=self.height,
                    round=self.round,
                    sender=self.validator_id,
                    block_hash=block.hash,
                )
            )
        ]

    def _record_vote(self, message: ConsensusMessage) -> None:
        votes = self._votes[(message.round, message.kind)]
        previous = votes.get(message.sender)
        if previous is None:
            votes[message.sender] = message
        elif previous.block_hash != message.block_hash:
            self._discard(message, "повторный голос за другой хеш")

    def _on_prepare(self, message: ConsensusMessage, clock) -> List[Outbound]:
        if not message.block_hash:
            self._discard(message, "Prepare без хеша")
            return []
        self._record_vote(message)
        return []

    def _on_commit(self, message: ConsensusMessage, clock) -> List[Outbound]:
        block = message.block
        if not self._carries_current_block(message):
            self._discard(message, "Commit без корректного блока")
            return []
        self._record_vote(message)
        return []

    def _on_round_change(self, message: ConsensusMessage, clock) -> List[Outbound]:
        if message.round < 1:
            self._discard(message, "RoundChange в раунд 0")
            return []
        certificate = message.certificate
        if certificate is not None and not (
            certificate.round < message.round and self._valid_certificate(certificate)
        ):
            self._discard(message, "некорректный сертификат")
            return []
        self._round_changes[message.round].setdefault(message.sender, message)

        outbound: List[Outbound] = []
        target = self._round_to_join()
        if target is not None:
            outbound.extend(self._enter_round(target, clock))
            outbound.extend(self._send_round_change(target))
        if self.round > 0 and self.is_leader() and self.key is not None:
            outbound.extend(self.propose(clock))
        return outbound

    def _round_to_join(self) -> Optional[int]:
        """Правило f+1: f+1 разных валидаторов просят раунд выше текущего."""
        highest: Dict[str, int] = {}
        for round_, senders in self._round_changes.items():
            if round_ <= self.round:
                continue
            for sender in senders:
                highest[sender] = max(highest.get(sender, 0), round_)
        if len(highest) < self.config.f + 1:
            return None
        return sorted(highest.values(), reverse=True)[self.config.f]

    # ---------- обоснования и сертификаты ----------
    def _valid_certificate(self, certificate: PreparedCertificate) -> bool:
        block = certificate.block
        if block is None or block.height != self.height:
            return False
        block_hash = block.hash
        senders = set()
        for prepare in certificate.prepares:
            if (
                prepare.kind is not MessageKind.PREPARE
                or prepare.height != self.height
                or prepare.round != certificate.round
                or prepare.block_hash != block_hash
                or not self._signed_by_validator(prepare)
            ):
                return False
            senders.add(prepare.sender)
        return len(senders) >= self.quorum

    def _check_justification(
        self, message: ConsensusMessage
    ) -> Tuple[bool, Optional[PreparedCertificate]]:
        if message.round == 0:
            return True, None
        senders = set()
        for change in message.justification:
            if (
                change.kind is not MessageKind.ROUND_CHANGE
                or change.height != self.height
                or change.round != message.round
                or not self._signed_by_validator(change)
            ):
                return False, None
            cert = change.certificate
            if cert is not None and not (
                cert.round < message.round and self._valid_certificate(cert)
            ):
                return False, None
            senders.add(change.sender)
        if len(senders) < self.quorum:
            return False, None
        return True, _highest_certificate(message.justification)

    # ---------- раунды ----------
    def _enter_round(self, round_: int, clock) -> List[Outbound]:
        if round_ <= self.round:
            return []
        logger.info(
            f"{self.validator_id}: высота {self.height}, "
            f"раунд {self.round} -> {round_}"
        )
        self.round = round_
        self.phase = Phase.IDLE
        self.proposal = None
        outbound: List[Outbound] = []
        pending = self._pre_prepares.get(round_)
        if pending is not None:
            outbound.extend(self._accept_proposal(pending))
        if self.is_leader() and self.key is not None:
            outbound.extend(self.propose(clock))
        return outbound

    def _send_round_change(self, round_: int) -> List[Outbound]:
        if round_ in self._sent_round_changes:
            return []
        self._sent_round_changes.add(round_)
        return [
            self._broadcast(
                ConsensusMessage(
                    kind=MessageKind.ROUND_CHANGE,
                    height=self.height,
                    round=round_,
                    sender=self.validator_id,
                    certificate=self.locked,
                )
            )
        ]

    def on_timeout(self, clock: Instant) -> List[Outbound]:
        """Таймаут раунда без финализации: переход в r+1 и RoundChange."""
        target = self.round + 1
        outbound = self._enter_round(target, clock)
        outbound.extend(self._send_round_change(target))
        return outbound

    # ---------- продвижение и финализация ----------
    def _progress(self, clock) -> Tuple[List[Outbound], List[FinalizedBlock]]:
        outbound: List[Outbound] = []
        proposal = self.proposal
        if self.phase is Phase.PRE_PREPARED and proposal is not None:
            matching = [
                vote
                for vote in self._votes[(self.round, MessageKind.PREPARE)].values()
                if vote.block_hash == proposal.hash
            ]
            if len(matching) >= self.quorum:
                self.locked = PreparedCertificate(
                    self.round,
                    proposal,
                    tuple(sorted(matching, key=lambda m: m.sender)),
                )
                self.phase = Phase.PREPARED
                outbound.append(
                    self._broadcast(
                        ConsensusMessage(
                            kind=MessageKind.COMMIT,
                            height=self.height,
                            round=self.round,
                            sender=self.validator_id,
                            block_hash=proposal.hash,
                            block=proposal,
                        )
                    )
                )

        decided = self._decided()
        if decided is None:
            return outbound, []
        round_, commits = decided
        finalized = self._finalize(commits[0].block, round_, commits)
        if finalized is None:
            return outbound, []
        more, later = self._drain_future(clock)
        return outbound + more, [finalized] + later

    def _decided(self) -> Optional[Tuple[int, Tuple[ConsensusMessage, ...]]]:
        for (round_, kind), votes in sorted(self._votes.items(), key=lambda i: i[0][0]):
            if kind is not MessageKind.COMMIT:
                continue
            by_hash: Dict[str, List[ConsensusMessage]] = defaultdict(list)
            for vote in votes.values():
                by_hash[vote.block_hash].append(vote)
            for block_hash in sorted(by_hash):
                group = by_hash[block_hash]
                if len(group) >= self.quorum:
                    return round_, tuple(sorted(group, key=lambda m: m.sender))
        return None

    def _finalize(self, block: Block, round_: int, commits) -> Optional[FinalizedBlock]:
        result = self._validated.get(block.hash)
        if result is None:
            try:
                result = apply_block(self.state, block)
            except LedgerContractError as e:
                logger.error(
                    f"{self.validator_id}: кворум Commit за недопустимый блок "
                    f"{block.hash[:12]}: {e.reason}"
                )
                return None
        state, events, effects = result
        self.phase = Phase.COMMITTED
        self.state = state
        self.chain.append(block)
        self._commit_certificates[block.height] = commits
        for tx in block.transactions:
            self.mempool.pop(tx.tx_id, None)
        for rejection in block.rejections:
            self.mempool.pop(rejection.tx.tx_id, None)
        logger.info(
            f"{self.validator_id}: финализирован блок {block.height} "
            f"({block.hash[:12]}, раунд {round_})"
        )
        self.height = block.height + 1
        self.round = 0
        self.phase = Phase.IDLE
        self.locked = None
        self.proposal = None
        self._reset_height()
        return FinalizedBlock(
            block, state, tuple(events), tuple(effects), round_, commits
        )

    def _drain_future(self, clock) -> Tuple[List[Outbound], List[FinalizedBlock]]:
        ready = [m for m in self._future if m.height == self.height]
        self._future = [m for m in self._future if m.height > self.height]
        outbound: List[Outbound] = []
        finalized: List[FinalizedBlock] = []
        for message in ready:
            more, done = self.handle_message(message, clock)
            outbound.extend(more)
            finalized.extend(done)
        return outbound, finalized


def _highest_certificate(
    changes: Iterable[ConsensusMessage],
) -> Optional[PreparedCertificate]:
    best = None
    for change in changes:
        cert = change.certificate
        if cert is not None and (best is None or cert.round > best.round):
            best = cert
    return best


# ---------- функциональный интерфейс ----------
def propose(
    node: IbftNode, pending: Iterable[Transaction], clock: Instant
) -> ConsensusMessage:
    """PrePrepare лидера; не лидер -> NotLeaderError."""
    for tx in pending:
        node.submit(tx)
    outbound = node.propose(clock)
    if not outbound:
        raise ConsensusUnavailableError(
            "нет кворума RoundChange или предложение в раунде уже сделано"
        )
    return outbound[0].message


def handle_message(node: IbftNode, message: ConsensusMessage, clock: Instant):
    outbound, finalized = node.handle_message(message, clock)
    return node, outbound, finalized


def on_timeout(node: IbftNode, clock: Instant):
    return node, node.on_timeout(clock)
