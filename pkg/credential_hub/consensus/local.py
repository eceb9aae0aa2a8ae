import threading
from collections import deque
from typing import Callable, Dict, Iterable, List, Optional

from ..core.exceptions import ConfigError, ConsensusUnavailableError
from ..core.ledger import LedgerState, RejectReason, Transaction
from ..core.models import KeyPair
from ..core.utils import utc_now
from ..logging_config import get_logger
from .config import ConsensusConfig
from .ibft import FinalizedBlock, IbftNode, Outbound

logger = get_logger(__name__)


class LocalConsensus:
    """
    Валидаторы в одном процессе с мгновенной доставкой сообщений.
    Узлы создаются только для валидаторов, чьи ключи доступны; остальные
    молчат, и без кворума раунды заканчиваются таймаутами.
    Офлайн-режим CLI: частный случай с n=1.
    """

    def __init__(
        self,
        config: ConsensusConfig,
        keys: Dict[str, KeyPair],
        state: LedgerState,
        max_block_transactions: Optional[int] = None,
        clock: Callable = utc_now,
    ):
        self.config = config
        self.nodes: Dict[str, IbftNode] = {
            validator_id: IbftNode(
                config, validator_id, keys[validator_id], state, max_block_transactions
            )
            for validator_id in config.ids
            if validator_id in keys
        }
        if not self.nodes:
            raise ConfigError("нет ни одного ключа валидатора в хранилище ключей")
        self.primary = next(iter(self.nodes.values()))
        self._clock = clock
        self._lock = threading.Lock()
        self._listeners: List[Callable[[FinalizedBlock], None]] = []
        self._outcomes: Dict[str, Optional[RejectReason]] = {}

    @property
    def state(self) -> LedgerState:
        return self.primary.state

    def add_listener(self, listener: Callable[[FinalizedBlock], None]) -> None:
        """Слушатель вызывается один раз на каждый финализированный блок."""
        self._listeners.append(listener)

    def outcome(self, tx_id: str) -> Optional[RejectReason]:
        """None: транзакция принята; иначе причина отказа."""
        if tx_id not in self._outcomes:
            raise KeyError(tx_id)
        return self._outcomes[tx_id]

    def submit(self, transactions: Iterable[Transaction]) -> List[FinalizedBlock]:
        """
        Отправляет транзакции и ведёт консенсус, пока каждая не попадёт
        в финализированный блок (принятой или отклонённой).
        """
        pending = list(transactions)
        with self._lock:
            for tx in pending:
                for node in self.nodes.values():
                    node.submit(tx)
            waiting = {tx.tx_id for tx in pending}
            finalized: List[FinalizedBlock] = []
            while True:
                block = self._finalize_next_height()
                finalized.append(block)
                waiting -= {tx.tx_id for tx in block.block.transactions}
                waiting -= {r.tx.tx_id for r in block.block.rejections}
                if not waiting:
                    return finalized

    def _finalize_next_height(self) -> FinalizedBlock:
        target = self.primary.height
        for _ in range(self.config.max_rounds):
            now = self._clock()
            leader = self.nodes.get(
                self.config.leader(self.primary.height, self.primary.round)
            )
            queue = deque()
            if leader is not None and leader.round == 0:
                queue.extend(leader.propose(now))
            done = self._drain(queue, now, target)
            if done is not None:
                return done
            for node in self.nodes.values():
                queue.extend(node.on_timeout(now))
            done = self._drain(queue, now, target)
            if done is not None:
                return done
        raise ConsensusUnavailableError(
            f"высота {target} не финализирована за {self.config.max_rounds} раундов "
            f"(доступно {len(self.nodes)} из {self.config.n} валидаторов, "
            f"кворум {self.config.quorum})"
        )

    def _drain(self, queue: deque, now, target: int) -> Optional[FinalizedBlock]:
        result = None
        while queue:
            outbound: Outbound = queue.popleft()
            if outbound.recipient is None:
                recipients = list(self.nodes.values())
            elif outbound.recipient in self.nodes:
                recipients = [self.nodes[outbound.recipient]]
            else:
                recipients = []
            for node in recipients:
                more, finalized = node.handle_message(outbound.message, now)
                queue.extend(more)
                if node is self.primary:
                    for block in finalized:
                        self._record(block)
                        if block.block.height == target:
                            result = block
        return result

    def _record(self, finalized: FinalizedBlock) -> None:
        for tx in finalized.block.transactions:
            self._outcomes[tx.tx_id] = None
        for rejection in finalized.block.rejections:
            self._outcomes[rejection.tx.tx_id] = rejection.reason
        for listener in self._listeners:
            listener(finalized)
