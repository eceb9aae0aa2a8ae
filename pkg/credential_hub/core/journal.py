from typing import Iterator, List, Tuple

from ..infra.database import JsonLinesJournal
from ..logging_config import get_logger
from .exceptions import JournalReplayError, LedgerContractError
from .ledger import Block, Genesis, LedgerState, apply_block, genesis_state

logger = get_logger(__name__)


class BlockJournal:
    """Журнал финализированных блоков: одна каноническая JSON-строка на блок."""

    def __init__(self, path: str):
        self.path = path
        self._journal = JsonLinesJournal(path)

    def append(self, block: Block) -> None:
        self._journal.append(block.to_dict())

    def blocks(self) -> Iterator[Block]:
        height = 0
        try:
            for record in self._journal:
                height += 1
                yield Block.from_dict(record)
        except (ValueError, KeyError, TypeError) as e:
            raise JournalReplayError(height, str(e))

    def replay(self, genesis: Genesis) -> Tuple[LedgerState, List[Block]]:
        """Восстанавливает состояние из генезиса и журнала, сверяя stateRoot."""
        state = genesis_state(genesis)
        chain: List[Block] = []
        for block in self.blocks():
            try:
                state, _, _ = apply_block(state, block)
            except LedgerContractError as e:
                raise JournalReplayError(block.height, e.reason)
            chain.append(block)
        logger.info(f"Журнал {self.path}: воспроизведено {len(chain)} блоков")
        return state, chain
