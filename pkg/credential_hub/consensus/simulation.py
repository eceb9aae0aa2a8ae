"""
Детерминированный дискретно-событийный симулятор сети валидаторов (simpy)
с внедрением византийского поведения. Время измеряется логическими тиками.
"""

import json
import random
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Dict, List, Optional, Tuple

import simpy

from ..core.crypto import generate_keypair
from ..core.exceptions import ConfigError, LedgerContractError
from ..core.ledger import (
    Genesis,
    KeyRecord,
    Transaction,
    TxKind,
    apply_block,
    build_block,
    build_transaction,
    genesis_state,
)
from ..core.models import ProofType
from ..core.utils import canonical_json, format_instant, sha256
from ..decorators import log_action
from ..logging_config import get_logger
from .config import ConsensusConfig, ValidatorInfo
from .ibft import ConsensusMessage, IbftNode, MessageKind, Outbound

logger = get_logger(__name__)

SILENT = "Silent"
EQUIVOCATE_LEADER = "EquivocateLeader"
RANDOM_VOTES = "RandomVotes"
BEHAVIORS = (SILENT, EQUIVOCATE_LEADER, RANDOM_VOTES)

SIM_EPOCH = datetime(2021, 5, 1, tzinfo=timezone.utc)
SIM_ADMIN = "did:bacip:admin"


# ---------- Сценарий ----------
@dataclass
class Scenario:
    n: int
    seed: int = 0
    byzantine: Dict[int, str] = field(default_factory=dict)
    round_timeout: int = 10
    default_delay: int = 1
    edge_delays: Dict[Tuple[int, int], int] = field(default_factory=dict)
    jitter: int = 0
    drop_rate: float = 0.0
    tx_count: int = 0
    tx_interval: int = 1
    heights: int = 5
    block_interval: int = 1
    max_ticks: int = 10_000

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n должно быть >= 1")
        for index, behavior in self.byzantine.items():
            if not 0 <= index < self.n:
                raise ConfigError(
                    f"византийский узел {index} вне диапазона 0..{self.n - 1}"
                )
            if behavior not in BEHAVIORS:
                raise ConfigError(f"неизвестное поведение '{behavior}'")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError("dropRate должен быть в [0, 1)")
        if min(self.default_delay, self.jitter, self.round_timeout - 1) < 0:
            raise ConfigError("задержки и таймауты должны быть неотрицательны")
        if self.heights < 1 or self.max_ticks < 1:
            raise ConfigError("heights и maxTicks должны быть >= 1")

    @staticmethod
    def _node_index(value) -> int:
        if isinstance(value, str) and value.startswith("v") and value[1:].isdigit():
            return int(value[1:])
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"некорректный идентификатор узла: {value!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ConfigError("сценарий должен быть JSON-объектом")
        try:
            delays = data.get("delays", {}) or {}
            byzantine = {
                cls._node_index(item["node"]): item["behavior"]
                for item in data.get("byzantine", [])
            }
            edges = {
                (cls._node_index(e["from"]), cls._node_index(e["to"])): int(e["delay"])
                for e in delays.get("edges", [])
            }
            return cls(
                n=int(data["n"]),
                seed=int(data.get("seed", 0)),
                byzantine=byzantine,
                round_timeout=int(data.get("roundTimeout", 10)),
                default_delay=int(delays.get("default", 1)),
                edge_delays=edges,
                jitter=int(delays.get("jitter", 0)),
                drop_rate=float(data.get("dropRate", 0.0)),
                tx_count=int(data.get("txCount", 0)),
                tx_interval=int(data.get("txInterval", 1)),
                heights=int(data.get("heights", 5)),
                block_interval=int(data.get("blockInterval", 1)),
                max_ticks=int(data.get("maxTicks", 10_000)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ConfigError(f"некорректный сценарий: {e}")

    @classmethod
    def load(cls, path: str) -> "Scenario":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"файл сценария не найден: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"сценарий не является JSON: {e}")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "byzantine": [
                {"node": f"v{i}", "behavior": b}
                for i, b in sorted(self.byzantine.items())
            ],
            "roundTimeout": self.round_timeout,
            "delays": {
                "default": self.default_delay,
                "jitter": self.jitter,
                "edges": [
                    {"from": f"v{s}", "to": f"v{t}", "delay": d}
                    for (s, t), d in sorted(self.edge_delays.items())
                ],
            },
            "dropRate": self.drop_rate,
            "txCount": self.tx_count,
            "txInterval": self.tx_interval,
            "heights": self.heights,
            "blockInterval": self.block_interval,
            "maxTicks": self.max_ticks,
        }


# ---------- Отчёт ----------
@dataclass
class SimReport:
    scenario: dict
    n: int
    f: int
    quorum: int
    byzantine: Dict[str, str]
    expect_unsafe: bool
    ticks: int
    heights_finalized: int
    liveness_per_1000_ticks: float
    safety_violations: int
    validity_violations: int
    honest_equivocations: int
    max_final_round: int
    messages_sent: Dict[str, int]
    messages_dropped: int
    nodes: Dict[str, dict]

    @property
    def passed(self) -> bool:
        return (
            self.safety_violations == 0
            and self.validity_violations == 0
            and self.honest_equivocations == 0
        )

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n": self.n,
            "f": self.f,
            "quorum": self.quorum,
            "byzantine": self.byzantine,
            "expectUnsafe": self.expect_unsafe,
            "ticks": self.ticks,
            "heightsFinalized": self.heights_finalized,
            "livenessPer1000Ticks": self.liveness_per_1000_ticks,
            "safetyViolations": self.safety_violations,
            "validityViolations": self.validity_violations,
            "honestEquivocations": self.honest_equivocations,
            "maxFinalRound": self.max_final_round,
            "messagesSent": self.messages_sent,
            "messagesDropped": self.messages_dropped,
            "nodes": self.nodes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)


def expect_unsafe(n: int, byzantine_count: int) -> bool:
    """Безопасность не гарантирована: кворумы могут пересечься без честного узла."""
    config_f = (n - 1) // 3
    quorum = 2 * config_f + 1
    return byzantine_count > config_f or 2 * quorum - n < byzantine_count + 1


# ---------- Византийские узлы ----------
class _EquivocatingNode(IbftNode):
    """Лидером рассылает два разных блока половинам сети; голосует за всё."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._voted: set = set()

    def propose(self, clock) -> List[Outbound]:
        honest = super().propose(clock)
        if not honest:
            return []
        first = honest[0].message
        later = clock + timedelta(seconds=1)
        alternative = build_block(self.state, [], self.validator_id, later)[0]
        if alternative.hash == first.block_hash:
            later += timedelta(seconds=1)
            alternative = build_block(self.state, [], self.validator_id, later)[0]
        second = self._sign(
            replace(
                first, block_hash=alternative.hash, block=alternative, signature=b""
            )
        )
        others = [v for v in self.config.ids if v != self.validator_id]
        half = (len(others) + 1) // 2
        outbound = [Outbound(first, self.validator_id)]
        outbound += [Outbound(first, v) for v in others[:half]]
        outbound += [Outbound(second, v) for v in others[half:]]
        outbound += self._vote_for(first.round, first.block)
        outbound += self._vote_for(second.round, second.block)
        return outbound

    def _on_pre_prepare(self, message, clock):
        outbound = super()._on_pre_prepare(message, clock)
        block = message.block
        if block is not None and block.hash == message.block_hash:
            outbound = outbound + self._vote_for(message.round, block)
        return outbound

    def _vote_for(self, round_: int, block) -> List[Outbound]:
        if (round_, block.hash) in self._voted:
            return []
        self._voted.add((round_, block.hash))
        common = dict(height=self.height, round=round_, sender=self.validator_id)
        return [
            self._broadcast(
                ConsensusMessage(MessageKind.PREPARE, block_hash=block.hash, **common)
            ),
            self._broadcast(
                ConsensusMessage(
                    MessageKind.COMMIT, block_hash=block.hash, block=block, **common
                )
            ),
        ]

    def _reset_height(self) -> None:
        super()._reset_height()
        self._voted = set()


class _RandomVoter(IbftNode):
    """Случайные голоса за несуществующие хеши и случайные RoundChange."""

    def __init__(self, *args, rng: random.Random, **kwargs):
        super().__init__(*args, **kwargs)
        self._rng = rng

    def handle_message(self, message, clock):
        outbound, finalized = super().handle_message(message, clock)
        if self._rng.random() < 0.3:
            kind = self._rng.choice(
                [MessageKind.PREPARE, MessageKind.COMMIT, MessageKind.ROUND_CHANGE]
            )
            if kind is MessageKind.ROUND_CHANGE:
                noise = ConsensusMessage(
                    kind, self.height, self.round + 1, self.validator_id
                )
            else:
                noise = ConsensusMessage(
                    kind,
                    self.height,
                    self.round,
                    self.validator_id,
                    block_hash=self._rng.randbytes(32).hex(),
                )
            outbound = outbound + [self._broadcast(noise)]
        return outbound, finalized


# ---------- Прогон ----------
def _transaction_schedule(scenario: Scenario, admin_key) -> List[Transaction]:
    """SetPermissions от администратора; каждая седьмая с неизвестным битом."""
    txs = []
    for i in range(scenario.tx_count):
        bits = 16 if i % 7 == 6 else i % 16
        txs.append(
            build_transaction(
                TxKind.SET_PERMISSIONS,
                SIM_ADMIN,
                {"user": f"did:bacip:user{i}", "permissionBits": bits},
                admin_key,
                created=format_instant(SIM_EPOCH),
                nonce=i,
            )
        )
    return txs


class _Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        rng = random.Random(scenario.seed)
        self.net_rng = random.Random(f"{scenario.seed}:network")
        keys = [
            generate_keypair(ProofType.ED25519, rng=rng, key_id=f"v{i}")
            for i in range(scenario.n)
        ]
        self.config = ConsensusConfig(
            validators=tuple(ValidatorInfo(k.key_id, k.public_key) for k in keys),
            round_timeout=scenario.round_timeout,
        )
        admin_key = generate_keypair(
            ProofType.ED25519, rng=rng, key_id=f"{SIM_ADMIN}#key-1"
        )
        self.genesis = Genesis(
            admin=SIM_ADMIN,
            keys=(
                KeyRecord(
                    admin_key.key_id, SIM_ADMIN, ProofType.ED25519, admin_key.public_key
                ),
            ),
            timestamp=format_instant(SIM_EPOCH),
        )
        state = genesis_state(self.genesis)
        self.transactions = _transaction_schedule(scenario, admin_key)

        self.nodes: List[IbftNode] = []
        for i, key in enumerate(keys):
            behavior = scenario.byzantine.get(i)
            args = (self.config, key.key_id, key, state)
            if behavior == EQUIVOCATE_LEADER:
                node = _EquivocatingNode(*args)
            elif behavior == RANDOM_VOTES:
                node = _RandomVoter(*args, rng=random.Random(f"{scenario.seed}:{i}"))
            else:
                node = IbftNode(*args)
            self.nodes.append(node)
        self.index = {node.validator_id: i for i, node in enumerate(self.nodes)}

        self.env = simpy.Environment()
        self.done = self.env.event()
        self.sent: Dict[str, int] = {kind.value: 0 for kind in MessageKind}
        self.dropped = 0
        self.prepares: Dict[Tuple[int, int, int], set] = {}
        self.final_rounds: Dict[int, List[int]] = {i: [] for i in range(scenario.n)}

    def honest(self, i: int) -> bool:
        return i not in self.scenario.byzantine

    def silent(self, i: int) -> bool:
        return self.scenario.byzantine.get(i) == SILENT

    def clock(self) -> datetime:
        return SIM_EPOCH + timedelta(seconds=int(self.env.now))

    # ---------- сеть ----------
    def send(self, sender: int, outbound: List[Outbound]) -> None:
        if self.silent(sender):
            return
        for item in outbound:
            message = item.message
            if self.honest(sender) and message.kind is MessageKind.PREPARE:
                key = (sender, message.height, message.round)
                self.prepares.setdefault(key, set()).add(message.block_hash)
            if item.recipient is None:
                targets = range(self.scenario.n)
            else:
                targets = [self.index[item.recipient]]
            for target in targets:
                if target == sender:
                    delay = 0
                else:
                    self.sent[message.kind.value] += 1
                    drop_rate = self.scenario.drop_rate
                    if drop_rate and self.net_rng.random() < drop_rate:
                        self.dropped += 1
                        continue
                    delay = self.scenario.edge_delays.get(
                        (sender, target), self.scenario.default_delay
                    )
                    if self.scenario.jitter:
                        delay += self.net_rng.randint(0, self.scenario.jitter)
                self.env.process(self._deliver(delay, target, message))

    def _deliver(self, delay: int, target: int, message: ConsensusMessage):
        yield self.env.timeout(delay)
        if self.silent(target):
            return
        node = self.nodes[target]
        before = (node.height, node.round)
        outbound, finalized = node.handle_message(message, self.clock())
        self._after(target, before, outbound, finalized)

    def _after(self, i: int, before, outbound, finalized) -> None:
        node = self.nodes[i]
        for block in finalized:
            self.final_rounds[i].append(block.round)
        self.send(i, outbound)
        if (node.height, node.round) != before:
            self._arm(i)
        if finalized:
            self._check_done()

    # ---------- таймеры ----------
    def _arm(self, i: int) -> None:
        node = self.nodes[i]
        token = (node.height, node.round)
        self.env.process(self._timer(i, token, self.config.round_deadline(node.round)))
        if node.round == 0 and node.is_leader():
            self.env.process(self._propose_later(i, token))

    def _timer(self, i: int, token, delay: int):
        yield self.env.timeout(delay)
        node = self.nodes[i]
        if (node.height, node.round) != token or self.done.triggered:
            return
        outbound = node.on_timeout(self.clock())
        self._after(i, token, outbound, [])

    def _propose_later(self, i: int, token):
        yield self.env.timeout(self.scenario.block_interval)
        node = self.nodes[i]
        if (node.height, node.round) != token:
            return
        self._after(i, token, node.propose(self.clock()), [])

    def _inject(self, tx: Transaction, at: int):
        yield self.env.timeout(at)
        for node in self.nodes:
            node.submit(tx)

    def _check_done(self) -> None:
        target = self.scenario.heights
        honest = [n for i, n in enumerate(self.nodes) if self.honest(i)]
        if not self.done.triggered and all(len(n.chain) >= target for n in honest):
            self.done.succeed()

    # ---------- запуск и отчёт ----------
    def run(self) -> SimReport:
        for position, tx in enumerate(self.transactions):
            self.env.process(self._inject(tx, position * self.scenario.tx_interval))
        for i in range(self.scenario.n):
            if not self.silent(i):
                self._arm(i)
        horizon = self.env.timeout(self.scenario.max_ticks)
        if not any(self.honest(i) for i in range(self.scenario.n)):
            self.env.run(until=horizon)
        else:
            self.env.run(until=self.env.any_of([self.done, horizon]))
        return self.report()

    def report(self) -> SimReport:
        scenario = self.scenario
        honest_ids = [i for i in range(scenario.n) if self.honest(i)]
        by_height: Dict[int, set] = {}
        for i in honest_ids:
            for block in self.nodes[i].chain:
                by_height.setdefault(block.height, set()).add(block.hash)
        safety = sum(1 for hashes in by_height.values() if len(hashes) > 1)
        validity = sum(1 for i in honest_ids if not self._replays(self.nodes[i].chain))
        equivocations = sum(1 for hashes in self.prepares.values() if len(hashes) > 1)
        finalized = min((len(self.nodes[i].chain) for i in honest_ids), default=0)
        ticks = int(self.env.now)
        rounds = [r for i in honest_ids for r in self.final_rounds[i]]

        nodes = {}
        for i, node in enumerate(self.nodes):
            hashes = [block.hash for block in node.chain]
            nodes[node.validator_id] = {
                "honest": self.honest(i),
                "behavior": scenario.byzantine.get(i),
                "height": len(node.chain),
                "chainDigest": sha256(canonical_json(hashes)).hex(),
                "blockHashes": hashes,
                "discarded": node.discarded,
            }
        return SimReport(
            scenario=scenario.to_dict(),
            n=self.config.n,
            f=self.config.f,
            quorum=self.config.quorum,
            byzantine={f"v{i}": b for i, b in sorted(scenario.byzantine.items())},
            expect_unsafe=expect_unsafe(scenario.n, len(scenario.byzantine)),
            ticks=ticks,
            heights_finalized=finalized,
            liveness_per_1000_ticks=round(finalized * 1000 / max(ticks, 1), 3),
            safety_violations=safety,
            validity_violations=validity,
            honest_equivocations=equivocations,
            max_final_round=max(rounds, default=0),
            messages_sent=dict(self.sent),
            messages_dropped=self.dropped,
            nodes=nodes,
        )

    def _replays(self, chain) -> bool:
        state = genesis_state(self.genesis)
        try:
            for block in chain:
                state, _, _ = apply_block(state, block)
        except LedgerContractError:
            return False
        return True


@log_action("SIMULATE")
def run_simulation(scenario: Scenario, report_path: Optional[str] = None) -> SimReport:
    """Прогон сценария; при одинаковом seed отчёт побайтно совпадает."""
    report = _Simulation(scenario).run()
    logger.info(
        f"Симуляция n={scenario.n}, seed={scenario.seed}: "
        f"высот {report.heights_finalized}, нарушений безопасности "
        f"{report.safety_violations}"
    )
    if report_path:
        with open(report_path, "w", encoding="utf-8") as f:
            f.write(report.to_json() + "\n")
    return report
