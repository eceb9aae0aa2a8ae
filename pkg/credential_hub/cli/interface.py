#!/usr/bin/env python3
"""Интерфейс командной строки."""

import functools
import json
import sys
from typing import Callable, List, Optional

from prettytable import PrettyTable

from ..consensus.simulation import Scenario, run_simulation
from ..core.credentials import serialize_document
from ..core.exceptions import (
    BacipError,
    ConfigError,
    SchemaViolationError,
    TransactionRejectedError,
    UnsupportedAlgorithmError,
)
from ..core.usecases import CredentialService, owner_of_key_id, parse_permissions
from ..core.utils import Instant, b64encode, parse_instant, utc_now
from ..gateway.app import create_app
from ..gateway.auth import mint_token
from ..infra.config import CliConfig

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

GLOBAL_FLAGS = ("--config", "--keystore")


class UsageError(Exception):
    """Неверные аргументы команды (код выхода 2)."""


def _fail(message: str) -> None:
    print(message, file=sys.stderr)


def catch_domain_errors(func):
    """Декоратор: доменные исключения -> сообщение в stderr и код выхода."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except UsageError as e:
            _fail(f"Ошибка использования: {e}")
            return EXIT_USAGE
        except (ConfigError, UnsupportedAlgorithmError) as e:
            _fail(f"Ошибка: {e}")
            return EXIT_USAGE
        except (FileNotFoundError, IsADirectoryError) as e:
            _fail(f"Файл недоступен: {e.filename}")
            return EXIT_USAGE
        except SchemaViolationError as e:
            _fail(f"Ошибка: {e}")
            for violation in e.violations:
                _fail(f"  {violation.path}: {violation.reason}")
            return EXIT_FAILURE
        except TransactionRejectedError as e:
            _fail(f"Транзакция отклонена реестром: {e.reason.value}")
            return EXIT_FAILURE
        except BacipError as e:
            _fail(f"Ошибка: {e}")
            return EXIT_FAILURE
        except Exception as e:
            _fail(f"Непредвиденная ошибка: {e}")
            return EXIT_FAILURE

    return wrapper


class CLI:
    """Главный класс интерфейса командной строки."""

    def __init__(self, clock: Callable[[], Instant] = utc_now, rng=None):
        self.clock = clock
        self.rng = rng
        self.config_path: Optional[str] = None
        self.keystore_path: Optional[str] = None
        self._node: Optional[CredentialService] = None
        self.commands = {
            "keygen": self.cmd_keygen,
            "issue": self.cmd_issue,
            "verify": self.cmd_verify,
            "revoke": self.cmd_revoke,
            "consent": self.cmd_consent,
            "grant": self.cmd_grant,
            "token": self.cmd_token,
            "audit": self.cmd_audit,
            "anchor-proof": self.cmd_anchor_proof,
            "serve": self.cmd_serve,
            "simulate": self.cmd_simulate,
            "help": self.cmd_help,
        }

    def run(self, argv: Optional[List[str]] = None) -> int:
        """Выполняет одну команду и возвращает код выхода."""
        args = list(sys.argv[1:] if argv is None else argv)
        try:
            args = self._take_global_flags(args)
        except UsageError as e:
            _fail(f"Ошибка использования: {e}")
            return EXIT_USAGE
        if not args:
            self.cmd_help([])
            return EXIT_USAGE
        cmd, rest = args[0].lower(), args[1:]
        if cmd not in self.commands:
            _fail(f"Неизвестная команда: {cmd}. Введите 'help'.")
            return EXIT_USAGE
        return self.commands[cmd](rest)

    def node(self) -> CredentialService:
        if self._node is None:
            config = CliConfig.from_settings(self.config_path, self.keystore_path)
            self._node = CredentialService(config, clock=self.clock, rng=self.rng)
        return self._node

    # ---------- Ключи и права ----------
    @catch_domain_errors
    def cmd_keygen(self, args: List[str]) -> int:
        """Создать пару ключей; --register регистрирует её в реестре."""
        parser = self._parse_args(
            args,
            expected=("--alg", "--key-id"),
            optional=("--owner", "--permissions", "--issuer-uri", "--as"),
            flags=("--register",),
        )
        permissions = None
        if "--permissions" in parser:
            permissions = self._permissions(parser["--permissions"])
        key = self.node().create_key(
            parser["--alg"],
            parser["--key-id"],
            owner=parser.get("--owner"),
            register="--register" in parser,
            permissions=permissions,
            issuer_uri=parser.get("--issuer-uri"),
            actor=parser.get("--as"),
        )
        print(f"Ключ {key.key_id} ({key.algorithm.value}) сохранён в хранилище.")
        print(b64encode(key.public_key))
        return EXIT_OK

    @catch_domain_errors
    def cmd_grant(self, args: List[str]) -> int:
        """Выдать права пользователю (SetPermissions от администратора)."""
        parser = self._parse_args(
            args, expected=("--user", "--permissions"), optional=("--as",)
        )
        node = self.node()
        result = node.grant(
            parser["--user"],
            self._permissions(parser["--permissions"]),
            actor=parser.get("--as", node.config.admin_did),
        )
        print(
            f"Права {result['user']}: {result['permissionBits']} "
            f"(транзакция {result['txId'][:12]})"
        )
        return EXIT_OK

    @catch_domain_errors
    def cmd_token(self, args: List[str]) -> int:
        """Выпустить JWT (ES256) ключом из хранилища."""
        parser = self._parse_args(
            args,
            expected=("--key-id", "--role"),
            optional=("--sub", "--name", "--iat", "--lifetime"),
        )
        keystore = self.node().keystore
        key_id = parser["--key-id"]
        key = keystore.get(key_id)
        sub = (
            parser.get("--sub")
            or keystore.owner_of(key_id)
            or owner_of_key_id(key_id)
            or key_id
        )
        iat = self._int(parser, "--iat")
        if iat is None:
            iat = int(parse_instant(self.clock()).timestamp())
        lifetime = self._int(parser, "--lifetime")
        token = mint_token(
            key,
            sub=sub,
            role=parser["--role"],
            iat=iat,
            name=parser.get("--name"),
            exp=iat + lifetime if lifetime is not None else None,
        )
        print(token)
        return EXIT_OK

    # ---------- Удостоверения ----------
    @catch_domain_errors
    def cmd_issue(self, args: List[str]) -> int:
        """Выпустить удостоверение по JSON-телу запроса."""
        parser = self._parse_args(
            args,
            expected=("--input",),
            optional=("--as", "--output"),
            flags=("--canonical",),
        )
        node = self.node()
        body = self._read_json(parser["--input"])
        result = node.issue(body, actor=parser.get("--as", node.config.admin_did))
        text = serialize_document(
            result.document, pretty="--canonical" not in parser
        ).decode("utf-8")
        output = parser.get("--output")
        if output:
            with open(output, "w", encoding="utf-8") as f:
                f.write(text + "\n")
            print(f"Удостоверение {result.document.id} выпущено: {output}")
        else:
            print(text)
        return EXIT_OK

    @catch_domain_errors
    def cmd_verify(self, args: List[str]) -> int:
        """Проверить документ (--input) или статус по идентификатору (--id)."""
        parser = self._parse_args(args, optional=("--input", "--id", "--at"))
        if ("--input" in parser) == ("--id" in parser):
            raise UsageError("нужен ровно один из аргументов --input или --id")
        at = parser.get("--at")
        if "--input" in parser:
            with open(parser["--input"], "rb") as f:
                raw = f.read()
            response = self.node().verify(document=raw, at=at)
        else:
            response = self.node().verify(credential_id=parser["--id"], at=at)
        print(response.status.value)
        return EXIT_OK if response.valid else EXIT_FAILURE

    @catch_domain_errors
    def cmd_revoke(self, args: List[str]) -> int:
        """Отозвать удостоверение."""
        parser = self._parse_args(
            args, expected=("--id",), optional=("--as", "--reason")
        )
        node = self.node()
        result = node.revoke(
            parser["--id"],
            actor=parser.get("--as", node.config.admin_did),
            reason=parser.get("--reason"),
        )
        if result["alreadyRevoked"]:
            print(f"Удостоверение {parser['--id']} уже отозвано.")
        else:
            print(
                f"Удостоверение {parser['--id']} отозвано "
                f"(событие {result['eventId']}, транзакция {result['txId'][:12]})"
            )
        return EXIT_OK

    @catch_domain_errors
    def cmd_consent(self, args: List[str]) -> int:
        """Дать, отозвать согласие или удалить данные субъекта."""
        parser = self._parse_args(args, expected=("--action", "--as"))
        result = self.node().consent(parser["--action"], actor=parser["--as"])
        state = "дано" if result["consentGiven"] else "не дано"
        print(f"{result['action']}: {result['subject']}, согласие {state}")
        return EXIT_OK

    # ---------- Запросы ----------
    @catch_domain_errors
    def cmd_audit(self, args: List[str]) -> int:
        """Показать журнал аудита с фильтрами."""
        parser = self._parse_args(
            args, optional=("--event", "--subject", "--from", "--to", "--limit")
        )
        try:
            events = self.node().audit(
                event_name=parser.get("--event"),
                subject=parser.get("--subject"),
                from_height=self._int(parser, "--from"),
                to_height=self._int(parser, "--to"),
                limit=self._int(parser, "--limit"),
            )
        except ValueError as e:
            raise UsageError(str(e))
        if not events:
            print("Журнал аудита пуст.")
            return EXIT_OK
        table = PrettyTable()
        table.field_names = [
            "#", "Блок", "Событие", "Субъект", "Транзакция", "Детали"
        ]
        table.align["Субъект"] = "l"
        for event in events:
            table.add_row(
                [
                    event.sequence,
                    event.height,
                    event.event_name.value,
                    event.subject,
                    event.tx_id[:12],
                    event.detail or "",
                ]
            )
        print(table)
        return EXIT_OK

    @catch_domain_errors
    def cmd_anchor_proof(self, args: List[str]) -> int:
        """Доказательство включения по последнему якорю и его проверка."""
        parser = self._parse_args(args, expected=("--id",))
        result = self.node().anchor_proof(parser["--id"])
        print(json.dumps(result, indent=2, sort_keys=True, ensure_ascii=False))
        return EXIT_OK if result["verified"] else EXIT_FAILURE

    # ---------- Сервис и симуляция ----------
    @catch_domain_errors
    def cmd_serve(self, args: List[str]) -> int:
        """Запустить REST-шлюз."""
        parser = self._parse_args(args, optional=("--bind",))
        node = self.node()
        if "--bind" in parser:
            node.config.gateway_bind = parser["--bind"]
        try:
            host, port = node.config.bind_host, node.config.bind_port
        except (IndexError, ValueError):
            raise UsageError(f"некорректный адрес {node.config.gateway_bind}")
        print(f"Шлюз слушает http://{host}:{port}")
        create_app(node).run(host=host, port=port, threaded=True)
        return EXIT_OK

    @catch_domain_errors
    def cmd_simulate(self, args: List[str]) -> int:
        """Прогнать сценарий консенсуса и записать отчёт."""
        parser = self._parse_args(
            args, expected=("--scenario",), optional=("--report",)
        )
        scenario = Scenario.load(parser["--scenario"])
        report = run_simulation(scenario, parser.get("--report"))

        byzantine = ", ".join(
            f"{node}:{behavior}" for node, behavior in report.byzantine.items()
        )
        table = PrettyTable()
        table.field_names = ["Показатель", "Значение"]
        table.align["Показатель"] = "l"
        table.add_row(["n / f / кворум", f"{report.n} / {report.f} / {report.quorum}"])
        table.add_row(["Византийские", byzantine or "-"])
        table.add_row(["Финализировано высот", report.heights_finalized])
        table.add_row(["Тиков", report.ticks])
        table.add_row(["Нарушения безопасности", report.safety_violations])
        table.add_row(["Нарушения валидности", report.validity_violations])
        table.add_row(["Двойные голоса честных", report.honest_equivocations])
        table.add_row(["Ожидается небезопасность", report.expect_unsafe])
        print(table)
        if parser.get("--report"):
            print(f"Отчёт записан: {parser['--report']}")
        return EXIT_OK if report.passed else EXIT_FAILURE

    def cmd_help(self, args: List[str]) -> int:
        """Показать справку."""
        table = PrettyTable()
        table.field_names = ["Команда", "Описание"]
        table.align["Команда"] = "l"
        table.align["Описание"] = "l"
        table.max_width["Описание"] = 60

        table.add_row(
            [
                "keygen --alg es256|ed25519 --key-id ID [--owner DID] [--register] "
                "[--permissions N|ROLE] [--issuer-uri URI]",
                "Создать ключ; с --register зарегистрировать в реестре.",
            ]
        )
        table.add_row(
            [
                "issue --input FILE [--as DID] [--output FILE] [--canonical]",
                "Выпустить удостоверение по телу запроса.",
            ]
        )
        table.add_row(
            [
                "verify (--input FILE | --id ID) [--at INSTANT]",
                "Проверить; код 0 только для статуса valid.",
            ]
        )
        table.add_row(["revoke --id ID [--as DID] [--reason TEXT]", "Отозвать."])
        table.add_row(
            ["consent --action give|withdraw|delete --as DID", "Согласие и удаление."]
        )
        table.add_row(["grant --user DID --permissions N|ROLE", "Выдать права."])
        table.add_row(
            [
                "token --key-id ID --role ROLE [--sub SUB] [--iat T] [--lifetime S]",
                "Выпустить JWT ES256.",
            ]
        )
        table.add_row(
            [
                "audit [--event NAME] [--subject DID] [--from H] [--to H] [--limit N]",
                "Журнал аудита.",
            ]
        )
        table.add_row(["anchor-proof --id ID", "Доказательство по якорю."])
        table.add_row(["serve [--bind HOST:PORT]", "Запустить REST-шлюз."])
        table.add_row(
            ["simulate --scenario FILE [--report FILE]", "Симуляция консенсуса."]
        )
        table.add_row(["help", "Показать эту справку."])

        print("Глобальные флаги: --config PATH, --keystore PATH")
        print("Доступные команды:")
        print(table)
        return EXIT_OK

    # ---------- Вспомогательные методы ----------
    def _take_global_flags(self, args: List[str]) -> List[str]:
        while args and args[0] in GLOBAL_FLAGS:
            if len(args) < 2:
                raise UsageError(f"аргумент {args[0]} должен иметь значение")
            if args[0] == "--config":
                self.config_path = args[1]
            else:
                self.keystore_path = args[1]
            args = args[2:]
        return args

    def _parse_args(
        self,
        args: List[str],
        expected: tuple = (),
        optional: tuple = (),
        flags: tuple = (),
    ) -> dict:
        """
        Простой парсер аргументов вида --key value и флагов без значения.
        Возвращает словарь {key: value}; флаг даёт значение True.
        """
        known = set(expected) | set(optional)
        result = {}
        i = 0
        while i < len(args):
            key = args[i]
            if key in flags:
                result[key] = True
                i += 1
            elif key in known:
                if i + 1 < len(args) and not args[i + 1].startswith("--"):
                    result[key] = args[i + 1]
                    i += 2
                else:
                    raise UsageError(f"аргумент {key} должен иметь значение")
            else:
                raise UsageError(f"неизвестный аргумент: {key}")

        for req in expected:
            if req not in result:
                raise UsageError(f"обязательный аргумент {req} отсутствует")
        return result

    @staticmethod
    def _int(parser: dict, key: str) -> Optional[int]:
        if key not in parser:
            return None
        try:
            return int(parser[key])
        except ValueError:
            raise UsageError(f"{key} должен быть целым числом")

    @staticmethod
    def _permissions(value: str) -> int:
        try:
            return parse_permissions(value)
        except ValueError as e:
            raise UsageError(str(e))

    @staticmethod
    def _read_json(path: str):
        with open(path, "r", encoding="utf-8") as f:
            try:
                return json.load(f)
            except json.JSONDecodeError as e:
                raise UsageError(f"{path} не является JSON: {e}")
