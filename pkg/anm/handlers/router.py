"""Роутеры команд и диспетчер CLI.

Команды регистрируются декоратором `@router.command(...)` на роутерах,
диспетчер собирает из них argparse-парсер, ведёт журнал запусков в БД
и переводит ошибки `AnmError` в коды выхода.
"""

import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Awaitable, Callable, Sequence

from sqlalchemy.ext.asyncio import AsyncSession, async_sessionmaker

from anm.config.config import Settings
from anm.db.database import close_db, create_engine, init_db, session_factory
from anm.db.requests_db import ArtifactRepository, RunRepository
from anm.errors import AnmError
from anm.lexicon.lexicon import ARG_LEXICON, COMMAND_LEXICON, MESSAGE_LEXICON
from anm.utils.helpers import config_hash

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Arg:
    flags: tuple[str, ...]
    options: dict[str, Any]


def arg(*flags: str, **options: Any) -> Arg:
    """Описание флага команды; help берётся из ARG_LEXICON, если не задан."""
    key = flags[0].lstrip("-").replace("-", "_")
    options.setdefault("help", ARG_LEXICON.get(key))
    return Arg(flags, options)


@dataclass
class HandlerContext:
    """Что получает обработчик кроме аргументов: настройки, сессии БД и id запуска."""

    settings: Settings
    sessions: async_sessionmaker[AsyncSession]
    run_id: int
    lines: list[str] = field(default_factory=list)

    async def record(self, kind: str, path: str | Path, checksum: str = "") -> None:
        async with self.sessions() as session:
            await ArtifactRepository.add_artifact(session, self.run_id, kind, str(path), checksum)
        self.answer(MESSAGE_LEXICON["saved"].format(kind=kind, path=path))

    def answer(self, text: str) -> None:
        self.lines.append(text)
        print(text)


Handler = Callable[[argparse.Namespace, HandlerContext], Awaitable[None]]


@dataclass
class Command:
    name: str
    handler: Handler
    args: tuple[Arg, ...]


class Router:
    def __init__(self, name: str) -> None:
        self.name = name
        self.commands: dict[str, Command] = {}

    def command(self, name: str, *args: Arg) -> Callable[[Handler], Handler]:
        def decorator(handler: Handler) -> Handler:
            self.commands[name] = Command(name, handler, args)
            return handler

        return decorator


class Dispatcher:
    def __init__(self) -> None:
        self.commands: dict[str, Command] = {}

    def include_router(self, router: Router) -> None:
        for name, command in router.commands.items():
            if name in self.commands:
                raise ValueError(f"command {name!r} registered twice")
            self.commands[name] = command

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="python -m anm", description=COMMAND_LEXICON["description"])
        sub = parser.add_subparsers(dest="command", required=True)
        for name, command in self.commands.items():
            cmd_parser = sub.add_parser(name, help=COMMAND_LEXICON.get(name), description=COMMAND_LEXICON.get(name))
            for a in command.args:
                cmd_parser.add_argument(*a.flags, **a.options)
        return parser

    async def dispatch(self, argv: Sequence[str], settings: Settings) -> int:
        """Выполняет одну команду и возвращает код выхода.

        Примечания:
            - AnmError логируется и превращается в свой exit_code
            - Остальные исключения пробрасываются
        """
        args = self.build_parser().parse_args(list(argv))
        command = self.commands[args.command]
        resolved = {k: v for k, v in vars(args).items()}
        engine = create_engine(settings.db.url)
        try:
            await init_db(engine)
            sessions = session_factory(engine)
            async with sessions() as session:
                run = await RunRepository.create_run(session, args.command, config_hash(resolved))
            ctx = HandlerContext(settings, sessions, run.id)
            logger.info("Run %d: %s", run.id, args.command)
            exit_code = 0
            try:
                await command.handler(args, ctx)
            except AnmError as exc:
                logger.error("%s failed: %s", args.command, exc)
                ctx.answer(MESSAGE_LEXICON["error"].format(error=exc))
                exit_code = exc.exit_code
            async with sessions() as session:
                await RunRepository.finish_run(session, run.id, exit_code)
            return exit_code
        finally:
            await close_db(engine)
