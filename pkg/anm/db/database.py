from pathlib import Path

from sqlalchemy.engine import make_url
from sqlalchemy.ext.asyncio import (
    AsyncEngine,
    AsyncSession,
    async_sessionmaker,
    create_async_engine,
)

from anm.db.models import Base


def create_engine(url: str) -> AsyncEngine:
    """Async движок для URL вида sqlite+aiosqlite:///path/anm.db."""
    database = make_url(url).database
    if database and database != ":memory:":
        # Ensure data directory exists
        Path(database).parent.mkdir(parents=True, exist_ok=True)
    return create_async_engine(url, echo=False, future=True, pool_pre_ping=True)


def session_factory(engine: AsyncEngine) -> async_sessionmaker[AsyncSession]:
    return async_sessionmaker(
        engine,
        class_=AsyncSession,
        expire_on_commit=False,
        autoflush=False,
    )


async def init_db(engine: AsyncEngine) -> None:
    """Инициализация базы данных - создание таблиц."""
    async with engine.begin() as conn:
        await conn.run_sync(Base.metadata.create_all)


async def close_db(engine: AsyncEngine) -> None:
    """Закрытие подключения к БД."""
    await engine.dispose()

