from datetime import datetime, timezone
from typing import Iterable, Optional

from sqlalchemy import select
from sqlalchemy.ext.asyncio import AsyncSession

from anm.campaign.runner import Cell
from anm.db.models import Artifact, CellResult, Run


class RunRepository:
    """CRUD операции для Run."""

    @staticmethod
    async def create_run(session: AsyncSession, command: str, config_hash: str) -> Run:
        """Зарегистрировать новый запуск команды."""
        run = Run(command=command, config_hash=config_hash, status="running")
        session.add(run)
        await session.commit()
        await session.refresh(run)
        return run

    @staticmethod
    async def get_run_by_id(session: AsyncSession, run_id: int) -> Optional[Run]:
        """Получить запуск по ID."""
        result = await session.execute(select(Run).where(Run.id == run_id))
        return result.scalar_one_or_none()

    @staticmethod
    async def finish_run(session: AsyncSession, run_id: int, exit_code: int) -> Optional[Run]:
        """Отметить запуск завершённым с кодом выхода."""
        run = await RunRepository.get_run_by_id(session, run_id)
        if not run:
            return None

        run.exit_code = exit_code
        run.status = "succeeded" if exit_code == 0 else "failed"
        run.finished_at = datetime.now(timezone.utc)
        await session.commit()
        await session.refresh(run)
        return run

    @staticmethod
    async def get_runs_by_command(session: AsyncSession, command: str) -> list[Run]:
        """Получить все запуски команды, от старых к новым."""
        result = await session.execute(select(Run).where(Run.command == command).order_by(Run.id))
        return list(result.scalars().all())


class ArtifactRepository:
    """CRUD операции для Artifact."""

    @staticmethod
    async def add_artifact(session: AsyncSession, run_id: int, kind: str, path: str, checksum: str = "") -> Artifact:
        """Записать файл, созданный запуском."""
        artifact = Artifact(run_id=run_id, kind=kind, path=path, checksum=checksum)
        session.add(artifact)
        await session.commit()
        await session.refresh(artifact)
        return artifact

    @staticmethod
    async def get_run_artifacts(session: AsyncSession, run_id: int) -> list[Artifact]:
        """Получить все файлы запуска."""
        result = await session.execute(select(Artifact).where(Artifact.run_id == run_id).order_by(Artifact.id))
        return list(result.scalars().all())


class CellResultRepository:
    """CRUD операции для CellResult."""

    @staticmethod
    async def add_cells(session: AsyncSession, run_id: int, campaign_hash: str, cells: Iterable[Cell]) -> int:
        """Сохранить ячейки кампании, возвращает их количество."""
        rows = [
            CellResult(
                run_id=run_id,
                campaign_hash=campaign_hash,
                source_index=cell.source_index,
                victim_index=cell.victim_index,
                source_id=cell.source_id,
                victim_id=cell.victim_id,
                dataset_id=cell.dataset_id,
                method=cell.method,
                perturbation_index=cell.index,
                seed=cell.seed,
                clean_accuracy=cell.clean_accuracy,
                attacked_accuracy=cell.attacked_accuracy,
                same_backbone=cell.same_backbone,
                neurons=",".join(str(j) for j in cell.neurons),
                perturbation_checksum=cell.perturbation_checksum,
                n_test=cell.n_test,
            )
            for cell in cells
        ]
        session.add_all(rows)
        await session.commit()
        return len(rows)

    @staticmethod
    async def get_run_cells(session: AsyncSession, run_id: int) -> list[Cell]:
        """Получить ячейки запуска в порядке ростера (source, victim, method, index)."""
        result = await session.execute(
            select(CellResult)
            .where(CellResult.run_id == run_id)
            .order_by(CellResult.source_index, CellResult.victim_index, CellResult.id)
        )
        return [
            Cell(
                source_index=row.source_index,
                victim_index=row.victim_index,
                source_id=row.source_id,
                victim_id=row.victim_id,
                dataset_id=row.dataset_id,
                method=row.method,
                index=row.perturbation_index,
                seed=row.seed,
                clean_accuracy=row.clean_accuracy,
                attacked_accuracy=row.attacked_accuracy,
                same_backbone=row.same_backbone,
                neurons=tuple(int(j) for j in row.neurons.split(",") if j),
                perturbation_checksum=row.perturbation_checksum,
                n_test=row.n_test,
            )
            for row in result.scalars().all()
        ]
