from datetime import datetime
from typing import Optional

from sqlalchemy import Boolean, DateTime, Float, ForeignKey, Integer, String, func
from sqlalchemy.orm import Mapped, declarative_base, mapped_column, relationship

Base = declarative_base()


class Run(Base):
    __tablename__ = "runs"

    id: Mapped[int] = mapped_column(primary_key=True)
    command: Mapped[str] = mapped_column(String(64), index=True)
    config_hash: Mapped[str] = mapped_column(String(64), index=True)
    status: Mapped[str] = mapped_column(String(16), default="running")
    exit_code: Mapped[Optional[int]] = mapped_column(Integer, nullable=True)
    started_at: Mapped[datetime] = mapped_column(DateTime(timezone=True), server_default=func.now())
    finished_at: Mapped[Optional[datetime]] = mapped_column(DateTime(timezone=True), nullable=True)

    # Relationships
    artifacts: Mapped[list["Artifact"]] = relationship(
        "Artifact", back_populates="run", cascade="all, delete-orphan"
    )
    cells: Mapped[list["CellResult"]] = relationship(
        "CellResult", back_populates="run", cascade="all, delete-orphan"
    )

    def __repr__(self) -> str:
        return f"<Run(id={self.id}, command={self.command}, status={self.status})>"


class Artifact(Base):
    __tablename__ = "artifacts"

    id: Mapped[int] = mapped_column(primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id"), index=True)
    kind: Mapped[str] = mapped_column(String(32))
    path: Mapped[str] = mapped_column(String(1024))
    checksum: Mapped[str] = mapped_column(String(64), default="")
    created_at: Mapped[datetime] = mapped_column(DateTime(timezone=True), server_default=func.now())

    # Relationships
    run: Mapped["Run"] = relationship("Run", back_populates="artifacts")

    def __repr__(self) -> str:
        return f"<Artifact(id={self.id}, kind={self.kind}, path={self.path})>"


class CellResult(Base):
    __tablename__ = "cell_results"

    id: Mapped[int] = mapped_column(primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id"), index=True)
    campaign_hash: Mapped[str] = mapped_column(String(64), index=True)
    source_index: Mapped[int] = mapped_column(Integer)
    victim_index: Mapped[int] = mapped_column(Integer)
    source_id: Mapped[str] = mapped_column(String(64))
    victim_id: Mapped[str] = mapped_column(String(64))
    dataset_id: Mapped[str] = mapped_column(String(64))
    method: Mapped[str] = mapped_column(String(32))
    perturbation_index: Mapped[int] = mapped_column(Integer)
    seed: Mapped[int] = mapped_column(Integer)
    clean_accuracy: Mapped[float] = mapped_column(Float)
    attacked_accuracy: Mapped[float] = mapped_column(Float)
    same_backbone: Mapped[bool] = mapped_column(Boolean)
    neurons: Mapped[str] = mapped_column(String(512), default="")
    perturbation_checksum: Mapped[str] = mapped_column(String(64), default="")
    n_test: Mapped[int] = mapped_column(Integer, default=0)

    # Relationships
    run: Mapped["Run"] = relationship("Run", back_populates="cells")

    def __repr__(self) -> str:
        return f"<CellResult(id={self.id}, method={self.method}, victim={self.victim_id})>"
