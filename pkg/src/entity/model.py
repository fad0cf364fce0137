from datetime import datetime

from sqlalchemy import JSON, DateTime, Float, ForeignKey, Integer, String, func
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship


class Base(DeclarativeBase):
    pass


class Sweep(Base):
    __tablename__ = "sweeps"
    id: Mapped[int] = mapped_column(primary_key=True)
    spec: Mapped[dict] = mapped_column(JSON)
    seed: Mapped[int] = mapped_column(Integer)
    drops: Mapped[int] = mapped_column(Integer)
    created_at: Mapped[datetime] = mapped_column("created_at", DateTime, default=func.now())

    results: Mapped[list["DropResult"]] = relationship(back_populates="sweep", cascade="all, delete-orphan")


class DropResult(Base):
    __tablename__ = "drop_results"
    id: Mapped[int] = mapped_column(primary_key=True)
    sweep_id: Mapped[int] = mapped_column(Integer, ForeignKey("sweeps.id"), index=True)
    scheme: Mapped[str] = mapped_column(String(32), index=True)
    C_total: Mapped[float] = mapped_column(Float, index=True)
    drop: Mapped[int] = mapped_column(Integer)
    attempt: Mapped[int] = mapped_column(Integer, default=0)
    redraws: Mapped[int] = mapped_column(Integer, default=0)
    status: Mapped[str] = mapped_column(String(32))
    ee: Mapped[float] = mapped_column(Float)
    rate_total: Mapped[float] = mapped_column(Float)
    rate_common: Mapped[float] = mapped_column(Float)
    p_tr: Mapped[float] = mapped_column(Float)
    p_fh: Mapped[float] = mapped_column(Float)
    p_total: Mapped[float] = mapped_column(Float)
    losc: Mapped[int] = mapped_column(Integer)
    outer_iterations: Mapped[int] = mapped_column(Integer)
    channel_hash: Mapped[str] = mapped_column(String(64))

    sweep: Mapped["Sweep"] = relationship(back_populates="results")
