from sqlalchemy import select
from sqlalchemy.orm import Session

from src.entity.model import DropResult, Sweep
from src.schemas.sweep import DropRow, SweepSpec


def create_sweep(spec: SweepSpec, db: Session) -> Sweep:
    """
    Stores the description of a new sweep.

    :param spec: SweepSpec: The sweep being run.
    :param db: Session: The database session.
    :return: Sweep: The created sweep row.
    """
    sweep = Sweep(spec=spec.model_dump(mode="json"), seed=spec.config.seed, drops=spec.drops)
    db.add(sweep)
    db.commit()
    db.refresh(sweep)
    return sweep


def get_sweep(sweep_id: int, db: Session) -> Sweep | None:
    """
    Retrieves a sweep by its ID.

    :param sweep_id: int: The unique identifier of the sweep.
    :param db: Session: The database session.
    :return: Sweep | None: The sweep if found, otherwise None.
    """
    stmt = select(Sweep).filter_by(id=sweep_id)
    sweep = db.execute(stmt)
    return sweep.scalar_one_or_none()


def get_latest_sweep(db: Session) -> Sweep | None:
    """
    Retrieves the most recently stored sweep of a results store.

    :param db: Session: The database session.
    :return: Sweep | None: The sweep with the highest ID, or None when the store is empty.
    """
    stmt = select(Sweep).order_by(Sweep.id.desc()).limit(1)
    sweep = db.execute(stmt)
    return sweep.scalar_one_or_none()


def add_drop_results(sweep_id: int, rows: list[DropRow], db: Session) -> list[DropResult]:
    """
    Persists the per-drop outcomes of one sweep in a single commit.

    :param sweep_id: int: The sweep the rows belong to.
    :param rows: list[DropRow]: One row per (C_total, scheme, drop).
    :param db: Session: The database session.
    :return: list[DropResult]: The stored rows.
    """
    results = [DropResult(**row.model_dump(), sweep_id=sweep_id) for row in rows]
    db.add_all(results)
    db.commit()
    return results


def get_drop_results(sweep_id: int, db: Session, scheme: str | None = None,
                     C_total: float | None = None) -> list[DropResult]:
    """
    Retrieves the drop results of a sweep, optionally for one scheme or one capacity.

    :param sweep_id: int: The sweep to read.
    :param db: Session: The database session.
    :param scheme: str | None: Scheme tag filter.
    :param C_total: float | None: Total fronthaul capacity filter.
    :return: list[DropResult]: Rows ordered by capacity, scheme and drop.
    """
    stmt = select(DropResult).filter_by(sweep_id=sweep_id)
    if scheme is not None:
        stmt = stmt.filter_by(scheme=scheme)
    if C_total is not None:
        stmt = stmt.filter_by(C_total=C_total)
    stmt = stmt.order_by(DropResult.C_total, DropResult.scheme, DropResult.drop)
    results = db.execute(stmt)
    return results.scalars().all()
