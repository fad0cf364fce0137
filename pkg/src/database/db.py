import contextlib
import logging
from pathlib import Path

from sqlalchemy import Engine, create_engine
from sqlalchemy.orm import Session, sessionmaker

from src.entity.model import Base

logger = logging.getLogger(__name__)


class DatabaseSessionManager:
    def __init__(self, url: str):
        self._engine: Engine | None = create_engine(url)
        self._session_maker: sessionmaker = sessionmaker(autoflush=False, bind=self._engine)

    @classmethod
    def for_sweep(cls, directory: str | Path, filename: str) -> "DatabaseSessionManager":
        """SQLite store inside a sweep directory, tables created on first use."""
        path = Path(directory) / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        manager = cls(f"sqlite:///{path.as_posix()}")
        manager.create_tables()
        return manager

    def create_tables(self):
        Base.metadata.create_all(self._engine)

    @contextlib.contextmanager
    def session(self):
        if self._session_maker is None:
            raise Exception("Session is not initialized")
        session: Session = self._session_maker()
        try:
            yield session
        except Exception as err:
            logger.error("database session rolled back: %s", err)
            session.rollback()
            raise
        finally:
            session.close()

    def close(self):
        if self._engine is not None:
            self._engine.dispose()
            self._engine = None
            self._session_maker = None
