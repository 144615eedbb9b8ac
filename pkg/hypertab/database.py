"""Run ledger: SQLAlchemy models and session handling."""

import logging
import os
from contextlib import contextmanager
from datetime import datetime, timedelta
from typing import Iterator, List, Optional

from sqlalchemy import (
    create_engine,
    Column,
    Integer,
    Float,
    String,
    DateTime,
    Text,
    Index,
    func,
)
from sqlalchemy.orm import sessionmaker, declarative_base, Session
from sqlalchemy.pool import StaticPool

from hypertab.config import get_settings

logger = logging.getLogger(__name__)

Base = declarative_base()


def now_local() -> datetime:
    """Current local time (naive datetime for SQLite)."""
    return datetime.now().replace(microsecond=0)


class RunLog(Base):
    """Log of command runs."""

    __tablename__ = "run_log"

    id = Column(Integer, primary_key=True, autoincrement=True)
    command = Column(String(50), nullable=False)
    started_at = Column(DateTime, nullable=False, default=now_local)
    completed_at = Column(DateTime)
    status = Column(String(20), nullable=False, default="running")  # running, success, failed
    output_dir = Column(String(500))
    error_message = Column(Text)
    duration_seconds = Column(Float)

    __table_args__ = (
        Index("idx_run_log_started", "started_at"),
    )


# Database engine and session
_engine = None
_SessionLocal = None


def get_engine():
    """Get or create database engine."""
    global _engine
    if _engine is None:
        settings = get_settings()
        db_url = settings.database_url

        # Ensure data directory exists
        if db_url.startswith("sqlite:///"):
            db_path = db_url.replace("sqlite:///", "")
            if db_path and db_path != ":memory:":
                os.makedirs(os.path.dirname(db_path) or ".", exist_ok=True)

        if "sqlite" in db_url:
            _engine = create_engine(
                db_url,
                connect_args={"check_same_thread": False},
                poolclass=StaticPool,
            )
        else:
            _engine = create_engine(db_url)

    return _engine


def get_session_local():
    """Get session factory."""
    global _SessionLocal
    if _SessionLocal is None:
        _SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=get_engine())
    return _SessionLocal


def reset_engine() -> None:
    """Drop the cached engine so the next call picks up new settings."""
    global _engine, _SessionLocal
    if _engine is not None:
        _engine.dispose()
    _engine = None
    _SessionLocal = None


def init_db():
    """Initialize database tables."""
    engine = get_engine()
    Base.metadata.create_all(bind=engine)


@contextmanager
def record_run(command: str, output_dir: Optional[str] = None) -> Iterator[RunLog]:
    """
    Record a command run in the ledger.

    The row is marked success or failed on exit; exceptions propagate.
    """
    init_db()
    SessionLocal = get_session_local()
    db = SessionLocal()

    run = RunLog(command=command, started_at=now_local(), status="running", output_dir=output_dir)
    db.add(run)
    db.commit()
    started = datetime.now()

    try:
        yield run
        run.status = "success"
    except Exception as e:
        run.status = "failed"
        run.error_message = str(e)
        raise
    finally:
        run.completed_at = now_local()
        run.duration_seconds = (datetime.now() - started).total_seconds()
        db.commit()
        logger.debug(f"Run {run.id} ({command}) finished with status {run.status}")
        db.close()


def get_recent_runs(db: Session, limit: int = 20) -> List[RunLog]:
    """Most recent runs, newest first."""
    return db.query(RunLog).order_by(RunLog.started_at.desc(), RunLog.id.desc()).limit(limit).all()


def get_run_stats(db: Session, hours: int = 24) -> dict:
    """Get run statistics for the last N hours."""
    cutoff = now_local() - timedelta(hours=hours)

    total = db.query(func.count(RunLog.id)).filter(RunLog.started_at >= cutoff).scalar() or 0

    successful = db.query(func.count(RunLog.id)).filter(
        RunLog.started_at >= cutoff,
        RunLog.status == "success",
    ).scalar() or 0

    failed = db.query(func.count(RunLog.id)).filter(
        RunLog.started_at >= cutoff,
        RunLog.status == "failed",
    ).scalar() or 0

    return {
        "total": total,
        "successful": successful,
        "failed": failed,
        "running": total - successful - failed,
        "success_rate": (successful / total * 100) if total > 0 else 0.0,
    }
