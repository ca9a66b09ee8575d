"""
Results store for experiment-matrix cells.
Uses SQLAlchemy with SQLite by default so `matrix --resume` can skip finished cells.
"""

import json
import logging
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from sqlalchemy import Column, DateTime, Integer, String, Text, UniqueConstraint, create_engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session, declarative_base, sessionmaker

from config import config

logger = logging.getLogger(__name__)

Base = declarative_base()


class MatrixCell(Base):
    """One (system, size, seed, domain) evaluation under a given run-config fingerprint."""

    __tablename__ = 'matrix_cells'
    __table_args__ = (
        UniqueConstraint('system', 'size', 'seed', 'domain', 'fingerprint', name='uq_matrix_cell'),
    )

    id = Column(Integer, primary_key=True, autoincrement=True)
    system = Column(String(32), nullable=False, index=True)
    stage = Column(String(64), nullable=False)
    size = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=False)
    domain = Column(String(16), nullable=False, default='in')
    fingerprint = Column(String(64), nullable=False, index=True)
    accuracies = Column(Text, nullable=False)  # JSON object k -> accuracy
    question_count = Column(Integer, nullable=False)
    created_at = Column(DateTime, default=lambda: datetime.now(timezone.utc), nullable=False)

    def __repr__(self) -> str:
        return f"<MatrixCell(system='{self.system}', size={self.size}, seed={self.seed}, domain='{self.domain}')>"

    def to_dict(self) -> Dict[str, Any]:
        return {
            'system': self.system,
            'stage': self.stage,
            'size': self.size,
            'seed': self.seed,
            'domain': self.domain,
            'fingerprint': self.fingerprint,
            'accuracy': json.loads(self.accuracies),
            'question_count': self.question_count,
            'created_at': self.created_at.isoformat() if self.created_at else None,
        }


class DatabaseManager:
    """Database manager class for handling results-store operations."""

    def __init__(self, db_url: Optional[str] = None):
        """
        Initialize database manager.

        Args:
            db_url: Database URL. If None, uses config.db_url
        """
        self.db_url = db_url or config.db_url
        self.engine = None
        self.session_factory = None
        self._initialize_database()

    def _initialize_database(self) -> None:
        """Initialize database connection and create tables."""
        try:
            self.engine = create_engine(
                self.db_url,
                echo=config.debug_mode,
                pool_pre_ping=True
            )
            Base.metadata.create_all(self.engine)
            self.session_factory = sessionmaker(bind=self.engine, expire_on_commit=False)
            logger.info(f"Results store ready: {self.db_url}")
        except Exception as e:
            logger.error(f"Failed to initialize results store: {e}")
            raise

    def get_session(self) -> Session:
        """Get a new database session."""
        if not self.session_factory:
            raise RuntimeError("Database not initialized")
        return self.session_factory()

    def save_cell(self, cell: Dict[str, Any]) -> Optional[MatrixCell]:
        """
        Insert or replace a matrix cell.

        Args:
            cell: dict with system, stage, size, seed, domain, fingerprint,
                accuracy (k -> value) and question_count

        Returns:
            The stored MatrixCell, or None if the write failed
        """
        session = self.get_session()
        try:
            key = {
                'system': cell['system'],
                'size': int(cell['size']),
                'seed': int(cell['seed']),
                'domain': cell.get('domain', 'in'),
                'fingerprint': cell['fingerprint'],
            }
            stored = session.query(MatrixCell).filter_by(**key).first()
            if stored is None:
                stored = MatrixCell(**key)
                session.add(stored)
            stored.stage = cell['stage']
            stored.accuracies = json.dumps({str(k): v for k, v in cell['accuracy'].items()}, sort_keys=True)
            stored.question_count = int(cell['question_count'])
            session.commit()
            logger.debug(f"Saved matrix cell {stored!r}")
            return stored
        except SQLAlchemyError as e:
            session.rollback()
            logger.error(f"Failed to save matrix cell: {e}")
            return None
        finally:
            session.close()

    def get_cell(self, system: str, size: int, seed: int, fingerprint: str, domain: str = 'in') -> Optional[MatrixCell]:
        session = self.get_session()
        try:
            return session.query(MatrixCell).filter_by(
                system=system, size=size, seed=seed, domain=domain, fingerprint=fingerprint
            ).first()
        finally:
            session.close()

    def get_cells(self, fingerprint: Optional[str] = None) -> List[MatrixCell]:
        """All stored cells, optionally for one run-config fingerprint."""
        session = self.get_session()
        try:
            query = session.query(MatrixCell)
            if fingerprint:
                query = query.filter_by(fingerprint=fingerprint)
            return query.order_by(
                MatrixCell.fingerprint, MatrixCell.size, MatrixCell.seed, MatrixCell.system, MatrixCell.domain
            ).all()
        finally:
            session.close()

    def get_cell_count(self) -> int:
        session = self.get_session()
        try:
            return session.query(MatrixCell).count()
        finally:
            session.close()

    def clear_cells(self, fingerprint: Optional[str] = None) -> int:
        """Delete stored cells; returns how many were removed."""
        session = self.get_session()
        try:
            query = session.query(MatrixCell)
            if fingerprint:
                query = query.filter_by(fingerprint=fingerprint)
            removed = query.delete()
            session.commit()
            logger.info(f"Cleared {removed} matrix cells")
            return removed
        except SQLAlchemyError as e:
            session.rollback()
            logger.error(f"Failed to clear matrix cells: {e}")
            return 0
        finally:
            session.close()


_db_manager: Optional[DatabaseManager] = None


def get_db_manager() -> DatabaseManager:
    """Shared manager for config.db_url, created on first use."""
    global _db_manager
    if _db_manager is None:
        _db_manager = DatabaseManager()
    return _db_manager
