from sqlalchemy import (
    Column,
    String,
    Integer,
    DateTime,
    Text,
    JSON,
    Float,
    ForeignKey,
    Index,
)
from sqlalchemy.orm import declarative_base, relationship
from datetime import datetime

Base = declarative_base()


class RunRecord(Base):
    """Catalog entry for one pipeline execution"""

    __tablename__ = "runs"

    id = Column(String(64), primary_key=True)
    kind = Column(String(32), index=True)
    check = Column(String(64), nullable=True, index=True)
    seed = Column(String(24))
    out_dir = Column(String(500))
    config_digest = Column(String(64), index=True)
    config = Column(JSON, nullable=True)
    tool_version = Column(String(32))

    started_at = Column(DateTime, default=datetime.utcnow, index=True)
    finished_at = Column(DateTime, nullable=True)

    verdict = Column(String(16), nullable=True)
    exit_status = Column(Integer, default=0)
    warnings = Column(JSON, nullable=True)
    files = Column(JSON, nullable=True)
    error = Column(Text, nullable=True)

    reports = relationship("ReportRecord", back_populates="run", cascade="all, delete-orphan")

    __table_args__ = (Index("idx_kind_started", "kind", "started_at"),)


class ReportRecord(Base):
    """A TestReport emitted by a verify run"""

    __tablename__ = "reports"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(64), ForeignKey("runs.id"), index=True)
    name = Column(String(64), index=True)
    statistic = Column(Float, nullable=True)
    threshold = Column(Float, nullable=True)
    p_value = Column(Float, nullable=True)
    mc_std_error = Column(Float, nullable=True)
    verdict = Column(String(16), index=True)
    payload = Column(JSON, nullable=True)

    run = relationship("RunRecord", back_populates="reports")
