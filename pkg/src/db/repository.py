from sqlalchemy.orm import Session
from sqlalchemy import func, desc
from typing import List, Optional

from src.models.run import RunRecord, ReportRecord
from src.schemas.report import RunManifest, TestReport


class RunRepository:
    """Repository for run catalog operations"""

    @staticmethod
    def record_run(
        db: Session, manifest: RunManifest, out_dir: str, error: Optional[str] = None
    ) -> RunRecord:
        """Store a finished run from its manifest"""
        run = RunRecord(
            id=manifest.run_id,
            kind=manifest.kind,
            check=manifest.check,
            seed=str(manifest.config.get("seed")),
            out_dir=out_dir,
            config_digest=manifest.config_digest,
            config=manifest.config,
            tool_version=manifest.tool_version,
            started_at=manifest.started_at,
            finished_at=manifest.finished_at,
            verdict=manifest.verdict.value if manifest.verdict else None,
            exit_status=manifest.exit_status,
            warnings=list(manifest.warnings),
            files=[f.model_dump() for f in manifest.files],
            error=error,
        )
        db.add(run)
        db.commit()
        db.refresh(run)
        return run

    @staticmethod
    def get_run(db: Session, run_id: str) -> Optional[RunRecord]:
        """Get run by ID"""
        return db.query(RunRecord).filter(RunRecord.id == run_id).first()

    @staticmethod
    def get_recent_runs(
        db: Session, limit: int = 20, kind: Optional[str] = None
    ) -> List[RunRecord]:
        """Latest runs, optionally of one kind"""
        q = db.query(RunRecord)
        if kind:
            q = q.filter(RunRecord.kind == kind)
        return q.order_by(desc(RunRecord.started_at)).limit(limit).all()

    @staticmethod
    def get_runs_by_digest(db: Session, config_digest: str) -> List[RunRecord]:
        """Every run of the same resolved configuration"""
        return (
            db.query(RunRecord)
            .filter(RunRecord.config_digest == config_digest)
            .order_by(desc(RunRecord.started_at))
            .all()
        )

    @staticmethod
    def get_total_runs(db: Session) -> int:
        return db.query(func.count(RunRecord.id)).scalar()


class ReportRepository:
    """Repository for verification reports"""

    @staticmethod
    def create_report(db: Session, run_id: str, report: TestReport) -> ReportRecord:
        record = ReportRecord(
            run_id=run_id,
            name=report.name,
            statistic=_finite(report.statistic),
            threshold=_finite(report.threshold),
            p_value=_finite(report.p_value),
            mc_std_error=_finite(report.mc_std_error),
            verdict=report.verdict.value,
            payload=report.model_dump(mode="json"),
        )
        db.add(record)
        db.commit()
        db.refresh(record)
        return record

    @staticmethod
    def get_reports_for_run(db: Session, run_id: str) -> List[ReportRecord]:
        return db.query(ReportRecord).filter(ReportRecord.run_id == run_id).all()

    @staticmethod
    def get_failures(db: Session, limit: int = 50) -> List[ReportRecord]:
        """Most recent failed reports"""
        return (
            db.query(ReportRecord)
            .filter(ReportRecord.verdict == "fail")
            .order_by(desc(ReportRecord.id))
            .limit(limit)
            .all()
        )


def _finite(value: Optional[float]) -> Optional[float]:
    if value is None or value != value or value in (float("inf"), float("-inf")):
        return None
    return float(value)
