"""Run catalog"""

from src.db.session import get_db_context, init_db
from src.db.repository import RunRepository, ReportRepository

__all__ = [
    "get_db_context",
    "init_db",
    "RunRepository",
    "ReportRepository",
]
