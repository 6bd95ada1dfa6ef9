import argparse
import logging

from src.db.repository import ReportRepository, RunRepository
from src.db.session import get_db_context, init_db
from src.services.builders import list_builders

logger = logging.getLogger(__name__)

EXIT_NOT_FOUND = 1


def register(subparsers) -> None:
    builders = subparsers.add_parser("list-builders", help="registered coefficient builders")
    builders.set_defaults(handler=handle_builders)

    runs = subparsers.add_parser("list-runs", help="latest entries of the run catalog")
    runs.add_argument("--limit", type=int, default=20)
    runs.add_argument("--kind", help="only runs of this kind")
    runs.add_argument("--digest", help="only runs of this resolved config digest")
    runs.set_defaults(handler=handle_runs)

    failures = subparsers.add_parser("list-failures", help="latest failed check reports")
    failures.add_argument("--limit", type=int, default=20)
    failures.set_defaults(handler=handle_failures)

    show = subparsers.add_parser("show-run", help="one catalog entry with its reports")
    show.add_argument("run_id")
    show.set_defaults(handler=handle_show)


def handle_builders(args: argparse.Namespace) -> int:
    for row in list_builders():
        print(f"{row['kind']:<6} {row['name']:<16} {row['defaults']:<24} {row['description']}")
    return 0


def _run_line(record) -> str:
    label = record.kind if not record.check else f"{record.kind} {record.check}"
    return (
        f"{record.started_at:%Y-%m-%d %H:%M:%S}  {record.id}  {label:<28} "
        f"{record.verdict or '-':<12} exit={record.exit_status}  {record.out_dir}"
    )


def handle_runs(args: argparse.Namespace) -> int:
    init_db()
    with get_db_context() as db:
        if args.digest:
            runs = RunRepository.get_runs_by_digest(db, args.digest)
            if args.kind:
                runs = [record for record in runs if record.kind == args.kind]
            runs = runs[: args.limit]
        else:
            runs = RunRepository.get_recent_runs(db, limit=args.limit, kind=args.kind)
        if not runs:
            print("no runs recorded")
        for record in runs:
            print(_run_line(record))
        print(f"{len(runs)} shown, {RunRepository.get_total_runs(db)} in catalog")
    return 0


def handle_failures(args: argparse.Namespace) -> int:
    init_db()
    with get_db_context() as db:
        reports = ReportRepository.get_failures(db, limit=args.limit)
        if not reports:
            print("no failed reports")
        for report in reports:
            print(
                f"{report.run_id}  {report.name:<20} statistic={report.statistic} "
                f"threshold={report.threshold} p={report.p_value}"
            )
    return 0


def handle_show(args: argparse.Namespace) -> int:
    init_db()
    with get_db_context() as db:
        record = RunRepository.get_run(db, args.run_id)
        if record is None:
            logger.error(f"Run {args.run_id} is not in the catalog")
            return EXIT_NOT_FOUND
        print(_run_line(record))
        print(f"digest   {record.config_digest}")
        print(f"seed     {record.seed}  version {record.tool_version}")
        for warning in record.warnings or []:
            print(f"warning  {warning}")
        if record.error:
            print(f"error    {record.error}")
        for f in record.files or []:
            print(f"file     {f['path']}  {f['sha256']}")
        for report in ReportRepository.get_reports_for_run(db, record.id):
            print(
                f"report   {report.name}  {report.verdict}  statistic={report.statistic} "
                f"threshold={report.threshold}"
            )
    return 0
