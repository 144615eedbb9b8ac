"""history: recent runs from the ledger."""

import argparse

from hypertab.database import get_recent_runs, get_run_stats, get_session_local, init_db
from hypertab.models import HistoryRunConfig

NAME = "history"


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Show recent runs")
    parser.add_argument("--limit", type=int)
    parser.add_argument("--hours", type=int, help="Window for the summary line")
    parser.set_defaults(handler=run, config_model=HistoryRunConfig)
    return parser


def run(config: HistoryRunConfig) -> int:
    init_db()
    db = get_session_local()()
    try:
        for r in get_recent_runs(db, limit=config.limit):
            duration = f"{r.duration_seconds:.1f}s" if r.duration_seconds is not None else "-"
            line = f"{r.id}\t{r.started_at}\t{r.command}\t{r.status}\t{duration}\t{r.output_dir or ''}"
            if r.error_message:
                line += f"\t{r.error_message}"
            print(line)
        stats = get_run_stats(db, hours=config.hours)
    finally:
        db.close()
    print(
        f"last {config.hours}h: {stats['total']} runs, {stats['successful']} successful, "
        f"{stats['failed']} failed ({stats['success_rate']:.1f}%)"
    )
    return 0
