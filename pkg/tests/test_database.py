import pytest

from hypertab.database import get_recent_runs, get_run_stats, get_session_local, record_run


def test_record_run_marks_success_and_failure():
    with record_run("synth", "runs/a"):
        pass
    with pytest.raises(RuntimeError):
        with record_run("evaluate", "runs/b"):
            raise RuntimeError("boom")

    db = get_session_local()()
    try:
        runs = get_recent_runs(db)
        assert [r.command for r in runs] == ["evaluate", "synth"]
        failed, ok = runs
        assert ok.status == "success" and ok.output_dir == "runs/a"
        assert failed.status == "failed" and failed.error_message == "boom"
        assert failed.duration_seconds is not None and failed.completed_at is not None

        stats = get_run_stats(db, hours=1)
        assert stats == {"total": 2, "successful": 1, "failed": 1, "running": 0, "success_rate": 50.0}
    finally:
        db.close()


def test_single_successful_run():
    with record_run("history"):
        pass
    db = get_session_local()()
    try:
        assert get_recent_runs(db, limit=1)[0].command == "history"
        assert get_run_stats(db)["success_rate"] == 100.0
    finally:
        db.close()
