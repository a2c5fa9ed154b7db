import json
from datetime import datetime

from core.logger import MAX_ENTRIES, Logger


def test_entries_persist(tmp_path):
    path = tmp_path / "out" / "run_log.json"
    log = Logger(str(path))
    log.log_action("Stage", "match in 0.10s", count=3)
    again = Logger(str(path))
    assert len(again.logs) == 1
    assert again.logs[0]["details"] == "match in 0.10s"
    assert again.logs[0]["count"] == 3


def test_bounded_length(tmp_path):
    log = Logger(str(tmp_path / "run_log.json"))
    first = log.log_action("Stage", "first")
    log.logs = [dict(first, details=str(k)) for k in range(MAX_ENTRIES)]
    log.log_action("Stage", "last")
    assert len(log.logs) == MAX_ENTRIES
    assert log.logs[0]["details"] == "1"
    assert log.logs[-1]["details"] == "last"


def test_filter_and_newest_first(tmp_path):
    log = Logger(str(tmp_path / "run_log.json"))
    log.log_stage("match", 4, 0.5)
    log.log_error("boom")
    log.log_stage("cluster", 2, 0.25, failed=1)
    for k, entry in enumerate(log.logs):
        entry["timestamp"] = datetime(2024, 1, 1, 0, 0, k)
    stages = log.get_logs(filter_type="Stage")
    assert [e["details"] for e in stages] == ["cluster in 0.25s", "match in 0.50s"]
    assert stages[0]["status"] == "Partial Success (1 failed)"
    assert log.get_logs(limit=1)[0]["details"] == "cluster in 0.25s"
    assert log.get_logs(filter_type="Error")[0]["status"] == "Failed"
    assert len(log.get_logs(filter_type="All")) == 3


def test_corrupt_file_starts_fresh(tmp_path):
    path = tmp_path / "run_log.json"
    path.write_text("[{broken", encoding="utf-8")
    log = Logger(str(path))
    assert log.logs == []
    log.log_action("Stage", "ok")
    assert len(json.loads(path.read_text(encoding="utf-8"))) == 1


def test_clear(tmp_path):
    path = tmp_path / "run_log.json"
    log = Logger(str(path))
    log.log_action("Stage", "ok")
    log.clear_logs()
    assert log.logs == []
    assert not path.exists()
