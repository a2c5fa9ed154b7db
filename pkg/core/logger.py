import json
import logging
import os
from datetime import datetime

MAX_ENTRIES = 1000

console = logging.getLogger("platoonscope")


class Logger:
    """Run log of structured entries persisted as a JSON array.

    Entries look like ``{timestamp, action, details, count, status}``. Each
    one is also mirrored to the ``platoonscope`` logger so the console shows
    the same story.
    """

    def __init__(self, log_file="out/run_log.json"):
        self.log_file = log_file
        self.logs = []
        self.load_logs()

    def ensure_log_directory(self):
        """Create parent directory for the log file if it doesn't exist."""
        log_dir = os.path.dirname(self.log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)

    def load_logs(self):
        """Load an existing log; a corrupt file starts a fresh one."""
        if not os.path.exists(self.log_file):
            self.logs = []
            return
        try:
            with open(self.log_file, "r", encoding="utf-8") as f:
                self.logs = json.load(f)
            for log in self.logs:
                log["timestamp"] = datetime.fromisoformat(log["timestamp"])
        except (OSError, ValueError, KeyError, TypeError) as e:
            console.warning("Discarding unreadable run log %s: %s", self.log_file, e)
            self.logs = []

    def save_logs(self):
        """Persist logs to disk with ISO timestamps."""
        self.ensure_log_directory()
        serializable = []
        for log in self.logs:
            entry = dict(log)
            entry["timestamp"] = log["timestamp"].isoformat()
            serializable.append(entry)
        with open(self.log_file, "w", encoding="utf-8") as f:
            json.dump(serializable, f, indent=2, ensure_ascii=False)

    def log_action(self, action_type, details, count=0, status="Success"):
        """Record one entry and mirror it to the console logger."""
        entry = {
            "timestamp": datetime.now(),
            "action": action_type,
            "details": details,
            "count": count,
            "status": status,
        }
        self.logs.append(entry)
        if len(self.logs) > MAX_ENTRIES:
            self.logs = self.logs[-MAX_ENTRIES:]
        self.save_logs()

        level = logging.ERROR if status == "Failed" else logging.INFO
        console.log(level, "%s: %s (%d) %s", action_type, details, count, status)
        return entry

    def log_stage(self, stage, count, wall_s, failed=0):
        """Record a finished pipeline stage."""
        status = "Success" if failed == 0 else f"Partial Success ({failed} failed)"
        return self.log_action(
            action_type="Stage",
            details=f"{stage} in {wall_s:.2f}s",
            count=count,
            status=status,
        )

    def log_error(self, error_message, action_type="Error"):
        """Log an error with failure status."""
        return self.log_action(action_type, error_message, count=0, status="Failed")

    def get_logs(self, limit=None, filter_type=None):
        """Newest-first entries, optionally of one action type."""
        logs = list(self.logs)
        if filter_type and filter_type != "All":
            logs = [log for log in logs if log["action"] == filter_type]
        logs.sort(key=lambda x: x["timestamp"], reverse=True)
        if limit:
            logs = logs[:limit]
        return logs

    def clear_logs(self):
        """Erase all entries and the log file."""
        self.logs = []
        if os.path.exists(self.log_file):
            os.remove(self.log_file)


def configure_console(verbose=False):
    """Attach a stderr handler to the ``platoonscope`` and ``core`` loggers."""
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    level = logging.DEBUG if verbose else logging.INFO
    for name in ("platoonscope", "core"):
        log = logging.getLogger(name)
        log.handlers[:] = [handler]
        log.setLevel(level)
        log.propagate = False
