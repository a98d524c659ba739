import json
import math
import re
import time
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from errors import StoreInconsistentError

AXIS_ORDER = ["L", "c", "x", "r", "k", "t", "region", "pair", "i"]
BASE_COLUMNS = ["scenario", "metric", "value", "flag", "seconds"]
INT_PATTERN = re.compile(r"^-?\d+$")
ILLEGAL_CHARS = '<>:"/\\|?*'

RESULTS_FILE = "results.jsonl"
CSV_FILE = "results.csv"
SUMMARY_FILE = "summary.txt"
TIMINGS_FILE = "timings.jsonl"
PROGRESS_FILE = "progress.json"


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    axes: dict
    metric: str
    value: float
    flag: str = ""
    seconds: float = None

    @property
    def key(self):
        return (self.scenario, tuple(sorted((k, _axis_text(v)) for k, v in self.axes.items())), self.metric)

    def to_dict(self, with_seconds=False):
        payload = {
            "scenario": self.scenario,
            "axes": {k: self.axes[k] for k in ordered_axes(self.axes)},
            "metric": self.metric,
            "value": self.value,
            "flag": self.flag,
        }
        if with_seconds and self.seconds is not None:
            payload["seconds"] = self.seconds
        return payload

    @classmethod
    def from_dict(cls, payload):
        return cls(payload["scenario"], dict(payload.get("axes") or {}), payload["metric"],
                   float(payload["value"]), payload.get("flag", ""), payload.get("seconds"))


def _axis_text(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_axis(text):
    text = str(text)
    if INT_PATTERN.match(text):
        return int(text)
    try:
        value = float(text)
    except ValueError:
        return text
    return value if math.isfinite(value) else text


def ordered_axes(names):
    known = [a for a in AXIS_ORDER if a in names]
    return known + sorted(a for a in names if a not in AXIS_ORDER)


def _sortable(value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (0, float(value), "")
    return (1, 0.0, str(value))


def sort_key(row):
    names = ordered_axes(row.axes)
    return (row.scenario, tuple((name, _sortable(row.axes[name])) for name in names), row.metric)


def sanitize(value):
    cleaned = "".join("_" if ch in ILLEGAL_CHARS else ch for ch in str(value))
    cleaned = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in cleaned)
    return cleaned.strip("._")


def _same(a, b):
    if a.flag != b.flag:
        return False
    if math.isnan(a.value) and math.isnan(b.value):
        return True
    return a.value == b.value


class ResultStore:
    """Rows keyed by (scenario, axes, metric), persisted as sorted JSON lines plus derived files."""

    def __init__(self, out_dir, record_wall_time=False):
        self.out_dir = Path(out_dir)
        self.record_wall_time = record_wall_time
        self.rows = {}
        self.timings = []

    @property
    def results_path(self):
        return self.out_dir / RESULTS_FILE

    def load(self):
        if not self.results_path.exists():
            return self
        for line in self.results_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = ResultRow.from_dict(json.loads(line))
                self.rows[row.key] = row
        return self

    def has(self, key):
        return key in self.rows

    def upsert_rows(self, rows):
        added = 0
        for row in rows:
            existing = self.rows.get(row.key)
            if existing is None:
                self.rows[row.key] = row
                added += 1
            elif not _same(existing, row):
                raise StoreInconsistentError(
                    f"result store inconsistent: {row.scenario} {row.metric} {row.axes} "
                    f"has {existing.value!r}/{existing.flag!r}, new {row.value!r}/{row.flag!r}"
                )
        return added

    def note_timing(self, scenario, axes, op, seconds):
        self.timings.append({"scenario": scenario, "axes": axes, "op": op, "seconds": seconds})

    def sorted_rows(self):
        return sorted(self.rows.values(), key=sort_key)

    def write(self, fmt="both"):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        # the JSON-lines file is the store itself and is always written
        self.write_jsonl()
        written = [self.results_path]
        if fmt in ("csv", "both"):
            written.append(self.write_csv())
        written.append(self.write_summary())
        self.write_timings()
        return written

    def write_jsonl(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(row.to_dict(self.record_wall_time), sort_keys=False) for row in self.sorted_rows()]
        self.results_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    def frame(self):
        rows = self.sorted_rows()
        axis_names = ordered_axes({name for row in rows for name in row.axes})
        columns = ["scenario"] + axis_names + ["metric", "value", "flag", "seconds"]
        records = []
        for row in rows:
            record = {"scenario": row.scenario, "metric": row.metric, "value": row.value, "flag": row.flag}
            for name in axis_names:
                record[name] = _axis_text(row.axes[name]) if name in row.axes else ""
            record["seconds"] = row.seconds if (self.record_wall_time and row.seconds is not None) else ""
            records.append(record)
        return pd.DataFrame.from_records(records, columns=columns)

    def write_csv(self):
        path = self.out_dir / CSV_FILE
        self.frame().to_csv(path, index=False, lineterminator="\n", na_rep="nan")
        return path

    def write_summary(self):
        path = self.out_dir / SUMMARY_FILE
        frame = self.frame()
        if frame.empty:
            text = "no results\n"
        else:
            counts = frame.groupby(["scenario", "metric"], sort=True).agg(
                rows=("value", "size"),
                min=("value", "min"),
                max=("value", "max"),
                failed=("flag", lambda s: int((s == "fail").sum())),
            )
            text = counts.to_string() + "\n"
        path.write_text(text, encoding="utf-8")
        return path

    def write_timings(self):
        if not self.timings:
            return None
        path = self.out_dir / TIMINGS_FILE
        with path.open("a", encoding="utf-8") as f:
            for item in self.timings:
                f.write(json.dumps(item) + "\n")
        self.timings = []
        return path

    def write_profile(self, name, rows):
        """Gnuplot data file of ``(r, distance)`` rows."""
        profile_dir = self.out_dir / "profiles"
        profile_dir.mkdir(parents=True, exist_ok=True)
        path = profile_dir / f"{sanitize(name)}.dat"
        lines = ["# r distance"] + [f"{r} {value!r}" for r, value in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def read_csv(path):
    """Re-ingest a results CSV into rows."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    axis_names = [c for c in frame.columns if c not in BASE_COLUMNS]
    rows = []
    for record in frame.to_dict(orient="records"):
        axes = {name: parse_axis(record[name]) for name in axis_names if record[name] != ""}
        seconds = float(record["seconds"]) if record.get("seconds") else None
        rows.append(ResultRow(record["scenario"], axes, record["metric"], float(record["value"]),
                              record.get("flag", ""), seconds))
    return rows


def load_progress(out_dir):
    path = Path(out_dir) / PROGRESS_FILE
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return {}


def save_progress(out_dir, completed):
    payload = {
        "completed": sorted(completed),
        "saved_at": time.strftime("%Y-%m-%d %H:%M:%S"),
    }
    path = Path(out_dir) / PROGRESS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
