"""Episode metrics (PP, AS, PE, SR) and tabular reports."""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..exceptions import MalformedLog
from ..sim import TRAJECTORY_HEADER

OUTCOMES = {"goal_reached": "success", "success": "success",
            "collision": "collision", "timeout": "timeout"}
NUMERIC = ("t", "x", "y", "theta", "vx", "vy", "wz", "slip", "reward", "r_prog", "r_safe", "r_stab")


@dataclass(frozen=True)
class EpisodeMetrics:
    pp: float
    as_: float
    pe: float
    outcome: str
    scenario: str = ""
    length: float = 0.0
    duration: float = 0.0

    @property
    def success(self) -> bool:
        return self.outcome == "success"


def read_trajectory(path) -> list[dict]:
    """Parse a trajectory CSV into rows with float-valued numeric columns."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedLog(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in ("t", "x", "y") if c not in (reader.fieldnames or [])]
    if missing:
        raise MalformedLog(f"trajectory log lacks columns {missing}")
    rows = []
    for lineno, raw in enumerate(reader, start=2):
        row = dict(raw)
        for key in NUMERIC:
            if row.get(key) not in (None, ""):
                try:
                    row[key] = float(row[key])
                except ValueError as exc:
                    raise MalformedLog(f"line {lineno}: {key}={row[key]!r} is not numeric") from exc
        rows.append(row)
    return rows


def _outcome(rows: Sequence[Mapping], override: str | None) -> str:
    flag = override if override is not None else rows[-1].get("done")
    if flag not in OUTCOMES:
        raise MalformedLog(f"log has no terminal flag (last done={flag!r})")
    return OUTCOMES[flag]


def compute_metrics(log, planned_length: float, goal, outcome: str | None = None,
                    scenario: str = "") -> EpisodeMetrics:
    """Metrics for one episode.

    ``log`` is a sequence of row mappings or a CSV path.  Elapsed time is the
    span of the ``t`` column, stationary tail included.
    """
    rows = read_trajectory(log) if isinstance(log, (str, Path)) else list(log)
    if len(rows) < 2:
        raise MalformedLog("trajectory log needs at least two rows")
    try:
        xs = [float(r["x"]) for r in rows]
        ys = [float(r["y"]) for r in rows]
        ts = [float(r["t"]) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedLog(f"bad trajectory row: {exc}") from exc
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise MalformedLog("time column is not nondecreasing")
    duration = ts[-1] - ts[0]
    if duration <= 0:
        raise MalformedLog("trajectory spans zero time")
    length = math.fsum(math.hypot(x1 - x0, y1 - y0)
                       for x0, y0, x1, y1 in zip(xs, ys, xs[1:], ys[1:]))
    pp = math.hypot(xs[-1] - goal[0], ys[-1] - goal[1])
    pe = 100.0 * planned_length / length if length > 0 else math.inf
    return EpisodeMetrics(pp, length / duration, pe, _outcome(rows, outcome),
                          scenario, length, duration)


def format_sr(successes: int, attempts: int) -> str:
    return f"{100.0 * successes / attempts:.1f} ({successes}/{attempts})"


REPORT_COLUMNS = ("scenario", "method", "PP (m)", "AS (m/s)", "PE (%)", "SR (%)")


@dataclass
class Report:
    rows: list[tuple]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(self.rows)
        return buf.getvalue()

    def to_text(self) -> str:
        table = [REPORT_COLUMNS] + [tuple(str(c) for c in r) for r in self.rows]
        widths = [max(len(r[i]) for r in table) for i in range(len(REPORT_COLUMNS))]
        lines = ["  ".join(c.ljust(w) if i < 2 else c.rjust(w)
                           for i, (c, w) in enumerate(zip(r, widths))).rstrip()
                 for r in table]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def write(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        csv_path, txt_path = stem.with_suffix(".csv"), stem.with_suffix(".txt")
        csv_path.write_text(self.to_csv())
        txt_path.write_text(self.to_text())
        return csv_path, txt_path


def aggregate_report(metrics: Iterable[EpisodeMetrics], method: str = "proposed") -> Report:
    """Per-scenario means over all episodes plus the success count."""
    groups: OrderedDict[str, list[EpisodeMetrics]] = OrderedDict()
    for m in metrics:
        groups.setdefault(m.scenario, []).append(m)
    if not groups:
        raise ValueError("aggregate_report needs at least one episode")
    rows = []
    for name, ms in groups.items():
        n = len(ms)
        wins = sum(m.success for m in ms)
        rows.append((name or "-", method,
                     f"{math.fsum(m.pp for m in ms) / n:.3f}",
                     f"{math.fsum(m.as_ for m in ms) / n:.3f}",
                     f"{math.fsum(m.pe for m in ms) / n:.1f}",
                     format_sr(wins, n)))
    return Report(rows)


__all__ = ["EpisodeMetrics", "Report", "REPORT_COLUMNS", "TRAJECTORY_HEADER", "aggregate_report",
           "compute_metrics", "format_sr", "read_trajectory"]
