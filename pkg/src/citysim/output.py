"""Reading and writing simulation outputs.

The CSV has one row per (day, ward) plus a ``city`` row per day with the
columns ``day,date,ward`` followed by :data:`citysim.engine.METRICS`.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .core_types import InfectionEvent, ParseError, write_jsonl
from .engine import METRICS, SimOutput

COLUMNS = ("day", "date", "ward") + METRICS


def _fmt(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return f"{v:.6f}".rstrip("0").rstrip(".")


def write_series_csv(path, start: dt.date, wards: np.ndarray, ward_ids) -> None:
    """``wards`` has shape (days, ward_count, len(METRICS))."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for d in range(wards.shape[0]):
            date = (start + dt.timedelta(days=d)).isoformat()
            for j, wid in enumerate(ward_ids):
                w.writerow([d, date, wid] + [_fmt(v) for v in wards[d, j]])
            w.writerow([d, date, "city"] + [_fmt(v) for v in wards[d].sum(axis=0)])


def read_city_series(path, metric: str = "positives") -> tuple[list[dt.date], np.ndarray]:
    """City-total daily values of ``metric`` from an output CSV."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    if metric not in METRICS:
        raise ParseError(f"unknown metric {metric!r}")
    dates, values = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
        for lineno, row in enumerate(reader, start=2):
            if row["ward"] != "city":
                continue
            try:
                dates.append(dt.date.fromisoformat(row["date"]))
                values.append(float(row[metric]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad value in row") from None
    return dates, np.array(values)


def summary(out: SimOutput, observed: Optional[np.ndarray] = None, tol: float = 0.1) -> dict:
    """Headline numbers of the mean trajectory."""
    new = out.city("new_infections")
    pos = out.city("positives")
    res = {
        "start": out.start.isoformat(), "days": out.days, "seeds": list(out.seeds), "scale": out.scale,
        "peak_day": int(np.argmax(new)) if out.days else None,
        "peak_date": out.dates[int(np.argmax(new))].isoformat() if out.days else None,
        "peak_daily_infections": float(new.max()) if out.days else 0.0,
        "peak_daily_positives": float(pos.max()) if out.days else 0.0,
        "totals": {m: float(out.city(m).sum()) for m in ("new_infections", "positives", "recovered",
                                                          "deaths", "tests", "traced")},
        **out.meta,
    }
    if observed is not None:
        from .calibration import rmse, within_tolerance_days

        count, frac = within_tolerance_days(pos, observed, tol)
        res["error"] = {"tolerance": tol, "days_within": count, "fraction_within": frac,
                        "rmse": rmse(pos, observed)}
    return res


def write_output(out: SimOutput, directory, observed: Optional[np.ndarray] = None) -> list[Path]:
    """Write mean and per-seed CSVs, the summary JSON and any event traces."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    p = d / "mean.csv"
    write_series_csv(p, out.start, out.mean, out.ward_ids)
    paths.append(p)
    for i, s in enumerate(out.seeds):
        p = d / f"seed_{s}.csv"
        write_series_csv(p, out.start, out.replicates[i], out.ward_ids)
        paths.append(p)
    p = d / "summary.json"
    p.write_text(json.dumps(summary(out, observed), indent=2, sort_keys=True) + "\n")
    paths.append(p)
    for s, events in sorted(out.events.items()):
        p = d / f"events_{s}.jsonl"
        write_jsonl(p, {"kind": "infection_events", "seed": s},
                    (InfectionEvent(*e) for e in events))
        paths.append(p)
    return paths
