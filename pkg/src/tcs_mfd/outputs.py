"""Run artifacts: CSV tables, JSON summaries and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .day2day import DAY_COLUMNS, HIST_EDGES, DayRecord, RunResult, SUMMARY_KEYS

# bump when a column is added to or removed from any CSV or summary.json
SCHEMA_VERSION = 1

COMPARE_METRICS = (
    "travel_time_cost", "schedule_delay_cost", "random_utility", "cs", "welfare",
    "toll_payment", "price", "peak_accumulation",
)


def fmt(v) -> str:
    """Shortest round-trip text for a number; integers stay integers."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_days_csv(path: Path, history: list[DayRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DAY_COLUMNS)
        for rec in history:
            row = rec.scalars()
            w.writerow([fmt(row[c]) for c in DAY_COLUMNS])


def write_histogram_csv(path: Path, rec: DayRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_start", "bin_end", "departures"])
        for lo, hi, c in zip(HIST_EDGES[:-1], HIST_EDGES[1:], rec.histogram):
            w.writerow([fmt(lo), fmt(hi), int(c)])


def summary_doc(name: str, result: RunResult, config_hash: str, extra: dict | None = None) -> dict:
    scored = [r for r in result.history if not math.isnan(r.gap)]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scenario": name,
        "config_hash": config_hash,
        "converged": result.converged,
        "converged_day": result.converged_day,
        "days_run": len(result.history),
        "final_gap": scored[-1].gap if scored else None,
        "i_min": result.i_min,
        "equilibrium": {k: result.summary[k] for k in SUMMARY_KEYS},
    }
    if extra:
        doc.update(extra)
    return doc


def write_run(out: Path, name: str, result: RunResult, config_hash: str,
              extra: dict | None = None) -> list[Path]:
    """days.csv, per-day accumulation/departure files and summary.json."""
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "days.csv"]
    write_days_csv(files[0], result.history)
    for rec in result.history:
        if rec.trajectory is None:
            continue
        acc = out / f"accumulation_d{rec.day:02d}.csv"
        dep = out / f"departures_d{rec.day:02d}.csv"
        rec.trajectory.write_accumulation_csv(acc)
        write_histogram_csv(dep, rec)
        files += [acc, dep]
    files.append(out / "summary.json")
    write_json(files[-1], summary_doc(name, result, config_hash, extra))
    return files


def write_compare_csv(path: Path, rows: list[tuple[str, RunResult]]) -> None:
    header = ["scenario", "converged"]
    for m in COMPARE_METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for name, res in rows:
            line = [name, int(res.converged)]
            for m in COMPARE_METRICS:
                line += [fmt(res.summary[m]["mean"]), fmt(res.summary[m]["std"])]
            w.writerow(line)


def write_sweep_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["endowment", "price", "converged"])
        for i, p, ok in rows:
            w.writerow([fmt(i), fmt(p), int(ok)])


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def now_utc() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, *, command: str, config_hash: str, seed: int, started: str,
                   files: list[Path]) -> Path:
    """List every emitted file with its SHA-256. Timestamps live only here,
    so the other artifacts stay byte-stable across identical runs."""
    path = out / "manifest.json"
    inventory = {}
    for f in sorted(set(files)):
        rel = f.relative_to(out).as_posix()
        inventory[rel] = {"sha256": sha256_file(f), "bytes": f.stat().st_size}
    doc = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "code_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "started": started,
        "finished": now_utc(),
        "files": inventory,
    }
    write_json(path, doc)
    return path
