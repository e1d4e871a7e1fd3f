"""Episode logs (JSON-lines) and metric aggregation for result tables.

Tables aggregate: tracking error (overall and windowed mean/std), swing angle
(at the lift instant and windowed), tube margin (overall and windowed) and the
success rate (final container height above the threshold).  Every table cell
is recomputable from the raw logs alone.
"""

from __future__ import annotations

import json

import numpy as np

LOG_SCHEMA_VERSION = 1

METRIC_COLUMNS = [
    "label",
    "te_mean", "te_std", "te_wmean", "te_wstd",
    "swing_lift_mean", "swing_lift_std", "swing_wmean", "swing_wstd",
    "tube_mean", "tube_std", "tube_wmean", "tube_wstd",
    "success_rate",
]


def metrics_window(horizon: int, window: tuple[int, int],
                   reference_horizon: int) -> tuple[int, int]:
    """Window in steps; proportional fallback when the horizon is shorter."""
    lo, hi = window
    if horizon >= hi:
        return int(lo), int(hi)
    return (int(round(horizon * lo / reference_horizon)),
            int(round(horizon * hi / reference_horizon)))


class EpisodeRecord:
    """One finished episode: per-step records plus a summary."""

    def __init__(self, meta: dict, steps: list[dict], summary: dict):
        self.meta = meta
        self.steps = steps
        self.summary = summary

    @classmethod
    def from_env(cls, env) -> "EpisodeRecord":
        if env.summary is None:
            raise ValueError("episode has not terminated")
        return cls(dict(env.log_meta), list(env.steps), dict(env.summary))


def write_episode_logs(records: list[EpisodeRecord], path: str, manifest_hash: str):
    with open(path, "w") as fh:
        header = {"type": "header", "schema": LOG_SCHEMA_VERSION,
                  "manifest": manifest_hash, "episodes": len(records)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, rec in enumerate(records):
            meta = {"type": "episode", "index": i}
            meta.update(rec.meta)
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for step in rec.steps:
                row = {"type": "step", "episode": i}
                row.update(step)
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            summary = {"type": "summary", "episode": i}
            summary.update(rec.summary)
            fh.write(json.dumps(summary, sort_keys=True) + "\n")


def read_episode_logs(path: str) -> list[EpisodeRecord]:
    metas, steps, summaries = {}, {}, {}
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            kind = row.pop("type")
            if kind == "header":
                continue
            if kind == "episode":
                metas[row.pop("index")] = row
            elif kind == "step":
                steps.setdefault(row.pop("episode"), []).append(row)
            elif kind == "summary":
                summaries[row.pop("episode")] = row
    return [EpisodeRecord(metas[i], steps.get(i, []), summaries[i])
            for i in sorted(summaries)]


def _pooled(records: list[EpisodeRecord], key: str, window: tuple[int, int] | None):
    vals = []
    for rec in records:
        for st in rec.steps:
            if window is not None and not (window[0] <= st["step"] < window[1]):
                continue
            v = st[key]
            if v == v:   # skip NaN
                vals.append(v)
    return np.asarray(vals, dtype=float)


def _tracking_error(rec_step: dict) -> float:
    p = np.asarray(rec_step["p_tcp"])
    r = np.asarray(rec_step["p_ref"])
    return float(np.linalg.norm(r - p))


def aggregate_metrics(records: list[EpisodeRecord], label: str,
                      window: tuple[int, int]) -> dict:
    te_all, te_win, tube_all, tube_win, swing_win = [], [], [], [], []
    swing_lift, successes = [], 0
    for rec in records:
        for st in rec.steps:
            te = _tracking_error(st)
            te_all.append(te)
            tube_all.append(st["tube_delta"])
            swing = st["swing_angle"]
            in_win = window[0] <= st["step"] < window[1]
            if in_win:
                te_win.append(te)
                tube_win.append(st["tube_delta"])
                if swing == swing:
                    swing_win.append(swing)
        if rec.summary.get("swing_at_lift") is not None:
            swing_lift.append(rec.summary["swing_at_lift"])
        if rec.summary["success"]:
            successes += 1

    def stats(vals):
        if not vals:
            return float("nan"), float("nan")
        a = np.asarray(vals, dtype=float)
        return float(a.mean()), float(a.std())

    te_m, te_s = stats(te_all)
    te_wm, te_ws = stats(te_win)
    tube_m, tube_s = stats(tube_all)
    tube_wm, tube_ws = stats(tube_win)
    sl_m, sl_s = stats(np.rad2deg(swing_lift).tolist() if swing_lift else [])
    sw_wm, sw_ws = stats(np.rad2deg(swing_win).tolist() if swing_win else [])
    return {
        "label": label,
        "te_mean": te_m, "te_std": te_s, "te_wmean": te_wm, "te_wstd": te_ws,
        "swing_lift_mean": sl_m, "swing_lift_std": sl_s,
        "swing_wmean": sw_wm, "swing_wstd": sw_ws,
        "tube_mean": tube_m, "tube_std": tube_s,
        "tube_wmean": tube_wm, "tube_wstd": tube_ws,
        "success_rate": successes / len(records) if records else float("nan"),
    }


def write_metrics_csv(rows: list[dict], path: str, manifest_hash: str):
    """Fixed 6-decimal formatting for byte-stable diffs."""
    with open(path, "w") as fh:
        fh.write(f"# manifest {manifest_hash}\n")
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            cells = [str(row["label"])]
            for col in METRIC_COLUMNS[1:]:
                cells.append(f"{row[col]:.6f}")
            fh.write(",".join(cells) + "\n")


def read_metrics_csv(path: str) -> list[dict]:
    rows = []
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    header = lines[0].split(",")
    for ln in lines[1:]:
        cells = ln.split(",")
        row = {"label": cells[0]}
        for name, cell in zip(header[1:], cells[1:]):
            row[name] = float(cell)
        rows.append(row)
    return rows
