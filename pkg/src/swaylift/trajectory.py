"""Reference trajectory: Catmull-Rom spline through task waypoints, split into
approach (A), alignment/descent (B) and lift (C) segments, plus the tube metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SEGMENTS = ("A", "B", "C")


@dataclass
class TrajectorySpec:
    points: np.ndarray            # (M, 3) control points
    labels: list[str]             # per-point segment label
    tube_radius: float
    advance_radius: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.shape[0] < 3:
            raise ValueError("need at least 3 control points")
        if len(self.labels) != self.points.shape[0]:
            raise ValueError("one label per control point required")
        gaps = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        if np.any(gaps == 0.0):
            raise ValueError("consecutive control points must be distinct")
        runs = [self.labels[0]]
        for lab in self.labels[1:]:
            if lab != runs[-1]:
                runs.append(lab)
        if runs != list(SEGMENTS):
            raise ValueError(f"labels must form exactly three runs A,B,C, got {runs}")
        if self.tube_radius <= 0 or self.advance_radius <= 0:
            raise ValueError("radii must be positive")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def is_segment_boundary(self, idx: int) -> bool:
        """Last point of its segment (the next point has a different label)."""
        if idx >= self.n_points - 1:
            return True
        return self.labels[idx] != self.labels[idx + 1]

    def lift_waypoint_index(self) -> int:
        """Index of the hook pose: the final B point."""
        return max(i for i, lab in enumerate(self.labels) if lab == "B")


def tube_delta(p_tcp, p1, p2, r: float) -> float:
    """Signed tube margin around the infinite line through the active segment.

    delta = max(-r/2, r - ||(p - p1) x (p2 - p1)|| / ||p2 - p1||); positive
    while the TCP stays inside the tube, floored at -r/2.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    seg = p2 - p1
    seg_len = float(np.sqrt(seg @ seg))
    if seg_len == 0.0:
        raise ValueError("degenerate segment")
    w = np.asarray(p_tcp, dtype=float) - p1
    cx = w[1] * seg[2] - w[2] * seg[1]
    cy = w[2] * seg[0] - w[0] * seg[2]
    cz = w[0] * seg[1] - w[1] * seg[0]
    dist = float(np.sqrt(cx * cx + cy * cy + cz * cz)) / seg_len
    return max(-0.5 * r, r - dist)


def _catmull_rom_chain(waypoints: np.ndarray, samples_per_span: int) -> list[np.ndarray]:
    """Uniform Catmull-Rom through all waypoints, one dense polyline per span."""
    W = np.asarray(waypoints, dtype=float)
    padded = np.vstack([W[0], W, W[-1]])
    spans = []
    ts = np.linspace(0.0, 1.0, samples_per_span)
    for i in range(len(W) - 1):
        p0, p1, p2, p3 = padded[i], padded[i + 1], padded[i + 2], padded[i + 3]
        m1 = 0.5 * (p2 - p0)
        m2 = 0.5 * (p3 - p1)
        t = ts[:, None]
        h00 = 2 * t ** 3 - 3 * t ** 2 + 1
        h10 = t ** 3 - 2 * t ** 2 + t
        h01 = -2 * t ** 3 + 3 * t ** 2
        h11 = t ** 3 - t ** 2
        spans.append(h00 * p1 + h10 * m1 + h01 * p2 + h11 * m2)
    return spans


def _resample_span(polyline: np.ndarray, n: int) -> np.ndarray:
    """Arc-length uniform resampling of a dense polyline into n points."""
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, polyline.shape[1]))
    for k, st in enumerate(targets):
        i = min(np.searchsorted(s, st, side="right") - 1, len(seg) - 1)
        w = 0.0 if seg[i] == 0.0 else (st - s[i]) / seg[i]
        out[k] = (1.0 - w) * polyline[i] + w * polyline[i + 1]
    return out


def build_trajectory(tcp0: np.ndarray, hook_point: np.ndarray, n_points: int,
                     tube_radius: float, advance_radius: float,
                     approach_height: float = 0.8, lift_height: float = 1.2,
                     fine_samples: int = 200) -> TrajectorySpec:
    """Spline through tcp0 -> approach (above the hook) -> hook -> lift top.

    Points are arc-length discretized per waypoint span so the approach point
    and the hook pose are themselves control points; segment labels assign the
    approach point to A and the hook pose to B, making the B->C transition
    land exactly on the hook.
    """
    tcp0 = np.asarray(tcp0, dtype=float)
    hook = np.asarray(hook_point, dtype=float)
    approach = hook + np.array([0.0, 0.0, approach_height])
    top = hook + np.array([0.0, 0.0, lift_height])
    if np.linalg.norm(tcp0 - hook) < 1e-9:
        pts = np.vstack([hook + np.array([0.0, 0.0, 1e-3]), hook, top])
        return TrajectorySpec(pts, ["A", "B", "C"], tube_radius, advance_radius)

    spans = _catmull_rom_chain(np.vstack([tcp0, approach, hook, top]), fine_samples)
    lengths = np.array([np.sum(np.linalg.norm(np.diff(s, axis=0), axis=1)) for s in spans])
    total = float(lengths.sum())
    # allocate interior points proportionally; every span keeps its endpoints
    counts = np.maximum(2, np.rint(n_points * lengths / total).astype(int) + 1)
    sampled = [_resample_span(spans[i], counts[i]) for i in range(3)]
    pts = np.vstack([sampled[0], sampled[1][1:], sampled[2][1:]])
    n_a = counts[0]                       # ... tcp0 to approach, inclusive
    n_b = counts[1] - 1                   # after approach up to the hook
    labels = ["A"] * n_a + ["B"] * n_b + ["C"] * (pts.shape[0] - n_a - n_b)
    return TrajectorySpec(pts, labels, tube_radius, advance_radius)
