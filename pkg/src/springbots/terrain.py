"""Flat and rugged piecewise-linear ground."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RUGGED_SPAN = 1.25  # meters
DEFAULT_SLOPE_RANGE = (-0.3, 0.3)
DEFAULT_LENGTH_RANGE = (0.1, 0.3)


@dataclass(frozen=True, eq=False)
class Terrain:
    """Ground profile as contiguous segments ``(start_x, start_y, slope, length_x)``.

    An empty segment table is flat ground at height 0. Outside the generated
    span the height is extended flat from the boundary heights.
    """

    segments: np.ndarray  # (K, 4)

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=np.float64).reshape(-1, 4)
        if len(seg) > 1:
            end_x = seg[:-1, 0] + seg[:-1, 3]
            end_y = seg[:-1, 1] + seg[:-1, 2] * seg[:-1, 3]
            if not (np.allclose(end_x, seg[1:, 0], atol=1e-12) and np.allclose(end_y, seg[1:, 1], atol=1e-12)):
                raise ValueError("terrain segments are not contiguous")
        if (seg[:, 3] <= 0).any():
            raise ValueError("segment lengths must be positive")
        seg.setflags(write=False)
        object.__setattr__(self, "segments", seg)

    @property
    def kind(self) -> str:
        return "flat" if len(self.segments) == 0 else "rugged"

    @property
    def span(self) -> float:
        return float(self.segments[:, 3].sum()) if len(self.segments) else 0.0

    def height(self, x: float) -> float:
        return height_and_normal(self, x)[0]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.segments:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "Terrain":
        rows = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
                rows.append([float(p) for p in parts])
        return cls(np.array(rows).reshape(-1, 4))


def flat() -> Terrain:
    return Terrain(np.zeros((0, 4)))


def from_slopes(slopes, lengths, start=(0.0, 0.0)) -> Terrain:
    x, y = start
    rows = []
    for m, ln in zip(slopes, lengths):
        rows.append([x, y, m, ln])
        x, y = x + ln, y + m * ln
    return Terrain(np.array(rows).reshape(-1, 4))


def generate_rugged(
    rng: np.random.Generator,
    slope_range=DEFAULT_SLOPE_RANGE,
    length_range=DEFAULT_LENGTH_RANGE,
    span: float = RUGGED_SPAN,
) -> Terrain:
    """Append random segments from x = 0 until the span is reached."""
    lo_s, hi_s = slope_range
    lo_l, hi_l = length_range
    if hi_s < lo_s or hi_l < lo_l or lo_l <= 0:
        raise ValueError(f"invalid ranges: slope {slope_range}, length {length_range}")
    slopes, lengths = [], []
    total = 0.0
    while total < span:
        slopes.append(rng.uniform(lo_s, hi_s))
        lengths.append(rng.uniform(lo_l, hi_l))
        total += lengths[-1]
    return from_slopes(slopes, lengths)


def segment_at(segments: np.ndarray, x: float) -> int:
    """Index of the segment covering x; -1 left of the span, K right of it."""
    k = len(segments)
    if k == 0 or x < segments[0, 0]:
        return -1
    i = int(np.searchsorted(segments[:, 0], x, side="right")) - 1
    if x > segments[i, 0] + segments[i, 3]:
        return k
    return i


def height_and_normal(terrain: Terrain, x: float) -> tuple[float, np.ndarray]:
    """Height at x and the upward unit normal of the local segment."""
    seg = terrain.segments
    i = segment_at(seg, x)
    if i == -1:
        return (float(seg[0, 1]) if len(seg) else 0.0), np.array([0.0, 1.0])
    if i == len(seg):
        return float(seg[-1, 1] + seg[-1, 2] * seg[-1, 3]), np.array([0.0, 1.0])
    x0, y0, m, _ = seg[i]
    return float(y0 + m * (x - x0)), np.array([-m, 1.0]) / np.hypot(m, 1.0)


def line_table(terrain: Terrain) -> np.ndarray:
    """Lines ``(x_from, x_to, x0, y0, slope)`` covering the real axis, for the kernels."""
    seg = terrain.segments
    if len(seg) == 0:
        return np.array([[-np.inf, np.inf, 0.0, 0.0, 0.0]])
    end_x = seg[-1, 0] + seg[-1, 3]
    end_y = seg[-1, 1] + seg[-1, 2] * seg[-1, 3]
    rows = [[-np.inf, seg[0, 0], seg[0, 0], seg[0, 1], 0.0]]
    rows += [[s[0], s[0] + s[3], s[0], s[1], s[2]] for s in seg]
    rows.append([end_x, np.inf, end_x, end_y, 0.0])
    return np.array(rows)
