"""Kinematic descriptors of on-surface and in-air pen movement."""

import csv
from dataclasses import dataclass
import logging

import numpy as np

from .errors import ValidationError
from .frames import FrameSequence

log = logging.getLogger(__name__)

HEADER = ["t", "x", "y", "pressure", "azimuth", "altitude", "state"]
AIR, SURFACE = 0, 1
NOMINAL_RATE = 180.0
KINEMATIC_NAMES = (
    "y", "x", "r", "theta",
    "vy", "vx", "vr", "vtheta",
    "ay", "ax", "ar", "atheta",
    "pressure", "azimuth", "altitude",
    "d_pressure", "d_azimuth", "d_altitude",
    "speed", "path_acceleration", "in_air",
)
KINEMATIC_DIM = len(KINEMATIC_NAMES)


@dataclass(frozen=True, eq=False)
class PenTrace:
    """Column-wise pen samples of one task."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    pressure: np.ndarray
    azimuth: np.ndarray
    altitude: np.ndarray
    state: np.ndarray  # 1 on surface, 0 in air
    task: str = ""

    def __post_init__(self):
        cols = {}
        for name in ("t", "x", "y", "pressure", "azimuth", "altitude", "state"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"non-finite {name} values")
            cols[name] = v
        n = {len(v) for v in cols.values()}
        if len(n) != 1:
            raise ValidationError("pen columns differ in length")
        if np.any(np.diff(cols["t"]) <= 0):
            raise ValidationError("timestamps not strictly increasing")
        if not np.all(np.isin(cols["state"], (AIR, SURFACE))):
            raise ValidationError("pen state must be 0 (air) or 1 (surface)")
        if np.any(cols["pressure"] < 0):
            raise ValidationError("negative pressure")
        if np.any((cols["pressure"] > 0) != (cols["state"] == SURFACE)):
            raise ValidationError("pressure contradicts pen state (pressure is 0 iff in air)")
        cols["state"] = cols["state"].astype(int)
        for k, v in cols.items():
            object.__setattr__(self, k, v)

    def __len__(self):
        return self.t.shape[0]


def parse_pen_stream(path, task=""):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != HEADER:
            raise ValidationError(f"{path}: expected header {','.join(HEADER)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(HEADER):
                raise ValidationError(f"{path}:{lineno}: malformed row")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: malformed row") from None
    if not rows:
        raise ValidationError(f"{path}: no samples")
    a = np.array(rows)
    bad = np.flatnonzero(np.diff(a[:, 0]) <= 0)
    if bad.size:
        raise ValidationError(f"{path}:{bad[0] + 3}: timestamp not increasing")
    return PenTrace(*a.T, task=task)


@dataclass(frozen=True)
class Stroke:
    kind: int  # SURFACE or AIR
    start: int  # sample indices [start, stop)
    stop: int

    def __len__(self):
        return self.stop - self.start


def segment_strokes(trace):
    """Constant pen-state runs; one-sample runs are absorbed into a neighbour.

    A singleton joins the preceding stroke (or the following one when it
    opens the trace); strokes of equal kind that end up adjacent are joined.
    """
    if len(trace) < 2:
        raise ValidationError("need at least two pen samples")
    s = trace.state
    cuts = np.flatnonzero(np.diff(s)) + 1
    bounds = np.r_[0, cuts, len(s)]
    out = []
    pending = None  # leading singletons waiting for a stroke
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a == 1:
            if out:
                out[-1] = Stroke(out[-1].kind, out[-1].start, b)
            elif pending is None:
                pending = a
            continue
        start = a if pending is None else pending
        pending = None
        if out and out[-1].kind == s[a]:
            out[-1] = Stroke(out[-1].kind, out[-1].start, b)
        else:
            out.append(Stroke(int(s[a]), int(start), int(b)))
    if pending is not None:
        out.append(Stroke(int(s[pending]), int(pending), len(s)))
    return out


def _deriv(v, t):
    return np.gradient(v, t) if len(t) > 1 else np.zeros_like(v)


def kinematic_features(trace, strokes=None):
    """One 21-descriptor frame per sample; r and theta are taken about the trace centroid."""
    if strokes is None:
        strokes = segment_strokes(trace)
    if not strokes:
        raise ValidationError("no strokes")
    cx, cy = trace.x.mean(), trace.y.mean()
    rows = []
    hold = np.zeros(4)
    for st in strokes:
        if len(st) < 2:
            continue
        sl = slice(st.start, st.stop)
        t, x, y = trace.t[sl], trace.x[sl], trace.y[sl]
        dx, dy = x - cx, y - cy
        r = np.hypot(dx, dy)
        theta = np.unwrap(np.arctan2(dy, dx))
        vel = [_deriv(v, t) for v in (y, x, r, theta)]
        if len(st) < 3:
            log.warning("stroke of %d samples at t=%.3f: holding previous acceleration", len(st), t[0])
            acc = [np.full(len(t), h) for h in hold]
        else:
            acc = [_deriv(v, t) for v in vel]
        speed = np.hypot(vel[0], vel[1])
        path_acc = _deriv(speed, t) if len(st) >= 3 else np.zeros(len(t))
        p, az, alt = trace.pressure[sl], trace.azimuth[sl], trace.altitude[sl]
        block = np.column_stack([
            y, x, r, theta, *vel, *acc, p, az, alt,
            _deriv(p, t), _deriv(az, t), _deriv(alt, t),
            speed, path_acc, np.full(len(t), float(st.kind == AIR)),
        ])
        hold = block[-1, 8:12]
        rows.append(block)
    if not rows:
        raise ValidationError("no stroke long enough for kinematics")
    data = np.vstack(rows)
    period = float(np.median(np.diff(trace.t)))
    return FrameSequence(data, period, "handwriting", "kinematic")


def handwriting_frames(traces):
    """Pool kinematic frames over all tasks of a subject."""
    seqs = [kinematic_features(tr) for tr in traces]
    if not seqs:
        raise ValidationError("no handwriting tasks")
    return FrameSequence(np.vstack([s.data for s in seqs]), seqs[0].frame_period, "handwriting", "kinematic")
