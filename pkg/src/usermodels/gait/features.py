import csv
from dataclasses import dataclass
import logging

import numpy as np

from ..errors import NumericalError, ValidationError
from ..frames import FrameSequence
from . import nonlinear as nl
from .harmonic import harmonic_features

log = logging.getLogger(__name__)

CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")
TASKS = ("walk20", "walk40", "heeltoe", "tug")
NOMINAL_RATE = 100.0

HARMONIC_WINDOW = (3.0, 0.5)
NONLINEAR_WINDOW = (10.0, 0.5)
NONLINEAR_NAMES = ("corr_dim", "lyapunov", "hurst", "dfa", "sample_entropy", "lempel_ziv")


@dataclass(frozen=True, eq=False)
class InertialRecording:
    """Six inertial channels (3 accelerometer, 3 gyroscope) from one foot."""

    data: np.ndarray  # 6 x N
    fs: float = NOMINAL_RATE
    foot: str = ""
    task: str = ""

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 2 or d.shape[0] != len(CHANNELS):
            raise ValidationError(f"expected {len(CHANNELS)} x N channel matrix, got {d.shape}")
        if self.fs <= 0:
            raise ValidationError("sample rate must be positive")
        if not np.all(np.isfinite(d)):
            raise ValidationError("non-finite inertial samples")
        object.__setattr__(self, "data", d)

    @property
    def duration(self):
        return self.data.shape[1] / self.fs


def load_gait_csv(path, foot="", task=""):
    """Read a ``t,ax,ay,az,gx,gy,gz`` file; the rate is inferred from the time column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["t", *CHANNELS]:
            raise ValidationError(f"{path}: unexpected gait header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise ValidationError(f"{path}:{lineno}: expected 7 columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: malformed number") from None
    arr = np.array(rows)
    if arr.shape[0] < 2:
        raise ValidationError(f"{path}: fewer than two samples")
    dt = np.diff(arr[:, 0])
    if np.any(dt <= 0):
        raise ValidationError(f"{path}: time column is not strictly increasing")
    return InertialRecording(arr[:, 1:].T, 1.0 / np.median(dt), foot, task)


def window_starts(n_samples, fs, length, overlap):
    win = int(round(length * fs))
    hop = int(round(length * (1.0 - overlap) * fs))
    if win > n_samples:
        raise ValidationError(f"recording of {n_samples / fs:.2f} s shorter than a {length} s window")
    if hop < 1:
        raise ValidationError("overlap leaves no hop between windows")
    return np.arange(0, n_samples - win + 1, hop), win


def window_signal(rec, length, overlap=0.5):
    """Fixed-length windows (channels x samples); the trailing remainder is dropped."""
    starts, win = window_starts(rec.data.shape[1], rec.fs, length, overlap)
    return [rec.data[:, s:s + win] for s in starts]


def channel_nonlinear_features(x, fs, dim=4):
    tau = nl.first_ami_minimum(x)
    cfg = nl.EmbeddingConfig(dim=dim, delay=tau)
    return [
        nl.correlation_dimension(x, cfg),
        # a 10 s window has 1000 samples; the stand-alone estimator asks for 2000
        nl.largest_lyapunov(x, cfg, fs=fs, min_length=500),
        nl.hurst(x),
        nl.dfa(x),
        nl.sample_entropy(x),
        nl.lempel_ziv(x),
    ]


def nonlinear_features(window, fs=NOMINAL_RATE):
    """36-vector: six estimators for each of the six channels."""
    window = np.atleast_2d(np.asarray(window, dtype=float))
    return np.concatenate([channel_nonlinear_features(ch, fs) for ch in window])


def harmonic_frames(recordings, length=HARMONIC_WINDOW[0], overlap=HARMONIC_WINDOW[1]):
    rows = []
    for rec in recordings:
        for w in window_signal(rec, length, overlap):
            try:
                rows.append(harmonic_features(w, rec.fs))
            except NumericalError as exc:
                log.warning("dropping harmonic window (%s/%s): %s", rec.task, rec.foot, exc)
    if not rows:
        raise ValidationError("no usable harmonic windows")
    return FrameSequence(np.array(rows), length * (1 - overlap), "gait", "harmonic")


def nonlinear_frames(recordings, length=NONLINEAR_WINDOW[0], overlap=NONLINEAR_WINDOW[1]):
    """Nonlinear vectors per window; windows where any estimator fails are dropped."""
    rows = []
    for rec in recordings:
        for w in window_signal(rec, length, overlap):
            try:
                rows.append(nonlinear_features(w, rec.fs))
            except (NumericalError, ValidationError) as exc:
                log.warning("dropping nonlinear window (%s/%s): %s", rec.task, rec.foot, exc)
    if not rows:
        raise ValidationError("no usable nonlinear windows")
    return FrameSequence(np.array(rows), length * (1 - overlap), "gait", "nonlinear")
