"""Synthetic multimodal cohort with a controllable severity knob.

Every patient draws a severity uniformly from the configured range; the
generators inject perturbations that grow monotonically with it:

* speech: period jitter and amplitude shimmer of a harmonic vowel source
* handwriting: a 5-6 Hz tremor on the spiral trace and a slower drawing speed
* gait: a 3-8 Hz oscillation riding on the 1-2 Hz stepping pattern

Controls and severity-0 patients come from the same distributions.
"""

from dataclasses import dataclass
import logging
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .gait.features import CHANNELS
from .speech_features import N_PHONOLOGICAL, SAMPLE_RATE, SpeechRecording, write_wav

log = logging.getLogger(__name__)

MAX_SCORE = 132
SPEECH_TASKS = ("vowel_a", "vowel_o")
PEN_TASKS = ("spiral_1", "spiral_2")
GAIT_TASK = "walk"
FEET = ("left", "right")
PEN_RATE = 180.0
GAIT_RATE = 100.0


@dataclass(frozen=True)
class SynthConfig:
    n_controls: int = 30
    n_patients: int = 40
    severity_range: tuple = (0.0, float(MAX_SCORE))
    speech_gain: float = 1.0
    handwriting_gain: float = 1.0
    gait_gain: float = 1.0
    phonological_gain: float = 1.0
    seed: int = 0
    gait_seconds: float = 15.0

    def __post_init__(self):
        if self.n_controls < 2 or self.n_patients < 2:
            raise ValidationError("need at least two controls and two patients")
        lo, hi = self.severity_range
        if not 0 <= lo <= hi <= MAX_SCORE:
            raise ValidationError(f"severity range must lie within [0, {MAX_SCORE}]")
        if min(self.speech_gain, self.handwriting_gain, self.gait_gain, self.phonological_gain) < 0:
            raise ValidationError("distortion gains must be non-negative")
        if self.gait_seconds < 10:
            raise ValidationError("gait recordings must cover at least one 10 s window")


# programmed perturbation levels; s is severity / 132
def jitter_level(s, gain=1.0):
    return 0.002 + 0.02 * gain * s


def shimmer_level(s, gain=1.0):
    return 0.02 + 0.15 * gain * s


def tremor_amplitude(s, gain=1.0):
    return 1.5 * gain * s  # mm


def freeze_amplitude(s, gain=1.0):
    return 1.2 * gain * s  # relative to the locomotor amplitude


def slowdown(s, gain=1.0):
    return 1.0 + 0.8 * gain * s


# -- speech --------------------------------------------------------------------

def _vowel(rng, f0, seconds, jitter, shimmer, fs=SAMPLE_RATE):
    """Harmonic source whose cycles carry random period and amplitude perturbations."""
    n_cycles = int(seconds * f0 * 1.2) + 4
    glide = np.linspace(1.0, 0.95, n_cycles)  # gentle declination
    periods = fs / (f0 * glide) * (1.0 + jitter * rng.standard_normal(n_cycles))
    amps = np.clip(1.0 + shimmer * rng.standard_normal(n_cycles), 0.2, None)
    edges = np.r_[0.0, np.cumsum(periods)]
    n = int(seconds * fs)
    phase = np.interp(np.arange(n), edges, np.arange(len(edges)))
    cyc = np.floor(phase).astype(int)
    # truncated sawtooth series: one rising zero crossing per cycle
    x = sum(np.sin(2 * np.pi * h * phase) / h for h in range(1, 9))
    x = x * amps[cyc]
    ramp = int(0.02 * fs)
    env = np.ones(n)
    env[:ramp] = np.linspace(0, 1, ramp)
    env[-ramp:] = np.linspace(1, 0, ramp)
    return x * env


def synth_speech(rng, severity, gender, gain=1.0, n_segments=4, fs=SAMPLE_RATE):
    s = severity / MAX_SCORE
    base_f0 = rng.uniform(105, 130) if gender == "M" else rng.uniform(185, 220)
    gap = lambda sec: 0.004 * rng.standard_normal(int(sec * fs))  # noqa: E731
    parts = [gap(0.3)]
    for _ in range(n_segments):
        f0 = base_f0 * rng.uniform(0.95, 1.05)
        v = _vowel(rng, f0, rng.uniform(0.6, 0.8), jitter_level(s, gain), shimmer_level(s, gain), fs)
        parts += [0.35 * v + 0.002 * rng.standard_normal(len(v)), gap(rng.uniform(0.25, 0.35))]
    return np.concatenate(parts)


def synth_phonological(rng, n_frames, severity, gain=1.0):
    """Smoothed posteriors in [0, 1] whose spread grows with severity."""
    s = severity / MAX_SCORE
    base = np.linspace(-1.5, 1.5, N_PHONOLOGICAL)
    z = rng.standard_normal((n_frames + 8, N_PHONOLOGICAL))
    kernel = np.ones(9) / 3.0  # unit variance after a 9-point moving sum / 3
    z = np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="valid"), 0, z)
    return 1.0 / (1.0 + np.exp(-(base + (1.0 + 2.0 * gain * s) * z)))


# -- handwriting ---------------------------------------------------------------

def synth_spiral(rng, severity, gain=1.0, fs=PEN_RATE):
    """Columns t, x, y, pressure, azimuth, altitude, state of one spiral task."""
    s = severity / MAX_SCORE
    size = rng.uniform(0.9, 1.1)
    duration = 6.0 * rng.uniform(0.9, 1.1) * slowdown(s, gain)
    turns = 3.0
    approach, leave = 0.5, 0.3
    n_on = int(duration * fs)
    n_a, n_l = int(approach * fs), int(leave * fs)
    u = np.arange(n_on) / n_on
    theta = 2 * np.pi * turns * u
    radius = size * (5.0 + 45.0 * u)
    cx, cy = 100.0, 80.0
    x_on = cx + radius * np.cos(theta)
    y_on = cy + radius * np.sin(theta)
    t_on = np.arange(n_on) / fs
    f_tr = rng.uniform(5.0, 6.0)
    amp = tremor_amplitude(s, gain)
    x_on += amp * np.sin(2 * np.pi * f_tr * t_on + rng.uniform(0, 2 * np.pi))
    y_on += amp * np.sin(2 * np.pi * f_tr * t_on + rng.uniform(0, 2 * np.pi))
    # pen approaches from the upper left, then leaves upwards
    x0, y0 = x_on[0], y_on[0]
    w = np.linspace(0, 1, n_a, endpoint=False)
    x_a, y_a = x0 - 30 * (1 - w), y0 + 20 * (1 - w)
    w = np.linspace(0, 1, n_l + 1)[1:]
    x_l, y_l = x_on[-1] + 10 * w, y_on[-1] + 25 * w
    x = np.r_[x_a, x_on, x_l] + 0.005 * rng.standard_normal(n_a + n_on + n_l)
    y = np.r_[y_a, y_on, y_l] + 0.005 * rng.standard_normal(n_a + n_on + n_l)
    state = np.r_[np.zeros(n_a, int), np.ones(n_on, int), np.zeros(n_l, int)]
    n = len(state)
    t = np.arange(n) / fs
    slow = np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
    pressure = np.clip(0.55 + 0.1 * slow + 0.02 * rng.standard_normal(n), 0.05, 1.0)
    pressure[state == 0] = 0.0
    azimuth = 1.2 + 0.05 * slow + 0.01 * rng.standard_normal(n)
    altitude = 0.9 - 0.04 * slow + 0.01 * rng.standard_normal(n)
    return np.column_stack([t, x, y, pressure, azimuth, altitude, state])


# -- gait ----------------------------------------------------------------------

def synth_gait(rng, severity, gain=1.0, seconds=15.0, fs=GAIT_RATE):
    """6 x N inertial channels: locomotor harmonics plus a severity-scaled 3-8 Hz part."""
    s = severity / MAX_SCORE
    n = int(seconds * fs)
    t = np.arange(n) / fs
    stride = rng.uniform(0.8, 0.95) * (1.0 - 0.1 * gain * s)
    # slow wander of the cadence keeps the pattern from being strictly periodic
    wander = np.cumsum(rng.standard_normal(n)) / np.sqrt(n) * 0.05
    phase = 2 * np.pi * np.cumsum(stride * (1.0 + wander)) / fs
    f_fr = rng.uniform(4.5, 6.5)
    env = 0.5 * (1.0 + np.sin(2 * np.pi * 0.15 * t + rng.uniform(0, 2 * np.pi)))
    out = np.empty((len(CHANNELS), n))
    for c in range(len(CHANNELS)):
        scale = rng.uniform(0.8, 1.2) * (1.0 if c < 3 else 2.0)
        h = rng.uniform(0, 2 * np.pi, size=3)
        # step rate (twice the stride rate) dominates; all harmonics stay below 3 Hz
        loco = 0.5 * np.sin(phase + h[0]) + np.sin(2 * phase + h[1]) + 0.1 * np.sin(3 * phase + h[2])
        freeze = freeze_amplitude(s, gain) * env * np.sin(2 * np.pi * f_fr * t + rng.uniform(0, 2 * np.pi))
        out[c] = scale * (loco + freeze + 0.08 * rng.standard_normal(n))
    return out


# -- cohort --------------------------------------------------------------------

def _fmt_rows(arr, fmt):
    return "".join(fmt % tuple(r) + "\n" for r in arr)


def _subject_ids(cfg):
    return ([f"C{i + 1:03d}" for i in range(cfg.n_controls)]
            + [f"P{i + 1:03d}" for i in range(cfg.n_patients)])


def generate_cohort(cfg, out_dir):
    """Write metadata.csv and one directory per subject; returns the metadata path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create {out}: {exc}") from None
    ids = _subject_ids(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(ids) + 1)
    meta_rng = np.random.default_rng(seeds[-1])
    lo, hi = cfg.severity_range
    rows = ["id,group,gender,age,updrs"]
    for i, sid in enumerate(ids):
        patient = i >= cfg.n_controls
        gender = "F" if meta_rng.random() < 0.5 else "M"
        age = int(meta_rng.integers(45, 81))
        score = int(round(meta_rng.uniform(lo, hi))) if patient else None
        rows.append(f"{sid},{'patient' if patient else 'control'},{gender},{age},"
                    f"{'' if score is None else score}")
        write_subject(out / sid, np.random.default_rng(seeds[i]), score or 0, gender, cfg)
    meta = out / "metadata.csv"
    meta.write_text("\n".join(rows) + "\n")
    return meta


def write_subject(root, rng, severity, gender, cfg):
    for sub in ("speech", "phonological", "handwriting", "gait"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for task in SPEECH_TASKS:
        x = synth_speech(rng, severity, gender, cfg.speech_gain)
        write_wav(root / "speech" / f"{task}.wav", SpeechRecording(x, SAMPLE_RATE))
        n_frames = int(len(x) / SAMPLE_RATE / 0.01)
        post = synth_phonological(rng, n_frames, severity, cfg.phonological_gain)
        table = np.column_stack([np.arange(n_frames) * 0.01, post])
        header = "time," + ",".join(f"class_{j + 1}" for j in range(N_PHONOLOGICAL)) + "\n"
        (root / "phonological" / f"{task}.csv").write_text(
            header + _fmt_rows(table, "%.2f" + ",%.5f" * N_PHONOLOGICAL))
    for task in PEN_TASKS:
        a = synth_spiral(rng, severity, cfg.handwriting_gain)
        (root / "handwriting" / f"{task}.csv").write_text(
            "t,x,y,pressure,azimuth,altitude,state\n"
            + _fmt_rows(a, "%.6f,%.4f,%.4f,%.4f,%.5f,%.5f,%d"))
    for foot in FEET:
        g = synth_gait(rng, severity, cfg.gait_gain, cfg.gait_seconds)
        table = np.column_stack([np.arange(g.shape[1]) / GAIT_RATE, g.T])
        (root / "gait" / f"{GAIT_TASK}_{foot}.csv").write_text(
            "t," + ",".join(CHANNELS) + "\n" + _fmt_rows(table, "%.2f" + ",%.5f" * 6))
