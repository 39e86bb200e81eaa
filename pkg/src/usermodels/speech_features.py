"""Phonation, articulation, prosody and phonological descriptors of speech."""

import csv
from dataclasses import dataclass, field
import logging
from typing import NamedTuple
import wave

import numpy as np
from scipy.fft import dct

from .errors import ValidationError
from .frames import FrameSequence

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
FRAME_LENGTH = 0.040
FRAME_HOP = 0.010
F0_MIN, F0_MAX = 50.0, 500.0
VOICING_THRESHOLD = 0.45
MIN_SEGMENT = 0.060
ONSET_HALF_WIDTH = 0.040
SUBFRAME_LENGTH = 0.025
N_MEL = 26
N_MFCC = 12
PERTURBATION_POINTS = 5
PROSODY_NODES = 6

# Zwicker critical-band edges, truncated at 8 kHz
BARK_EDGES = np.array([0, 100, 200, 300, 400, 510, 630, 770, 920, 1080, 1270, 1480, 1720, 2000,
                       2320, 2700, 3150, 3700, 4400, 5300, 6400, 7700, 8000], dtype=float)
N_BARK = len(BARK_EDGES) - 1
ARTICULATION_DIM = N_BARK + 3 * N_MFCC
PROSODY_DIM = 2 * PROSODY_NODES + 1
PHONATION_NAMES = ("jitter", "shimmer", "apq", "ppq", "d_f0", "dd_f0", "log_energy")
N_PHONOLOGICAL = 18


@dataclass(frozen=True, eq=False)
class SpeechRecording:
    samples: np.ndarray
    fs: float = SAMPLE_RATE
    subject: str = ""
    task: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1:
            raise ValidationError("speech must be a mono sample vector")
        if self.fs <= 0:
            raise ValidationError("sample rate must be positive")
        if not np.all(np.isfinite(x)):
            raise ValidationError("non-finite speech samples")
        object.__setattr__(self, "samples", x)

    @property
    def duration(self):
        return self.samples.shape[0] / self.fs


@dataclass(frozen=True, eq=False)
class F0Contour:
    values: np.ndarray  # Hz, 0 = unvoiced
    hop: float = FRAME_HOP
    frame: float = FRAME_LENGTH
    strength: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if self.hop <= 0 or self.frame <= 0:
            raise ValidationError("hop and frame length must be positive")
        voiced = v > 0
        if np.any(v < 0) or np.any((v[voiced] < F0_MIN) | (v[voiced] > F0_MAX)):
            raise ValidationError(f"voiced F0 values must lie in [{F0_MIN}, {F0_MAX}] Hz")
        object.__setattr__(self, "values", v)

    @property
    def voiced(self):
        return self.values > 0

    def centre(self, i):
        return i * self.hop + self.frame / 2


class Segment(NamedTuple):
    start: float  # seconds
    end: float
    first: int  # contour frame indices [first, stop)
    stop: int


@dataclass(frozen=True, eq=False)
class OnsetSegment:
    time: float
    samples: np.ndarray
    fs: float


def frame_matrix(x, fs, length=FRAME_LENGTH, hop=FRAME_HOP):
    win, step = int(round(length * fs)), int(round(hop * fs))
    if x.shape[0] < win:
        raise ValidationError(f"recording shorter than one {length * 1000:.0f} ms frame")
    n = 1 + (x.shape[0] - win) // step
    idx = np.arange(n)[:, None] * step + np.arange(win)[None, :]
    return x[idx]


def _nccf(frames, max_lag):
    """Normalised cross-correlation of each frame with its own lagged copy."""
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    r = np.fft.irfft(np.abs(spec) ** 2, nfft, axis=1)[:, :max_lag + 1]
    sq = np.cumsum(frames ** 2, axis=1)
    lags = np.arange(max_lag + 1)
    head = sq[:, n - 1 - lags]  # energy of x[0 : n - lag]
    tail = sq[:, -1:] - np.concatenate([np.zeros((len(frames), 1)), sq[:, :max_lag]], axis=1)
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, r / denom, 0.0)
    return out


def estimate_f0(rec):
    """Per-frame pitch from the normalised autocorrelation peak (0 = unvoiced)."""
    frames = frame_matrix(rec.samples, rec.fs)
    frames = frames - frames.mean(axis=1, keepdims=True)
    lo = int(np.floor(rec.fs / F0_MAX))
    hi = int(np.ceil(rec.fs / F0_MIN))
    if hi >= frames.shape[1]:
        raise ValidationError("frame too short for the lowest pitch")
    nccf = _nccf(frames, hi + 1)
    f0 = np.zeros(len(frames))
    strength = np.zeros(len(frames))
    for i, c in enumerate(nccf):
        seg = c[lo:hi + 1]
        # local maxima inside the search band
        peaks = np.flatnonzero((seg[1:-1] > seg[:-2]) & (seg[1:-1] >= seg[2:])) + 1
        if peaks.size == 0:
            continue
        best = seg[peaks].max()
        strength[i] = best
        if best < VOICING_THRESHOLD:
            continue
        # shortest lag close to the best peak: avoids halving the pitch
        k = peaks[np.argmax(seg[peaks] >= 0.9 * best)] + lo
        a, b, d = c[k - 1], c[k], c[k + 1]
        den = a - 2 * b + d
        shift = 0.5 * (a - d) / den if den < 0 else 0.0
        f = rec.fs / (k + shift)
        if F0_MIN <= f <= F0_MAX:
            f0[i] = f
    return F0Contour(f0, FRAME_HOP, FRAME_LENGTH, strength)


def segment_voiced(contour, min_length=MIN_SEGMENT):
    """Maximal voiced runs of at least ``min_length`` seconds."""
    v = np.r_[False, contour.voiced, False].astype(np.int8)
    edges = np.diff(v)
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    out = []
    for a, b in zip(starts, stops):
        if (b - a) * contour.hop < min_length - 1e-9:
            continue
        t0 = contour.centre(a) - contour.hop / 2
        out.append(Segment(t0, t0 + (b - a) * contour.hop, int(a), int(b)))
    return out


def frame_log_energy(rec, contour):
    frames = frame_matrix(rec.samples, rec.fs, contour.frame, contour.hop)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(frames ** 2, axis=1))


# -- phonation ---------------------------------------------------------------

def _rising_crossings(x):
    """Fractional sample positions of negative-to-nonnegative transitions."""
    i = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    return i + (-x[i]) / (x[i + 1] - x[i])


def cycle_chains(x, fs, f0_at):
    """Consecutive glottal-cycle marks grouped into unbroken chains.

    Each next mark is the rising zero crossing nearest to prev + T0 within
    30% of T0; when none qualifies the chain ends and a new one starts.
    """
    marks = _rising_crossings(x)
    chains, current = [], []
    j = 0
    while j < len(marks):
        m = marks[j]
        if not current:
            current = [m]
        t0 = fs / f0_at(m / fs)
        target = current[-1] + t0
        near = np.flatnonzero(np.abs(marks - target) <= 0.3 * t0)
        if near.size:
            k = near[np.argmin(np.abs(marks[near] - target))]
            current.append(marks[k])
            j = k
        else:
            if len(current) > 1:
                chains.append(np.array(current))
            current = []
            j = int(np.searchsorted(marks, target - 0.3 * t0))
            j = max(j, int(np.searchsorted(marks, m, side="right")))
    if len(current) > 1:
        chains.append(np.array(current))
    return chains


def _quotient(values, half):
    """|v_k - local mean| over the 2*half+1 neighbourhood, NaN at chain ends."""
    out = np.full(len(values), np.nan)
    for i in range(half, len(values) - half):
        out[i] = abs(values[i] - values[i - half:i + half + 1].mean())
    return out


def _chain_terms(x, marks):
    """Per-cycle period, amplitude and perturbation terms for one chain."""
    periods = np.diff(marks)
    amps = np.empty(len(periods))
    for c in range(len(periods)):
        lo, hi = int(np.ceil(marks[c])), int(np.floor(marks[c + 1])) + 1
        seg = x[lo:hi]
        amps[c] = seg.max() - seg.min() if seg.size else 0.0
    d_period = np.r_[np.nan, np.abs(np.diff(periods))]
    d_amp = np.r_[np.nan, np.abs(np.diff(amps))]
    half = PERTURBATION_POINTS // 2
    return marks[:-1], periods, amps, d_period, d_amp, _quotient(periods, half), _quotient(amps, half)


def phonation_features(rec, contour):
    """7-descriptor vector for every 40 ms voiced frame that holds enough cycles."""
    segments = segment_voiced(contour)
    if not segments:
        raise ValidationError("no voiced content for phonation analysis")
    x = rec.samples
    energy = frame_log_energy(rec, contour)
    frame_len = int(round(contour.frame * rec.fs))
    hop = int(round(contour.hop * rec.fs))
    rows = []
    for seg in segments:
        f0 = contour.values[seg.first:seg.stop]
        d1 = np.gradient(f0) / contour.hop
        d2 = np.gradient(d1) / contour.hop
        centres = contour.centre(np.arange(seg.first, seg.stop))
        a = seg.first * hop
        b = min(len(x), (seg.stop - 1) * hop + frame_len)
        local = x[a:b] - x[a:b].mean()

        def f0_at(t, centres=centres, f0=f0, a=a):
            return np.interp(t + a / rec.fs, centres, f0)

        terms = [_chain_terms(local, m) for m in cycle_chains(local, rec.fs, f0_at)]
        if not terms:
            continue
        starts, periods, amps, dp, da, pq, aq = (np.concatenate(t) for t in zip(*terms))
        starts = starts + a
        for i in range(seg.first, seg.stop):
            lo = i * hop
            sel = (starts >= lo) & (starts < lo + frame_len)
            jit, shim = dp[sel], da[sel]
            ppq, apq = pq[sel], aq[sel]
            jit, shim = jit[np.isfinite(jit)], shim[np.isfinite(shim)]
            ppq, apq = ppq[np.isfinite(ppq)], apq[np.isfinite(apq)]
            if jit.size == 0 or ppq.size == 0:
                continue
            mean_t, mean_a = periods[sel].mean(), amps[sel].mean()
            if mean_a <= 0:
                continue
            j = i - seg.first
            rows.append([jit.mean() / mean_t, shim.mean() / mean_a, apq.mean() / mean_a,
                         ppq.mean() / mean_t, d1[j], d2[j], energy[i]])
    if not rows:
        raise ValidationError("no voiced frame with enough glottal cycles")
    return FrameSequence(np.array(rows), contour.hop, "speech", "phonation")


# -- articulation --------------------------------------------------------------

def detect_onsets(rec, contour, segments=None):
    """80 ms excerpts centred on each unvoiced-to-voiced border."""
    if segments is None:
        segments = segment_voiced(contour)
    half = int(round(ONSET_HALF_WIDTH * rec.fs))
    out = []
    for seg in segments:
        if seg.first == 0 or contour.voiced[seg.first - 1]:
            continue
        c = int(round(seg.start * rec.fs))
        lo, hi = max(0, c - half), min(len(rec.samples), c + half)
        out.append(OnsetSegment(seg.start, rec.samples[lo:hi].copy(), rec.fs))
    return out


def bark_band_energies(x, fs):
    """Power in each critical band (rectangular integration of a Hann spectrum)."""
    x = np.asarray(x, dtype=float)
    power = np.abs(np.fft.rfft(x * np.hanning(len(x)))) ** 2
    freqs = np.fft.rfftfreq(len(x), d=1.0 / fs)
    band = np.searchsorted(BARK_EDGES, freqs, side="right") - 1
    band[freqs >= BARK_EDGES[-1]] = N_BARK - 1  # Nyquist bin belongs to the top band
    keep = (band >= 0) & (band < N_BARK)
    return np.bincount(band[keep], weights=power[keep], minlength=N_BARK)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def mel_filterbank(n_fft, fs, n_filters=N_MEL, fmin=0.0, fmax=None):
    fmax = fs / 2 if fmax is None else fmax
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_filters + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / fs)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs - lo) / (mid - lo)
    fall = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rise, fall))


def mfcc(x, fs, length=SUBFRAME_LENGTH, hop=FRAME_HOP, n_coeffs=N_MFCC):
    """Cepstra 1..n_coeffs of each sub-frame (rows)."""
    win = int(round(length * fs))
    if len(x) < win:
        x = np.pad(x, (0, win - len(x)))
    frames = frame_matrix(np.asarray(x, dtype=float), fs, length, hop)
    n_fft = 1 << int(np.ceil(np.log2(win)))
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), n_fft, axis=1)) ** 2
    mel = spec @ mel_filterbank(n_fft, fs).T
    logmel = np.log(mel + 1e-10)
    return dct(logmel, type=2, norm="ortho", axis=1)[:, 1:n_coeffs + 1]


def onset_vector(x, fs):
    bark = np.log(bark_band_energies(x, fs) + 1e-10)
    c = mfcc(x, fs)
    if len(c) > 1:
        d1 = np.gradient(c, axis=0)
        d2 = np.gradient(d1, axis=0)
    else:
        d1 = d2 = np.zeros_like(c)
    return np.concatenate([bark, c.mean(axis=0), d1.mean(axis=0), d2.mean(axis=0)])


def articulation_features(segments, fs=SAMPLE_RATE):
    """58-descriptor vector (22 Bark log-energies + MFCC, delta, delta-delta) per onset."""
    if not segments:
        raise ValidationError("no onset segments")
    rows = []
    for seg in segments:
        if seg.fs != fs:
            raise ValidationError(f"onset sampled at {seg.fs} Hz, expected {fs}")
        if len(seg.samples) == 0:
            raise ValidationError("empty onset segment")
        rows.append(onset_vector(seg.samples, fs))
    return FrameSequence(np.array(rows), 0.0, "speech", "articulation")


# -- prosody -------------------------------------------------------------------

def prosody_vector(log_f0, log_energy, duration):
    """Node values of the degree-5 interpolants of both contours, plus duration."""
    log_f0 = np.asarray(log_f0, dtype=float)
    log_energy = np.asarray(log_energy, dtype=float)
    n = len(log_f0)
    if n < PROSODY_NODES or len(log_energy) != n:
        raise ValidationError(f"contour needs at least {PROSODY_NODES} frames")
    if duration <= 0:
        raise ValidationError("duration must be positive")
    # equidistant nodes over normalised time, located on the frame-index grid so
    # nodes that fall on a frame reproduce it exactly
    idx = np.arange(n)
    nodes = np.arange(PROSODY_NODES) * (n - 1) / (PROSODY_NODES - 1)
    return np.concatenate([np.interp(nodes, idx, log_f0), np.interp(nodes, idx, log_energy), [duration]])


def prosody_features(rec, segments, contour):
    energy = frame_log_energy(rec, contour)
    rows = []
    for seg in segments:
        if seg.stop - seg.first < PROSODY_NODES:
            raise ValidationError(f"voiced segment at {seg.start:.3f} s too short for prosody")
        sl = slice(seg.first, seg.stop)
        rows.append(prosody_vector(np.log(contour.values[sl]), energy[sl], seg.end - seg.start))
    if not rows:
        raise ValidationError("no voiced segments for prosody")
    return FrameSequence(np.array(rows), 0.0, "speech", "prosody")


# -- phonological posteriors ---------------------------------------------------

def load_phonological(path):
    """Time column plus 18 posterior columns; a non-numeric first row is a header."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != N_PHONOLOGICAL + 1:
                raise ValidationError(f"{path}:{lineno}: wrong column count ({len(row)}, "
                                      f"expected {N_PHONOLOGICAL + 1})")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValidationError(f"{path}:{lineno}: malformed number") from None
    if not rows:
        raise ValidationError(f"{path}: no posterior rows")
    arr = np.array(rows)
    t, post = arr[:, 0], arr[:, 1:]
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{path}: non-finite values")
    if np.any((post < 0) | (post > 1)):
        raise ValidationError(f"{path}: posterior outside [0, 1]")
    if np.any(np.diff(t) <= 0):
        raise ValidationError(f"{path}: time column not strictly increasing")
    period = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    return FrameSequence(post, period, "speech", "phonological")


# -- wav io --------------------------------------------------------------------

def read_wav(path, subject="", task=""):
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValidationError(f"{path}: expected 16-bit mono PCM")
        if w.getframerate() != SAMPLE_RATE:
            raise ValidationError(f"{path}: sample rate {w.getframerate()} Hz, expected {SAMPLE_RATE}")
        pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return SpeechRecording(pcm.astype(float) / 32768.0, SAMPLE_RATE, subject, task)


def write_wav(path, rec):
    if rec.fs != SAMPLE_RATE:
        raise ValidationError(f"refusing to write {rec.fs} Hz audio")
    pcm = np.clip(np.round(rec.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


# -- per-subject extraction ----------------------------------------------------

def speech_frames(recordings):
    """Pool phonation, articulation and prosody frames over a subject's recordings.

    Recordings without usable content for a set are skipped for that set;
    a set with no frames at all is absent from the result.
    """
    pools = {"phonation": [], "articulation": [], "prosody": []}
    for rec in recordings:
        if rec.duration < 0.5:
            log.warning("skipping %s/%s: shorter than 0.5 s", rec.subject, rec.task)
            continue
        contour = estimate_f0(rec)
        segments = segment_voiced(contour)
        if not segments:
            log.warning("no voiced speech in %s/%s", rec.subject, rec.task)
            continue
        try:
            pools["phonation"].append(phonation_features(rec, contour))
        except ValidationError as exc:
            log.warning("phonation skipped for %s/%s: %s", rec.subject, rec.task, exc)
        onsets = detect_onsets(rec, contour, segments)
        if onsets:
            pools["articulation"].append(articulation_features(onsets, rec.fs))
        pools["prosody"].append(prosody_features(rec, segments, contour))
    out = {}
    for tag, seqs in pools.items():
        if seqs:
            out[tag] = FrameSequence(np.vstack([s.data for s in seqs]), seqs[0].frame_period,
                                     "speech", tag)
    return out
