"""Wavelet and FFT spectral descriptors of inertial gait windows."""

import numpy as np

from ..errors import NumericalError, ValidationError

# first derivative of a Gaussian: |Psi(w)| peaks at w = 1 rad per unit scale
CENTRE_FREQUENCY = 1.0 / (2.0 * np.pi)

SCALOGRAM_FMIN = 0.3
SCALOGRAM_FMAX = 12.0
N_SCALES = 16
N_BANDS = 8
LOCOMOTOR_BAND = (0.5, 3.0)
FREEZE_BAND = (3.0, 8.0)
# 8 bands split into three contiguous groups of roughly two octaves each
CENTROID_GROUPS = ((0, 3), (3, 6), (6, 8))

FEATURES_PER_CHANNEL = N_BANDS + len(CENTROID_GROUPS) + 3 + 3


def scale_frequencies(fmin=SCALOGRAM_FMIN, fmax=SCALOGRAM_FMAX, n=N_SCALES):
    return np.geomspace(fmin, fmax, n)


def cwt_scalogram(x, fs, freqs=None):
    """Squared-magnitude CWT with the first-derivative-of-Gaussian wavelet.

    Row i corresponds to pseudo-frequency ``freqs[i]``.  The transform is
    computed in the frequency domain with L1 (amplitude) normalisation so a
    unit sinusoid peaks at the row whose pseudo-frequency matches its own.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] == 0:
        raise ValidationError("empty window")
    if x.shape[0] < fs:
        raise ValidationError("scalogram needs at least 1 s of signal")
    if freqs is None:
        freqs = scale_frequencies()
    freqs = np.asarray(freqs, dtype=float)
    n = x.shape[0]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    omega = 2.0 * np.pi * np.fft.rfftfreq(nfft, d=1.0 / fs)
    scales = CENTRE_FREQUENCY / freqs
    sw = scales[:, None] * omega[None, :]
    # Psi(s w) = i s w exp(-(s w)^2 / 2) * e^{1/2}, unit gain at the peak
    psi = 1j * sw * np.exp(0.5 * (1.0 - sw ** 2))
    coeffs = np.fft.irfft(spec[None, :] * np.conj(psi), nfft, axis=1)[:, :n]
    return np.abs(coeffs) ** 2


def _band_energy(power, freqs, lo, hi):
    sel = (freqs >= lo) & (freqs < hi)
    return float(power[sel].sum())


def channel_harmonic_features(x, fs):
    """17 spectral descriptors for one channel of one window."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    freqs = scale_frequencies()
    scal = cwt_scalogram(x, fs, freqs)
    row_energy = scal.mean(axis=1)
    bands = row_energy.reshape(N_BANDS, -1).sum(axis=1)
    band_centres = np.sqrt(freqs[0::2] * freqs[1::2])
    centroids = []
    for lo, hi in CENTROID_GROUPS:
        e, f = bands[lo:hi], band_centres[lo:hi]
        total = e.sum()
        centroids.append(float(np.sum(e * f) / total) if total > 0 else float(np.exp(np.log(f).mean())))

    window = np.hanning(x.shape[0])
    power = np.abs(np.fft.rfft(x * window)) ** 2
    fft_freqs = np.fft.rfftfreq(x.shape[0], d=1.0 / fs)
    nyq = fs / 2.0
    quartiles = [_band_energy(power, fft_freqs, q * nyq / 4, (q + 1) * nyq / 4) for q in range(3)]
    loco = _band_energy(power, fft_freqs, *LOCOMOTOR_BAND)
    freeze = _band_energy(power, fft_freqs, *FREEZE_BAND)
    total = power.sum()
    if total == 0:
        raise NumericalError("freeze index undefined for an all-zero window")
    # a vanishing locomotor band would give inf; bound it by rounding level
    freeze_index = freeze / max(loco, total * 1e-16)
    return np.concatenate([bands, centroids, quartiles, [loco, freeze, freeze_index]])


def freeze_index(x, fs):
    return float(channel_harmonic_features(x, fs)[-1])


def harmonic_features(window, fs):
    """Concatenate per-channel descriptors of a channels x samples window."""
    window = np.atleast_2d(np.asarray(window, dtype=float))
    return np.concatenate([channel_harmonic_features(ch, fs) for ch in window])
