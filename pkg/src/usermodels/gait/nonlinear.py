"""Nonlinear-dynamics descriptors of a scalar series.

Delay embedding, correlation dimension (Grassberger-Procaccia), largest
Lyapunov exponent (Rosenstein), Hurst exponent (rescaled range), DFA,
sample entropy and Lempel-Ziv complexity.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln

from ..errors import NumericalError, ValidationError


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 4
    delay: int = 1
    theiler: int = None  # None: use the mean period of the series

    def __post_init__(self):
        if self.dim < 2:
            raise ValidationError("embedding dimension must be >= 2")
        if self.delay < 1:
            raise ValidationError("embedding delay must be >= 1")
        if self.theiler is not None and self.theiler < 0:
            raise ValidationError("theiler window must be >= 0")


def _series(x, min_len, name):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] < min_len:
        raise ValidationError(f"{name} needs at least {min_len} samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name}: non-finite samples")
    return x


def _require_variation(x, name):
    if np.ptp(x) == 0:
        raise NumericalError(f"{name} is undefined for a constant series")


def embed(series, cfg):
    x = np.asarray(series, dtype=float).reshape(-1)
    span = (cfg.dim - 1) * cfg.delay
    if x.shape[0] <= span + 1:
        raise ValidationError(f"series of length {x.shape[0]} too short for m={cfg.dim}, tau={cfg.delay}")
    n = x.shape[0] - span
    idx = np.arange(n)[:, None] + cfg.delay * np.arange(cfg.dim)[None, :]
    return x[idx]


def mean_period(series):
    """Mean period in samples from the power-weighted mean frequency."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.shape[0])
    total = power[1:].sum()
    if total == 0:
        return 1
    f_mean = np.sum(freqs[1:] * power[1:]) / total
    return max(1, int(round(1.0 / f_mean)))


def auto_mutual_information(series, max_lag, bins=16):
    """Histogram estimate of I(x_t; x_{t+lag}) in nats for lag = 0..max_lag."""
    x = np.asarray(series, dtype=float)
    edges = np.linspace(x.min(), x.max(), bins + 1)
    codes = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
    out = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        a, b = codes[:x.shape[0] - lag], codes[lag:]
        joint = np.bincount(a * bins + b, minlength=bins * bins).reshape(bins, bins) / a.shape[0]
        pa, pb = joint.sum(axis=1), joint.sum(axis=0)
        nz = joint > 0
        out[lag] = np.sum(joint[nz] * np.log(joint[nz] / np.outer(pa, pb)[nz]))
    return out


def first_ami_minimum(series, max_lag=None, smooth=5):
    """Delay at the first minimum of the (moving-average smoothed) auto mutual information.

    Histogram AMI estimates are jagged; a lag only counts as a minimum when it
    is the lowest point of its +-2 neighbourhood on the smoothed curve.
    """
    x = np.asarray(series, dtype=float)
    if max_lag is None:
        max_lag = max(8, min(x.shape[0] // 10, 100))
    if np.ptp(x) == 0:
        return 1
    ami = auto_mutual_information(x, max_lag)
    kernel = np.ones(smooth) / smooth
    padded = np.concatenate([np.full(smooth // 2, ami[1]), ami[1:], np.full(smooth // 2, ami[-1])])
    sm = np.concatenate([[ami[0]], np.convolve(padded, kernel, mode="valid")])
    for lag in range(1, max_lag - 1):
        lo, hi = max(1, lag - 2), min(max_lag, lag + 2)
        if sm[lag] <= sm[lo:hi + 1].min() and sm[lag] < sm[lag - 1]:
            return lag
    return int(np.argmin(sm[1:]) + 1)


def _theiler(x, cfg):
    return mean_period(x) if cfg.theiler is None else cfg.theiler


def _pair_distance_chunks(points, chunk=1024):
    """Yield (row offset, squared distance block) for the upper triangle."""
    sq = np.sum(points ** 2, axis=1)
    n = points.shape[0]
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        block = sq[start:stop, None] + sq[None, start:] - 2.0 * points[start:stop] @ points[start:].T
        np.maximum(block, 0.0, out=block)
        yield start, block


def correlation_sum(points, radii, theiler=0, tiny=0.0):
    """Fraction of point pairs (|i - j| > theiler) closer than each radius.

    Pairs whose squared distance is at most ``tiny`` count as exact repeats
    and are left out entirely.
    """
    radii = np.asarray(radii, dtype=float)
    n = points.shape[0]
    log_r2 = np.log(radii ** 2)
    counts = np.zeros(radii.shape[0] + 1, dtype=np.int64)
    n_pairs = 0
    for start, block in _pair_distance_chunks(points):
        rows = np.arange(start, start + block.shape[0])[:, None]
        cols = np.arange(start, n)[None, :]
        keep = (cols - rows > theiler) & (block > tiny)
        d2 = block[keep]
        n_pairs += d2.shape[0]
        with np.errstate(divide="ignore"):
            pos = np.searchsorted(log_r2, np.log(d2), side="right")
        counts += np.bincount(pos, minlength=radii.shape[0] + 1)
    if n_pairs == 0:
        raise ValidationError("no admissible point pairs")
    # counts[i] = pairs with radii[i-1] <= d < radii[i]
    return np.cumsum(counts)[:-1] / n_pairs, n_pairs


def correlation_dimension(series, cfg, min_length=1000, n_radii=60, min_pairs=200):
    """Grassberger-Procaccia correlation dimension.

    C(r) is evaluated on a log grid.  Radii supported by fewer than
    ``min_pairs`` pairs, and radii where C(r) exceeds 0.1, are discarded;
    the slope is then fitted over the one-decade window centred in what
    remains.
    """
    x = _series(series, min_length, "correlation dimension")
    _require_variation(x, "correlation dimension")
    pts = embed(x, cfg)
    w = _theiler(x, cfg)
    diam = np.sqrt(np.sum(np.ptp(pts, axis=0) ** 2))
    radii = np.logspace(np.log10(diam) - 5, np.log10(diam), n_radii)
    c, n_pairs = correlation_sum(pts, radii, w, tiny=(1e-7 * np.std(x)) ** 2)
    valid = (c * n_pairs >= min_pairs) & (c <= 0.1)
    if valid.sum() < 3:
        raise NumericalError("no scaling region found")
    lr, lc = np.log10(radii[valid]), np.log10(c[valid])
    centre = 0.5 * (lr[0] + lr[-1])
    sel = np.abs(lr - centre) <= 0.5
    if sel.sum() < 3:
        raise NumericalError("no scaling region found")
    return float(np.polyfit(lr[sel], lc[sel], 1)[0])


def divergence_curve(series, cfg, horizon):
    """Mean log distance between nearest-neighbour trajectories vs step."""
    pts = embed(series, cfg)
    w = _theiler(series, cfg)
    m = pts.shape[0] - horizon
    if m <= 2 * w + 1:
        raise ValidationError("series too short for the requested horizon and Theiler window")
    base = pts[:m]
    nn = np.empty(m, dtype=int)
    sq = np.sum(base ** 2, axis=1)
    # exact repeats (strictly periodic input) carry only rounding noise
    tiny = (1e-7 * np.std(series)) ** 2
    for start in range(0, m, 1024):
        stop = min(m, start + 1024)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * base[start:stop] @ base.T
        rows = np.arange(start, stop)[:, None]
        d2[np.abs(np.arange(m)[None, :] - rows) <= w] = np.inf
        d2[d2 <= tiny] = np.inf
        nn[start:stop] = np.argmin(d2, axis=1)
    idx = np.arange(m)
    curve = np.empty(horizon)
    for i in range(horizon):
        d = np.linalg.norm(pts[idx + i] - pts[nn + i], axis=1)
        d = d[d > 0]
        curve[i] = np.mean(np.log(d)) if d.size else -np.inf
    return curve


def largest_lyapunov(series, cfg, fs=1.0, min_length=2000, horizon=None):
    """Rosenstein estimate of the largest Lyapunov exponent, in units of 1/time at rate ``fs``.

    The divergence curve is followed for ``horizon`` steps (default five mean
    periods, capped at a third of the embedded length).  The slope is fitted
    between the steps where the curve has covered 10% and 80% of its total
    rise, which skips the initial alignment transient and the saturation
    plateau.  A curve that rises by less than 0.1 nats is fitted end to end.
    """
    x = _series(series, min_length, "largest Lyapunov exponent")
    _require_variation(x, "largest Lyapunov exponent")
    n_emb = x.shape[0] - (cfg.dim - 1) * cfg.delay
    if horizon is None:
        horizon = min(5 * mean_period(x), n_emb // 3)
    horizon = max(int(horizon), 3)
    curve = divergence_curve(x, cfg, horizon)
    if not np.all(np.isfinite(curve)):
        raise NumericalError("degenerate divergence curve")
    rise = curve.max() - curve[0]
    if rise < 0.1:
        lo, hi = 0, horizon - 1
    else:
        lo = int(np.argmax(curve >= curve[0] + 0.1 * rise))
        hi = int(np.argmax(curve >= curve[0] + 0.8 * rise))
        lo = min(lo, hi - 1) if hi > 0 else 0
        hi = max(hi, lo + 1)
    steps = np.arange(lo, hi + 1)
    slope = np.polyfit(steps, curve[lo:hi + 1], 1)[0]
    return float(slope * fs)


def _log_sizes(lo, hi, count=20):
    if hi < lo:
        return np.array([], dtype=int)
    return np.unique(np.floor(np.logspace(np.log10(lo), np.log10(hi), count)).astype(int))


def _expected_rs(n):
    """Anis-Lloyd/Peters expected R/S of i.i.d. noise for block size n."""
    i = np.arange(1, n)
    tail = np.sum(np.sqrt((n - i) / i))
    if n <= 340:
        pre = gamma_ratio(n)
    else:
        pre = 1.0 / np.sqrt(n * np.pi / 2)
    return (n - 0.5) / n * pre * tail


def gamma_ratio(n):
    return np.exp(gammaln((n - 1) / 2) - gammaln(n / 2)) / np.sqrt(np.pi)


def hurst(series, min_length=500, corrected=True):
    """Hurst exponent from the rescaled-range slope over block sizes 16..N/4.

    With ``corrected`` the small-sample bias of R/S is removed by fitting
    log(R/S) - log E[R/S] (Anis-Lloyd/Peters expectation for white noise)
    and adding 0.5; the raw slope overestimates H for short blocks.
    """
    x = _series(series, min_length, "Hurst exponent")
    _require_variation(x, "Hurst exponent")
    sizes = _log_sizes(16, x.shape[0] // 4)
    rs = []
    for n in sizes:
        blocks = x[: (x.shape[0] // n) * n].reshape(-1, n)
        dev = np.cumsum(blocks - blocks.mean(axis=1, keepdims=True), axis=1)
        r = dev.max(axis=1) - dev.min(axis=1)
        s = blocks.std(axis=1)
        ok = s > 0
        rs.append(np.mean(r[ok] / s[ok]) if ok.any() else np.nan)
    rs = np.array(rs)
    ok = np.isfinite(rs) & (rs > 0)
    if ok.sum() < 2:
        raise NumericalError("Hurst exponent: no usable block sizes")
    y = np.log(rs[ok])
    if corrected:
        y = y - np.log([_expected_rs(n) for n in sizes[ok]])
        return float(0.5 + np.polyfit(np.log(sizes[ok]), y, 1)[0])
    return float(np.polyfit(np.log(sizes[ok]), y, 1)[0])


def dfa(series, min_length=500):
    """Order-1 detrended fluctuation analysis exponent over box sizes 4..N/4."""
    x = _series(series, min_length, "DFA")
    _require_variation(x, "DFA")
    profile = np.cumsum(x - x.mean())
    sizes = _log_sizes(4, x.shape[0] // 4)
    fluct = []
    for n in sizes:
        boxes = profile[: (profile.shape[0] // n) * n].reshape(-1, n)
        t = np.arange(n) - (n - 1) / 2.0
        # least-squares line per box, closed form on centred abscissa
        slope = boxes @ t / np.dot(t, t)
        resid = boxes - boxes.mean(axis=1, keepdims=True) - slope[:, None] * t
        fluct.append(np.sqrt(np.mean(resid ** 2)))
    fluct = np.array(fluct)
    ok = fluct > 0
    if ok.sum() < 2:
        raise NumericalError("DFA: no usable box sizes")
    return float(np.polyfit(np.log(sizes[ok]), np.log(fluct[ok]), 1)[0])


def _count_matches(templates, r):
    """Number of template pairs (i < j) within Chebyshev distance r."""
    tree = cKDTree(templates)
    # count_neighbors counts ordered pairs including i == j
    total = tree.count_neighbors(tree, r, p=np.inf)
    return int((total - templates.shape[0]) // 2)


def sample_entropy(series, m=2, r=None, min_length=200):
    """-ln(A/B): A, B are counts of matching template pairs of length m+1 and m.

    Both counts use the same N - m template start points and exclude
    self-matches.  ``r`` defaults to 0.2 times the series standard deviation.
    """
    x = _series(series, min_length, "sample entropy")
    if r is None:
        r = 0.2 * x.std()
    n = x.shape[0]
    idx = np.arange(n - m)[:, None] + np.arange(m + 1)[None, :]
    long_t = x[idx]
    b = _count_matches(long_t[:, :m], r)
    a = _count_matches(long_t, r)
    if b == 0 or a == 0:
        raise NumericalError("sample entropy undefined (no template matches)")
    return float(-np.log(a / b))


def lz76_phrases(bits):
    """Number of phrases in the Lempel-Ziv (1976) parsing of a binary sequence.

    Each new phrase is the shortest block starting at the current position
    that cannot be copied from the preceding text (overlap allowed).
    """
    s = bytes(np.asarray(bits, dtype=np.uint8))
    n = len(s)
    c, pos = 0, 0
    while pos < n:
        k = 1
        while pos + k <= n and s.find(s[pos:pos + k], 0, pos + k - 1) != -1:
            k += 1
        c += 1
        pos += k
    return c


def lempel_ziv(series, min_length=100):
    """Median-binarised LZ76 complexity normalised by n / log2(n)."""
    x = _series(series, min_length, "Lempel-Ziv complexity")
    med = np.median(x)
    bits = x > med
    if bits.all() == bits.any() and np.ptp(x) > 0:
        # median coincides with the maximum (heavily tied input)
        bits = x >= med
    bits = bits.astype(np.int8)
    n = bits.shape[0]
    return float(lz76_phrases(bits) * np.log2(n) / n)
