"""Total-variability modelling: Baum-Welch statistics, T-matrix EM, i-vectors."""

from dataclasses import dataclass
import csv

import numpy as np
from scipy import linalg

from .errors import NumericalError, ValidationError
from .frames import as_matrix
from .gmm_ubm import DiagGmm, _FMT, _row, gmm_from_lines, gmm_to_lines, responsibilities


@dataclass(frozen=True, eq=False)
class BaumWelchStats:
    """Zero-order counts ``n`` (K) and centred first-order sums ``f`` (K x D)."""

    n: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=float).reshape(-1)
        f = np.asarray(self.f, dtype=float)
        if f.ndim != 2 or f.shape[0] != n.shape[0]:
            raise ValidationError(f"stats shapes disagree: n {n.shape}, f {f.shape}")
        if np.any(n < 0) or not np.all(np.isfinite(f)) or not np.all(np.isfinite(n)):
            raise ValidationError("invalid Baum-Welch statistics")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "f", f)

    @property
    def total(self):
        return float(self.n.sum())


@dataclass(frozen=True, eq=False)
class TotalVariabilityModel:
    ubm: DiagGmm
    matrix: np.ndarray  # (K*D) x R, component-major rows

    def __post_init__(self):
        t = np.asarray(self.matrix, dtype=float)
        kd = self.ubm.n_components * self.ubm.dim
        if t.ndim != 2 or t.shape[0] != kd or not 1 <= t.shape[1] <= kd:
            raise ValidationError(f"T-matrix shape {t.shape} incompatible with K*D={kd}")
        object.__setattr__(self, "matrix", t)

    @property
    def rank(self):
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class IVector:
    values: np.ndarray
    subject: str = ""
    tag: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise NumericalError("i-vector has non-finite entries")
        object.__setattr__(self, "values", v)


def accumulate_stats(ubm, frames):
    x = as_matrix(frames)
    gamma = responsibilities(ubm, x)
    n = gamma.sum(axis=0)
    f = gamma.T @ x - n[:, None] * ubm.means
    return BaumWelchStats(n, f)


def _check_stats(ubm, stats):
    if stats.f.shape != ubm.means.shape:
        raise ValidationError(f"stats shaped {stats.f.shape}, UBM expects {ubm.means.shape}")


def _posterior(t_mat, inv_var, stats):
    """Posterior precision L and mean w for one utterance."""
    k, d = stats.f.shape
    r = t_mat.shape[1]
    weighted = t_mat * inv_var[:, None]  # Sigma^-1 T
    n_rows = np.repeat(stats.n, d)
    precision = np.eye(r) + t_mat.T @ (weighted * n_rows[:, None])
    rhs = weighted.T @ stats.f.reshape(-1)
    try:
        chol = linalg.cho_factor(precision)
    except linalg.LinAlgError:
        raise NumericalError("singular posterior precision; T-matrix is degenerate") from None
    return precision, chol, linalg.cho_solve(chol, rhs)


def init_total_variability(ubm, rank, seed=0):
    """Random orthonormal columns scaled by the UBM standard deviations."""
    kd = ubm.n_components * ubm.dim
    if not 1 <= rank <= kd:
        raise ValidationError(f"rank must lie in [1, {kd}], got {rank}")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((kd, rank)))
    scale = np.sqrt(ubm.variances.reshape(-1))
    return TotalVariabilityModel(ubm, q * scale[:, None])


def train_total_variability(ubm, stats, rank, iterations=10, seed=0, min_divergence=False):
    """EM estimate of the total-variability matrix from per-utterance stats.

    E-step: posterior precision L = I + T' N Sigma^-1 T and mean
    w = L^-1 T' Sigma^-1 F per utterance.  M-step: for each component k solve
    T_k (sum_u n_ku E[ww']_u) = sum_u F_ku E[w]_u'.

    With ``min_divergence`` the columns are re-scaled after each M-step so the
    average posterior second moment of w is the identity.  Plain EM converges
    very slowly when per-utterance counts are large and the data nearly
    noiseless; the re-scaling fixes that.
    """
    stats = list(stats)
    if len(stats) < 2:
        raise ValidationError("need at least two statistics objects")
    if len(stats) < rank:
        raise ValidationError(f"need at least rank={rank} statistics objects, got {len(stats)}")
    for s in stats:
        _check_stats(ubm, s)
    tv = init_total_variability(ubm, rank, seed)
    k, d = ubm.means.shape
    inv_var = 1.0 / ubm.variances.reshape(-1)
    t_mat = tv.matrix.copy()
    for _ in range(iterations):
        acc_c = np.zeros((k * d, rank))
        acc_a = np.zeros((k, rank, rank))
        acc_eww = np.zeros((rank, rank))
        # fixed utterance order keeps the reduction deterministic
        for s in stats:
            _, chol, w = _posterior(t_mat, inv_var, s)
            eww = linalg.cho_solve(chol, np.eye(rank)) + np.outer(w, w)
            acc_c += np.outer(s.f.reshape(-1), w)
            acc_a += s.n[:, None, None] * eww
            acc_eww += eww
        for c in range(k):
            rows = slice(c * d, (c + 1) * d)
            if np.linalg.matrix_rank(acc_a[c]) < rank:
                continue
            t_mat[rows] = linalg.solve(acc_a[c], acc_c[rows].T, assume_a="pos").T
        if min_divergence:
            t_mat = t_mat @ linalg.cholesky(acc_eww / len(stats), lower=True)
    if iterations and np.linalg.matrix_rank(t_mat) < rank:
        raise NumericalError("trained T-matrix lost column rank")
    return TotalVariabilityModel(ubm, t_mat)


def extract_ivector(tv, stats, subject="", tag=""):
    """Posterior mean of the latent factor given one utterance's statistics."""
    _check_stats(tv.ubm, stats)
    inv_var = 1.0 / tv.ubm.variances.reshape(-1)
    _, _, w = _posterior(tv.matrix, inv_var, stats)
    return IVector(w, subject, tag)


def cosine_distance(a, b):
    va = a.values if isinstance(a, IVector) else np.asarray(a, dtype=float).reshape(-1)
    vb = b.values if isinstance(b, IVector) else np.asarray(b, dtype=float).reshape(-1)
    if va.shape != vb.shape:
        raise ValidationError(f"i-vector lengths differ: {va.shape[0]} vs {vb.shape[0]}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise NumericalError("zero-norm i-vector")
    cos = float(np.dot(va, vb) / (na * nb))
    return 1.0 - min(1.0, max(-1.0, cos))


def build_reference(controls, patient, age_window=2.0):
    """Mean i-vector of same-gender controls within ``age_window`` years.

    ``controls`` is a sequence of (IVector, record) pairs where each record has
    ``gender`` and ``age`` attributes.  The window widens one year at a time
    until at least one control qualifies.
    """
    controls = list(controls)
    if not controls:
        raise ValidationError("empty control pool")
    same = [(iv, rec) for iv, rec in controls if rec.gender == patient.gender]
    if not same:
        raise ValidationError(f"no control with gender {patient.gender!r}")
    gaps = np.array([abs(rec.age - patient.age) for _, rec in same])
    window = float(age_window)
    while not np.any(gaps <= window):
        window += 1.0
    chosen = [iv.values for (iv, _), g in zip(same, gaps) if g <= window]
    # sort for order-independent summation
    stacked = np.array(sorted(map(tuple, chosen)))
    return IVector(stacked.mean(axis=0), subject="reference", tag=same[0][0].tag)


# -- serialization ----------------------------------------------------------

def save_tv(tv, path):
    lines = ["tv-model 1"] + gmm_to_lines(tv.ubm)
    lines.append(f"R {tv.rank}")
    lines += ["T " + _row(row) for row in tv.matrix]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "tv-model 1":
        raise ValidationError("not a tv-model file")
    ubm, used = gmm_from_lines(lines[1:])
    rest = lines[1 + used:]
    rank = int(rest[0].split()[1])
    rows = [[float(v) for v in line.split()[1:]] for line in rest[1:] if line.startswith("T ")]
    t = np.array(rows).reshape(-1, rank)
    return TotalVariabilityModel(ubm, t)


def write_ivectors_csv(ivectors, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for iv in ivectors:
            w.writerow([iv.subject, iv.tag] + [_FMT % v for v in iv.values])


def read_ivectors_csv(path):
    with open(path, newline="") as fh:
        return [IVector(np.array(row[2:], dtype=float), row[0], row[1]) for row in csv.reader(fh) if row]
