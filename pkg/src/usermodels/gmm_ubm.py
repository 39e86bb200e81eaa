"""Diagonal-covariance GMMs: EM training, MAP adaptation, Bhattacharyya scoring."""

from dataclasses import dataclass
import logging

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .frames import as_matrix

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class DiagGmm:
    """Weighted mixture of K diagonal Gaussians in D dimensions.

    ``var_floor`` is the per-dimension variance floor the model was trained
    with; adaptation keeps variances above it.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    var_floor: np.ndarray = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float)
        var = np.array(self.variances, dtype=float)
        if mu.ndim == 1:
            mu = mu[None, :]
        if var.ndim == 1:
            var = var[None, :]
        k = w.shape[0]
        if k < 1 or mu.ndim != 2 or mu.shape[0] != k or var.shape != mu.shape or mu.shape[1] < 1:
            raise ValidationError(
                f"inconsistent GMM shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError("weights must be non-negative and sum to 1")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise ValidationError("non-finite GMM parameters")
        if np.any(var <= 0):
            raise ValidationError("variances must be strictly positive")
        floor = self.var_floor
        if floor is None:
            floor = np.zeros(mu.shape[1])
        floor = np.array(floor, dtype=float).reshape(-1)
        if floor.shape[0] != mu.shape[1]:
            raise ValidationError("variance floor must have one entry per dimension")
        if np.any(var < floor * (1 - 1e-12)):
            raise ValidationError("variance below floor")
        for a in (w, mu, var, floor):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "var_floor", floor)

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def allclose(self, other, atol=1e-9):
        return (self.means.shape == other.means.shape
                and np.allclose(self.weights, other.weights, rtol=0, atol=atol)
                and np.allclose(self.means, other.means, rtol=0, atol=atol)
                and np.allclose(self.variances, other.variances, rtol=0, atol=atol))


@dataclass(frozen=True)
class EmConfig:
    n_components: int = 16
    max_iterations: int = 100
    tol: float = 1e-6
    var_floor_factor: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1:
            raise ValidationError("n_components must be >= 1")
        if self.tol <= 0:
            raise ValidationError("tol must be > 0")
        if not 0 < self.var_floor_factor <= 1:
            raise ValidationError("var_floor_factor must lie in (0, 1]")
        if self.max_iterations < 0:
            raise ValidationError("max_iterations must be >= 0")


@dataclass(frozen=True)
class MapConfig:
    relevance: float = 16.0
    adapt_means: bool = True
    adapt_variances: bool = True
    adapt_weights: bool = False

    def __post_init__(self):
        if self.relevance < 0:
            raise ValidationError("relevance factor must be >= 0")
        if not (self.adapt_means or self.adapt_variances or self.adapt_weights):
            raise ValidationError("at least one MAP adaptation flag must be set")


@dataclass(frozen=True)
class EmResult:
    model: DiagGmm
    log_likelihoods: np.ndarray
    converged: bool


def _check_dim(model, x):
    if x.shape[1] != model.dim:
        raise ValidationError(f"dimension mismatch: model D={model.dim}, frames D={x.shape[1]}")


def component_log_densities(model, frames):
    """T x K matrix of log w_k + log N(x_t | mu_k, var_k)."""
    x = as_matrix(frames)
    _check_dim(model, x)
    prec = 1.0 / model.variances
    # expanded quadratic form, avoids a T x K x D temporary
    quad = (x ** 2) @ prec.T - 2.0 * x @ (model.means * prec).T + np.sum(model.means ** 2 * prec, axis=1)
    log_det = np.sum(np.log(model.variances), axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    return log_w - 0.5 * (model.dim * LOG_2PI + log_det + quad)


def log_likelihood(model, frames):
    """Mean per-frame log-likelihood of ``frames`` under ``model``."""
    lp = component_log_densities(model, frames)
    return float(np.mean(logsumexp(lp, axis=1)))


def responsibilities(model, frames):
    """T x K component posteriors; rows sum to one."""
    lp = component_log_densities(model, frames)
    lp -= logsumexp(lp, axis=1, keepdims=True)
    return np.exp(lp)


def _kmeans_pp(x, k, rng):
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(x.shape[0])]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(x.shape[0])
        else:
            idx = rng.choice(x.shape[0], p=d2 / total)
        centers[i] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def _variance_floor(x, factor):
    gvar = np.var(x, axis=0)
    # constant dimensions would otherwise get a zero floor
    gvar = np.where(gvar > 0, gvar, 1.0)
    return factor * gvar


def fit_em(frames, cfg=EmConfig()):
    """Train a diagonal GMM by EM and keep the per-iteration log-likelihood trace.

    Initial means come from k-means++ seeding; variances start at the global
    per-dimension variance and weights are uniform.  The trace holds the mean
    per-frame log-likelihood of every model visited, starting with the
    initial one.
    """
    x = as_matrix(frames)
    t, d = x.shape
    k = cfg.n_components
    if t < 10 * k:
        raise ValidationError(f"need at least {10 * k} frames for K={k}, got {t}")
    if k > 1 and np.unique(x, axis=0).shape[0] < k:
        raise ValidationError("K exceeds the number of distinct frames")

    rng = np.random.default_rng(cfg.seed)
    floor = _variance_floor(x, cfg.var_floor_factor)
    gvar = np.maximum(np.var(x, axis=0), floor)
    model = DiagGmm(np.full(k, 1.0 / k), _kmeans_pp(x, k, rng), np.tile(gvar, (k, 1)), floor)

    lp = component_log_densities(model, x)
    frame_ll = logsumexp(lp, axis=1, keepdims=True)
    history = [float(frame_ll.mean())]
    converged = False
    for _ in range(cfg.max_iterations):
        gamma = np.exp(lp - frame_ll)
        nk = gamma.sum(axis=0)
        live = nk > 1e-10 * t
        sx = gamma.T @ x
        sxx = gamma.T @ (x ** 2)
        means = model.means.copy()
        variances = model.variances.copy()
        means[live] = sx[live] / nk[live, None]
        variances[live] = sxx[live] / nk[live, None] - means[live] ** 2
        variances = np.maximum(variances, floor)
        weights = nk / nk.sum()
        model = DiagGmm(weights, means, variances, floor)

        lp = component_log_densities(model, x)
        frame_ll = logsumexp(lp, axis=1, keepdims=True)
        history.append(float(frame_ll.mean()))
        if history[-1] - history[-2] < cfg.tol:
            converged = True
            break
    return EmResult(model, np.array(history), converged)


def train_ubm(frames, cfg=EmConfig()):
    """EM-trained universal background model on pooled frames."""
    result = fit_em(frames, cfg)
    if not result.converged:
        log.info("EM stopped after %d iterations without reaching tol=%g",
                 len(result.log_likelihoods) - 1, cfg.tol)
    return result.model


def map_adapt(ubm, frames, cfg=MapConfig()):
    """Relevance-factor MAP adaptation of ``ubm`` towards ``frames``.

    Component k moves towards the data statistics by alpha_k = n_k / (n_k + r).
    Component order is preserved, so adapted component k still corresponds to
    UBM component k.
    """
    x = as_matrix(frames)
    _check_dim(ubm, x)
    gamma = responsibilities(ubm, x)
    nk = gamma.sum(axis=0)
    denom = nk + cfg.relevance
    alpha = np.divide(nk, denom, out=np.zeros_like(nk), where=denom > 0)
    safe = np.where(nk > 0, nk, 1.0)[:, None]
    ex = (gamma.T @ x) / safe
    exx = (gamma.T @ (x ** 2)) / safe
    a = alpha[:, None]

    means = ubm.means
    if cfg.adapt_means:
        means = a * ex + (1 - a) * ubm.means
    variances = ubm.variances
    if cfg.adapt_variances:
        variances = a * exx + (1 - a) * (ubm.variances + ubm.means ** 2) - means ** 2
        variances = np.maximum(variances, ubm.var_floor)
        variances = np.maximum(variances, np.finfo(float).tiny)
    weights = ubm.weights
    if cfg.adapt_weights:
        weights = alpha * nk / x.shape[0] + (1 - alpha) * ubm.weights
        weights = weights / weights.sum()
    return DiagGmm(weights, means, variances, ubm.var_floor)


def bhattacharyya_gaussian(mean1, var1, mean2, var2):
    """Bhattacharyya distance between two diagonal Gaussians."""
    m1, v1, m2, v2 = (np.asarray(a, dtype=float).reshape(-1) for a in (mean1, var1, mean2, var2))
    if not (m1.shape == v1.shape == m2.shape == v2.shape):
        raise ValidationError("dimension mismatch between Gaussian parameters")
    if np.any(v1 <= 0) or np.any(v2 <= 0):
        raise ValidationError("variances must be strictly positive")
    vbar = 0.5 * (v1 + v2)
    term_mean = 0.125 * np.sum((m1 - m2) ** 2 / vbar)
    term_cov = 0.5 * np.sum(np.log(vbar) - 0.5 * (np.log(v1) + np.log(v2)))
    # the covariance term is >= 0 analytically; clip rounding noise
    return float(term_mean + max(term_cov, 0.0))


def gmm_distance(ubm, adapted):
    """UBM-weighted sum of matched-component Bhattacharyya distances.

    There is no closed form between two mixtures; pairing components is
    valid here because MAP adaptation keeps component k aligned with UBM
    component k.
    """
    if ubm.means.shape != adapted.means.shape:
        raise ValidationError(
            f"model shapes differ: {ubm.means.shape} vs {adapted.means.shape}")
    return float(sum(
        w * bhattacharyya_gaussian(ubm.means[k], ubm.variances[k], adapted.means[k], adapted.variances[k])
        for k, w in enumerate(ubm.weights)))


# -- serialization ----------------------------------------------------------

_FMT = "%.17g"


def _row(values):
    return " ".join(_FMT % v for v in np.asarray(values).reshape(-1))


def gmm_to_lines(model):
    lines = ["diag-gmm 1", f"K {model.n_components}", f"D {model.dim}",
             "floor " + _row(model.var_floor), "weights " + _row(model.weights)]
    lines += ["mean " + _row(m) for m in model.means]
    lines += ["var " + _row(v) for v in model.variances]
    return lines


def gmm_from_lines(lines):
    """Parse lines produced by :func:`gmm_to_lines`; returns (model, n_lines_consumed)."""
    it = iter(enumerate(lines))
    try:
        _, head = next(it)
        if head.strip() != "diag-gmm 1":
            raise ValidationError(f"not a diag-gmm block: {head!r}")
        fields = {}
        for key in ("K", "D", "floor", "weights"):
            _, line = next(it)
            name, _, rest = line.partition(" ")
            if name != key:
                raise ValidationError(f"expected {key!r}, found {name!r}")
            fields[key] = rest
        k, d = int(fields["K"]), int(fields["D"])
        means, variances = [], []
        for key, store in (("mean", means), ("var", variances)):
            for _ in range(k):
                _, line = next(it)
                name, _, rest = line.partition(" ")
                if name != key:
                    raise ValidationError(f"expected {key!r}, found {name!r}")
                store.append([float(v) for v in rest.split()])
    except StopIteration:
        raise ValidationError("truncated GMM file") from None
    model = DiagGmm(np.array(fields["weights"].split(), dtype=float), np.array(means),
                    np.array(variances), np.array(fields["floor"].split(), dtype=float))
    if model.dim != d:
        raise ValidationError("dimension header disagrees with data")
    return model, 5 + 2 * k


def save_gmm(model, path):
    with open(path, "w") as fh:
        fh.write("\n".join(gmm_to_lines(model)) + "\n")


def load_gmm(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    return gmm_from_lines(lines)[0]

