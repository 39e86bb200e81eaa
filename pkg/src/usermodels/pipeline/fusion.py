"""Leave-one-subject-out linear fusion of distance columns and the evaluation metrics."""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.stats import rankdata, t as student_t

from ..errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

RIDGE = 1e-6


def _pair(x, y):
    x, y = np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValidationError("inputs differ in length")
    if x.shape[0] < 3:
        raise ValidationError("need at least 3 pairs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite input")
    return x, y


def pearson(x, y):
    """(r, two-sided p) with the p-value from the t distribution on n - 2 dof."""
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(xc, xc), np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise NumericalError("correlation undefined for a constant input")
    r = float(np.clip(np.dot(xc, yc) / np.sqrt(sxx * syy), -1.0, 1.0))
    n = x.shape[0]
    if abs(r) == 1.0:
        return r, 0.0
    tstat = r * np.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * student_t.sf(abs(tstat), n - 2))


def spearman(x, y):
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y)
    return pearson(rankdata(x), rankdata(y))


def median_abs_error(y_true, y_pred):
    a, b = _pair(y_true, y_pred)
    return float(np.median(np.abs(a - b)))


def fit_linear(x, y, ridge=RIDGE):
    """Least squares with intercept; (intercept, coefficients, ridge_used).

    Falls back to a tiny ridge penalty (intercept unpenalised) when the
    centred design is rank deficient.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    xm, ym = x.mean(axis=0), y.mean()
    xc, yc = x - xm, y - ym
    if n < p + 1 or np.linalg.matrix_rank(xc) < p:
        beta = np.linalg.solve(xc.T @ xc + ridge * np.eye(p), xc.T @ yc)
        used = True
    else:
        beta = np.linalg.lstsq(xc, yc, rcond=None)[0]
        used = False
    return float(ym - xm @ beta), beta, used


def loso_predictions(x, y, ridge=RIDGE):
    """Held-out prediction for every row from a fit on all other rows.

    Returns (predictions, fold parameters as rows [intercept, coef...], ridge flags).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    preds = np.empty(n)
    params = np.empty((n, x.shape[1] + 1))
    flags = np.zeros(n, dtype=bool)
    for i in range(n):
        train = np.arange(n) != i
        b0, beta, flags[i] = fit_linear(x[train], y[train], ridge)
        params[i] = np.r_[b0, beta]
        preds[i] = b0 + x[i] @ beta
    return preds, params, flags


def zscore_columns(x):
    m, s = x.mean(axis=0), x.std(axis=0)
    s = np.where(s > 0, s, 1.0)
    return (x - m) / s


@dataclass(frozen=True)
class EvaluationReport:
    family: str
    tags: tuple
    subjects: tuple
    targets: tuple
    predictions: tuple
    pearson_r: float = None
    pearson_p: float = None
    spearman_rho: float = None
    spearman_p: float = None
    mae: float = None
    coefficients: tuple = ()
    intercept: float = None
    column_spearman: tuple = ()
    excluded: dict = field(default_factory=dict)
    notes: tuple = ()


def _safe(fn, *args):
    try:
        return fn(*args)
    except NumericalError:
        return None, None


def fuse_loso(dm, records, ridge=RIDGE):
    """LOSO linear regression from z-normalised distances to the severity score."""
    n, p = dm.values.shape
    if n < 3:
        raise ValidationError(f"need at least 3 patients for fusion, have {n}")
    y = np.array([records[sid].updrs for sid in dm.subjects], dtype=float)
    x = zscore_columns(dm.values)
    notes = []
    preds, _, flags = loso_predictions(x, y, ridge)
    if flags.any():
        log.warning("rank-deficient design in %d folds: ridge %.0e used", flags.sum(), ridge)
        notes.append(f"ridge fallback in {int(flags.sum())} folds")
    b0, beta, used = fit_linear(x, y, ridge)
    if used:
        notes.append("ridge fallback in full-data fit")
    r, rp = _safe(pearson, y, preds)
    rho, rhop = _safe(spearman, y, preds)
    if r is None:
        notes.append("pearson undefined")
    if rho is None:
        notes.append("spearman undefined")
    cols = tuple(_safe(spearman, dm.values[:, j], y)[0] for j in range(p))
    return EvaluationReport(
        family=dm.family, tags=tuple(dm.tags), subjects=tuple(dm.subjects),
        targets=tuple(float(v) for v in y), predictions=tuple(float(v) for v in preds),
        pearson_r=r, pearson_p=rp, spearman_rho=rho, spearman_p=rhop,
        mae=median_abs_error(y, preds),
        coefficients=tuple(float(v) for v in beta), intercept=b0,
        column_spearman=cols, excluded=dict(dm.excluded), notes=tuple(notes),
    )
