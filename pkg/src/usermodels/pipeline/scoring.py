"""Per-feature-set distances between each patient and the control population."""

import csv
from dataclasses import dataclass, field, replace
import logging

import numpy as np
from scipy.stats import norm

from ..errors import NumericalError, ValidationError
from ..gmm_ubm import EmConfig, MapConfig, gmm_distance, map_adapt, train_ubm
from ..ivector import (
    accumulate_stats, build_reference, cosine_distance, extract_ivector, train_total_variability,
)
from .corpus import FEATURE_SETS

log = logging.getLogger(__name__)

FAMILIES = ("gmm", "ivector")
# per-tag default i-vector rank: speech-sized streams get more
DEFAULT_RANK = {"phonation": 64, "articulation": 64, "prosody": 64, "phonological": 64,
                "kinematic": 16, "harmonic": 16, "nonlinear": 16}


@dataclass(frozen=True)
class TvConfig:
    rank: int = 0  # 0: per-feature-set default
    iterations: int = 10
    min_divergence: bool = False
    age_window: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.rank < 0 or self.iterations < 0 or self.age_window < 0:
            raise ValidationError("rank, iterations and age window must be non-negative")


@dataclass
class ScoreColumn:
    tag: str
    family: str
    values: dict  # patient id -> distance
    errors: dict = field(default_factory=dict)  # patient id -> reason
    model: object = None


class ZScore:
    """Per-dimension z-scoring fitted on the control pool; constant dimensions dropped."""

    def __init__(self, x):
        sd = x.std(axis=0)
        self.keep = sd > 0
        if not self.keep.any():
            raise ValidationError("all feature dimensions are constant over the controls")
        self.mean, self.scale = x.mean(axis=0)[self.keep], sd[self.keep]

    def __call__(self, x):
        return (x[:, self.keep] - self.mean) / self.scale


class FeatureWarp(ZScore):
    """Maps each dimension through the control-pool empirical CDF onto normal quantiles.

    Heavy control tails otherwise squeeze the bulk of the pool into a few
    floor-variance components, and shifted patient frames then land on
    near-zero-weight components that barely move the distance. Values
    outside the control range saturate at the extreme quantiles.
    """

    def __init__(self, x):
        super().__init__(x)
        n = x.shape[0]
        self.table = []
        for col in x[:, self.keep].T:
            u, cnt = np.unique(col, return_counts=True)
            mid_rank = np.cumsum(cnt) - (cnt + 1) / 2.0  # 0-based average rank of ties
            self.table.append((u, norm.ppf((mid_rank + 0.5) / n)))

    def __call__(self, x):
        x = x[:, self.keep]
        return np.column_stack([np.interp(x[:, j], u, q) for j, (u, q) in enumerate(self.table)])


NORMALIZERS = {"warp": FeatureWarp, "zscore": ZScore}


def control_pool(features, records, tag):
    ids = [sid for sid, r in records.items() if not r.is_patient and sid in features]
    if len(ids) < 2:
        raise ValidationError(f"{tag}: need at least 2 controls with frames, have {len(ids)}")
    return ids, np.vstack([features[sid].data for sid in ids])


def fit_ubm(pool, em_cfg, tag):
    """UBM on the standardized pool, with K lowered so every component sees >= 10 frames."""
    k_max = min(pool.shape[0] // 10, len(np.unique(pool, axis=0)))
    if k_max < 1:
        raise ValidationError(f"{tag}: {pool.shape[0]} control frames are too few for a UBM")
    if em_cfg.n_components > k_max:
        log.warning("%s: lowering K from %d to %d for %d control frames",
                    tag, em_cfg.n_components, k_max, pool.shape[0])
        em_cfg = replace(em_cfg, n_components=k_max)
    return train_ubm(pool, em_cfg)


def _patients(records):
    return [sid for sid, r in records.items() if r.is_patient]


def _normalizer(name, pool):
    if name not in NORMALIZERS:
        raise ValidationError(f"unknown normalization {name!r}")
    return NORMALIZERS[name](pool)


def score_gmm(features, records, tag, em_cfg=EmConfig(), map_cfg=MapConfig(), normalize="warp"):
    """UBM on pooled control frames; each patient is MAP-adapted and compared to it."""
    _, pool = control_pool(features, records, tag)
    std = _normalizer(normalize, pool)
    ubm = fit_ubm(std(pool), em_cfg, tag)
    col = ScoreColumn(tag, "gmm", {}, {}, (ubm, std))
    for sid in _patients(records):
        if sid not in features:
            col.errors[sid] = "no frames"
            continue
        try:
            adapted = map_adapt(ubm, std(features[sid].data), map_cfg)
            col.values[sid] = gmm_distance(ubm, adapted)
        except (ValidationError, NumericalError) as exc:
            col.errors[sid] = str(exc)
    return col


def score_ivector(features, records, tag, em_cfg=EmConfig(), tv_cfg=TvConfig(), normalize="warp"):
    """Cosine distance between each patient's i-vector and its age/gender-matched control mean."""
    ctrl_ids, pool = control_pool(features, records, tag)
    std = _normalizer(normalize, pool)
    ubm = fit_ubm(std(pool), em_cfg, tag)
    stats = [accumulate_stats(ubm, std(features[sid].data)) for sid in ctrl_ids]
    rank = tv_cfg.rank or DEFAULT_RANK.get(tag, 16)
    limit = min(len(stats), ubm.n_components * ubm.dim)
    if rank > limit:
        log.warning("%s: lowering i-vector rank from %d to %d (%d controls)", tag, rank, limit, len(stats))
        rank = limit
    tv = train_total_variability(ubm, stats, rank, tv_cfg.iterations, tv_cfg.seed, tv_cfg.min_divergence)
    controls = [(extract_ivector(tv, s, sid, tag), records[sid]) for sid, s in zip(ctrl_ids, stats)]
    col = ScoreColumn(tag, "ivector", {}, {}, (tv, std))
    for sid in _patients(records):
        if sid not in features:
            col.errors[sid] = "no frames"
            continue
        try:
            iv = extract_ivector(tv, accumulate_stats(ubm, std(features[sid].data)), sid, tag)
            ref = build_reference(controls, records[sid], tv_cfg.age_window)
            col.values[sid] = cosine_distance(iv, ref)
        except (ValidationError, NumericalError) as exc:
            col.errors[sid] = str(exc)
    return col


@dataclass(frozen=True)
class DistanceMatrix:
    family: str
    tags: tuple
    subjects: tuple
    values: np.ndarray  # len(subjects) x len(tags)
    excluded: dict = field(default_factory=dict, compare=False)  # id -> reason

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.subjects), len(self.tags)):
            raise ValidationError("distance matrix shape does not match its labels")
        if not np.all(np.isfinite(v)):
            raise ValidationError("distance matrix has missing cells")
        if np.any(v < 0) or (self.family == "ivector" and np.any(v > 2)):
            raise ValidationError("distance out of range")
        object.__setattr__(self, "values", v)

    def column(self, tag):
        return self.values[:, self.tags.index(tag)]


def assemble(columns, records):
    """Complete-case matrix: patients missing any column are excluded."""
    if not columns:
        raise ValidationError("no score columns")
    family = {c.family for c in columns}
    if len(family) != 1:
        raise ValidationError("cannot mix model families in one matrix")
    tags = tuple(c.tag for c in columns)
    subjects, rows, excluded = [], [], {}
    for sid in _patients(records):
        missing = [c.tag for c in columns if sid not in c.values]
        if missing:
            why = "; ".join(f"{c.tag}: {c.errors.get(sid, 'missing')}" for c in columns if c.tag in missing)
            excluded[sid] = why
            log.warning("excluding %s from fusion (%s)", sid, why)
            continue
        subjects.append(sid)
        rows.append([c.values[sid] for c in columns])
    return DistanceMatrix(family.pop(), tags, tuple(subjects),
                          np.array(rows).reshape(len(subjects), len(tags)), excluded)


def score_all(features, records, family="gmm", tags=None, em_cfg=EmConfig(), map_cfg=MapConfig(),
              tv_cfg=TvConfig(), normalize="warp"):
    if family not in FAMILIES:
        raise ValidationError(f"unknown model family {family!r}")
    tags = tuple(tags or FEATURE_SETS)
    cols = []
    for tag in tags:
        log.info("scoring %s (%s)", tag, family)
        if family == "gmm":
            cols.append(score_gmm(features.get(tag, {}), records, tag, em_cfg, map_cfg, normalize))
        else:
            cols.append(score_ivector(features.get(tag, {}), records, tag, em_cfg, tv_cfg, normalize))
    return assemble(cols, records)


def write_distances(dm, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", *dm.tags])
        for sid, row in zip(dm.subjects, dm.values):
            w.writerow([sid, *(repr(float(v)) for v in row)])


def read_distances(path, family="gmm"):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "subject":
        raise ValidationError(f"{path}: expected a subject,<feature sets> header")
    tags = tuple(rows[0][1:])
    try:
        values = [[float(v) for v in r[1:]] for r in rows[1:] if r]
    except ValueError:
        raise ValidationError(f"{path}: malformed distance") from None
    subjects = tuple(r[0] for r in rows[1:] if r)
    return DistanceMatrix(family, tags, subjects, np.array(values).reshape(len(subjects), len(tags)))
