from .corpus import (
    FEATURE_SETS, Corpus, SubjectRecord, extract_features, ingest_corpus, read_metadata,
)
from .fusion import (
    EvaluationReport, fit_linear, fuse_loso, loso_predictions, median_abs_error, pearson, spearman,
)
from .report import emit_report, read_summary
from .scoring import (
    DistanceMatrix, ScoreColumn, TvConfig, assemble, read_distances, score_all, score_gmm,
    score_ivector, write_distances,
)
