import json
import logging
import shutil

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from usermodels import cli
from usermodels.config import load_config, parse_config
from usermodels.errors import NumericalError, ValidationError
from usermodels.frames import FrameSequence
from usermodels.gmm_ubm import EmConfig
from usermodels.pipeline import (
    DistanceMatrix, SubjectRecord, TvConfig, assemble, emit_report, extract_features, fit_linear,
    fuse_loso, ingest_corpus, loso_predictions, median_abs_error, pearson, read_distances,
    read_metadata, read_summary, score_gmm, score_ivector, spearman, write_distances,
)
from usermodels.pipeline.report import COEFFICIENTS, SCATTER, SUMMARY
from usermodels.pipeline.scoring import FeatureWarp, ZScore
from usermodels.synth import SynthConfig, generate_cohort

TAGS = ("harmonic", "nonlinear", "kinematic", "phonation", "articulation", "prosody", "phonological")
EM = EmConfig(n_components=4, seed=0)


def write_meta(path, rows):
    path.write_text("id,group,gender,age,updrs\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def frames(x):
    return FrameSequence(np.asarray(x, float), 0.01, "test", "t")


def records(n_controls, scores, genders=None):
    out = {}
    for i in range(n_controls):
        g = genders[i] if genders else "F"
        out[f"C{i}"] = SubjectRecord(f"C{i}", "control", g, 60.0)
    for i, s in enumerate(scores):
        out[f"P{i}"] = SubjectRecord(f"P{i}", "patient", "F", 60.0, int(s))
    return out


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_cohort(SynthConfig(n_controls=3, n_patients=4, seed=2, gait_seconds=10), root)
    return root


# -- ingestion -----------------------------------------------------------------

class TestIngest:
    def test_three_subjects(self, tiny, tmp_path):
        meta = write_meta(tmp_path / "m.csv", [("C001", "control", "F", 60, ""),
                                               ("C002", "control", "M", 61, ""),
                                               ("P001", "patient", "F", 62, 30)])
        corpus = ingest_corpus(tiny, meta)
        assert len(corpus.records) == 3
        assert corpus.gaps == []
        assert [r.id for r in corpus.patients] == ["P001"]

    def test_patient_without_score(self, tmp_path):
        meta = write_meta(tmp_path / "m.csv", [("C1", "control", "F", 60, ""), ("P1", "patient", "F", 60, "")])
        with pytest.raises(ValidationError, match="without severity"):
            read_metadata(meta)

    def test_control_score_ignored(self, tmp_path, caplog):
        meta = write_meta(tmp_path / "m.csv", [("C1", "control", "F", 60, 12)])
        with caplog.at_level(logging.WARNING):
            recs = read_metadata(meta)
        assert recs["C1"].updrs is None
        assert "ignored" in caplog.text

    @pytest.mark.parametrize("rows, msg", [
        ([("C1", "control", "F", 60, ""), ("C1", "control", "F", 61, "")], "duplicate"),
        ([("C1", "control", "X", 60, "")], "gender"),
        ([("C1", "control", "F", -3, "")], "age"),
        ([("C1", "control", "F", "old", "")], "malformed"),
        ([("P1", "patient", "F", 60, 140)], "outside"),
        ([("P1", "patient", "F", 60, 12.5)], "integer"),
        ([("C1", "control", "F", 60)], "fields"),
    ])
    def test_bad_rows(self, tmp_path, rows, msg):
        with pytest.raises(ValidationError, match=msg):
            read_metadata(write_meta(tmp_path / "m.csv", rows))

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("id,group,sex,age,updrs\n")
        with pytest.raises(ValidationError, match="header"):
            read_metadata(tmp_path / "m.csv")

    def test_missing_modality_is_gap(self, tiny, tmp_path):
        root = tmp_path / "c"
        shutil.copytree(tiny, root)
        shutil.rmtree(root / "P002" / "handwriting")
        corpus = ingest_corpus(root)
        assert ("P002", "handwriting", "no files") in corpus.gaps
        feats = extract_features(corpus, ["kinematic"])
        assert "P002" not in feats["kinematic"] and "P001" in feats["kinematic"]
        assert ("P002", "kinematic", "no handwriting files") in corpus.gaps

    def test_unknown_feature_set(self, tiny):
        with pytest.raises(ValidationError):
            extract_features(ingest_corpus(tiny), ["timbre"])


# -- scoring -------------------------------------------------------------------

def gaussian_pool(rng, n_controls=6, n=400, dim=3):
    return {f"C{i}": frames(rng.normal(size=(n, dim))) for i in range(n_controls)}


class TestScoreGmm:
    def test_shifted_patient_farther(self):
        rng = np.random.default_rng(0)
        feats = gaussian_pool(rng)
        feats["P0"] = frames(rng.normal(size=(400, 3)))
        feats["P1"] = frames(rng.normal(size=(400, 3)) + 1.5)
        col = score_gmm(feats, records(6, [10, 90]), "t", EM)
        assert 0 <= col.values["P0"] < col.values["P1"]

    @pytest.mark.parametrize("normalize", ["warp", "zscore"])
    def test_deterministic(self, normalize):
        rng = np.random.default_rng(1)
        feats = gaussian_pool(rng)
        feats["P0"] = frames(rng.normal(size=(300, 3)) * 2)
        a = score_gmm(feats, records(6, [5]), "t", EM, normalize=normalize)
        b = score_gmm(feats, records(6, [5]), "t", EM, normalize=normalize)
        assert a.values == b.values

    def test_zero_frame_patient_is_gap(self):
        rng = np.random.default_rng(2)
        feats = gaussian_pool(rng)
        feats["P1"] = frames(rng.normal(size=(200, 3)))
        col = score_gmm(feats, records(6, [5, 6]), "t", EM)
        assert col.errors == {"P0": "no frames"}
        dm = assemble([col], records(6, [5, 6]))
        assert dm.subjects == ("P1",) and "P0" in dm.excluded

    def test_insufficient_controls(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValidationError, match="at least 2 controls"):
            score_gmm({"C0": frames(rng.normal(size=(300, 2)))}, records(1, [3]), "t", EM)

    def test_k_lowered_for_small_pool(self, caplog):
        rng = np.random.default_rng(4)
        feats = gaussian_pool(rng, n_controls=2, n=20, dim=2)
        feats["P0"] = frames(rng.normal(size=(20, 2)))
        with caplog.at_level(logging.WARNING):
            col = score_gmm(feats, records(2, [1]), "t", EmConfig(n_components=16))
        assert col.model[0].n_components == 4
        assert "lowering K" in caplog.text

    def test_constant_dims_dropped(self):
        rng = np.random.default_rng(5)
        pool = np.column_stack([rng.normal(size=500), np.full(500, 3.0)])
        for norm in (ZScore(pool), FeatureWarp(pool)):
            assert norm(pool).shape == (500, 1)


class TestFeatureWarp:
    def test_pool_becomes_standard_normal(self):
        x = np.random.default_rng(6).lognormal(0, 2, size=(5000, 1))
        z = FeatureWarp(x)(x)[:, 0]
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1) < 0.01
        assert stats.skew(z) == pytest.approx(0, abs=1e-6)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=50))
    def test_monotone(self, values):
        x = np.array(values)[:, None]
        if x.std() == 0:
            return
        w = FeatureWarp(x)
        probe = np.sort(np.linspace(-2e3, 2e3, 101))[:, None]
        # np.interp may overshoot a knot by one ulp
        assert np.all(np.diff(w(probe)[:, 0]) >= -1e-12)

    def test_ties_share_quantile(self):
        x = np.array([0, 0, 0, 1, 1, 2], float)[:, None]
        z = FeatureWarp(x)(x)[:, 0]
        assert z[0] == z[1] == z[2] and z[3] == z[4]
        # average rank of the three zeros is 1 (0-based) -> (1 + 0.5) / 6
        assert z[0] == pytest.approx(stats.norm.ppf(1.5 / 6), abs=1e-12)


class TestScoreIvector:
    @staticmethod
    def two_clusters(rng):
        # men sit at +2 on the first dimension, women at -2
        genders = ["M", "F"] * 5
        feats = {f"C{i}": frames(rng.normal(size=(300, 2)) + [2.0 if g == "M" else -2.0, 0])
                 for i, g in enumerate(genders)}
        recs = records(10, [], genders)
        recs["P0"] = SubjectRecord("P0", "patient", "M", 60.0, 10)
        recs["P1"] = SubjectRecord("P1", "patient", "M", 60.0, 80)
        feats["P0"] = frames(rng.normal(size=(300, 2)) + [2.0, 0])
        feats["P1"] = frames(rng.normal(size=(300, 2)) + [-2.0, 0])
        return feats, recs

    def test_matched_patient_closer(self):
        feats, recs = self.two_clusters(np.random.default_rng(7))
        col = score_ivector(feats, recs, "t", EM, TvConfig(rank=2))
        assert col.errors == {}
        # i-vectors of the two clusters are not centred, so not antipodal
        assert col.values["P0"] < 0.05
        assert col.values["P1"] > col.values["P0"] + 0.5

    def test_deterministic(self):
        feats, recs = self.two_clusters(np.random.default_rng(8))
        a = score_ivector(feats, recs, "t", EM, TvConfig(rank=2))
        b = score_ivector(feats, recs, "t", EM, TvConfig(rank=2))
        assert a.values == b.values

    def test_no_same_gender_control(self):
        rng = np.random.default_rng(9)
        feats = gaussian_pool(rng, n_controls=4, n=200, dim=2)
        recs = records(4, [20])
        recs["P0"] = SubjectRecord("P0", "patient", "M", 60.0, 20)
        feats["P0"] = frames(rng.normal(size=(200, 2)))
        col = score_ivector(feats, recs, "t", EM, TvConfig(rank=2))
        assert "P0" in col.errors and col.values == {}


class TestDistanceMatrix:
    def test_rejects_missing_and_negative(self):
        with pytest.raises(ValidationError):
            DistanceMatrix("gmm", ("a",), ("P0",), np.array([[np.nan]]))
        with pytest.raises(ValidationError):
            DistanceMatrix("gmm", ("a",), ("P0",), np.array([[-0.1]]))
        with pytest.raises(ValidationError):
            DistanceMatrix("ivector", ("a",), ("P0",), np.array([[2.5]]))

    def test_csv_round_trip(self, tmp_path):
        dm = DistanceMatrix("gmm", TAGS, ("P0", "P1"), np.random.default_rng(0).random((2, 7)) / 3)
        write_distances(dm, tmp_path / "d.csv")
        back = read_distances(tmp_path / "d.csv")
        assert back.tags == dm.tags and back.subjects == dm.subjects
        assert np.array_equal(back.values, dm.values)


# -- metrics -------------------------------------------------------------------

class TestMetrics:
    def test_linear(self):
        x = np.arange(10.0)
        assert pearson(x, 2 * x + 1)[0] == pytest.approx(1.0)
        assert spearman(x, 2 * x + 1)[0] == pytest.approx(1.0)

    def test_cubic(self):
        x = np.arange(-2.0, 3.0)
        assert spearman(x, x ** 3)[0] == pytest.approx(1.0)
        assert pearson(x, x ** 3)[0] < 1.0

    def test_mae(self):
        y = np.array([3.0, 10.0, 50.0, 7.0])
        assert median_abs_error(y, y + 5) == 5.0

    def test_against_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=25)
            y = 0.4 * x + rng.normal(size=25)
            y[3] = y[4]  # a tie for the rank path
            r, p = pearson(x, y)
            ref = stats.pearsonr(x, y)
            assert r == pytest.approx(ref[0], abs=1e-12) and p == pytest.approx(ref[1], rel=1e-9)
            rho, p = spearman(x, y)
            ref = stats.spearmanr(x, y)
            assert rho == pytest.approx(ref[0], abs=1e-12) and p == pytest.approx(ref[1], rel=1e-9)

    def test_constant_undefined(self):
        with pytest.raises(NumericalError):
            pearson([1, 2, 3], [4, 4, 4])
        with pytest.raises(NumericalError):
            spearman([5, 5, 5], [1, 2, 3])

    @pytest.mark.parametrize("x, y", [([1, 2], [1, 2]), ([1, 2, 3], [1, 2]), ([1, 2, np.nan], [1, 2, 3])])
    def test_bad_input(self, x, y):
        with pytest.raises(ValidationError):
            pearson(x, y)

    @settings(max_examples=50)
    @given(st.lists(st.integers(-100, 100), min_size=4, max_size=30, unique=True),
           st.integers(0, 2**32 - 1))
    def test_spearman_monotone_invariance(self, xs, seed):
        x = np.array(xs, dtype=float)
        y = x + np.random.default_rng(seed).normal(scale=30, size=len(x))
        if np.ptp(y) == 0:
            return
        rho = spearman(x, y)[0]
        assert -1 <= rho <= 1
        assert spearman(np.exp(x / 50), y)[0] == pytest.approx(rho, abs=1e-12)
        assert spearman(x, y ** 3 + y)[0] == pytest.approx(rho, abs=1e-12)

    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=3, max_size=30),
           st.randoms())
    def test_mae_permutation_invariant(self, pairs, rnd):
        a, b = map(np.array, zip(*pairs))
        perm = list(range(len(pairs)))
        rnd.shuffle(perm)
        assert median_abs_error(a[perm], b[perm]) == median_abs_error(a, b)
        assert median_abs_error(a, b) >= 0


# -- fusion --------------------------------------------------------------------

def matrix(values, scores, family="gmm"):
    ids = tuple(f"P{i}" for i in range(len(scores)))
    recs = {sid: SubjectRecord(sid, "patient", "F", 60.0, int(s)) for sid, s in zip(ids, scores)}
    return DistanceMatrix(family, TAGS[:values.shape[1]], ids, values), recs


class TestFusion:
    def test_exact_linear_targets(self):
        rng = np.random.default_rng(0)
        y = rng.choice(133, 20, replace=False).astype(float)  # no ties, so rho can reach 1
        x = rng.random((20, 7))
        beta = np.array([3.0, -2.0, 1.0, 0.5, 4.0, -1.0])
        # last column solves y = 7 + x[:, :6] @ beta + 2.5 * x6 exactly
        x[:, 6] = (y - 7 - x[:, :6] @ beta) / 2.5
        x[:, 6] -= min(0.0, x[:, 6].min())
        y = np.round(7 + x[:, :6] @ beta + 2.5 * x[:, 6], 9)
        dm, recs = matrix(x, np.zeros(20))
        rep = fuse_loso_targets(dm, y)
        assert np.max(np.abs(np.array(rep.predictions) - y)) < 1e-6
        assert rep.spearman_rho == pytest.approx(1.0)

    def test_constant_targets(self):
        dm, recs = matrix(np.random.default_rng(1).random((10, 7)), [40] * 10)
        rep = fuse_loso(dm, recs)
        assert rep.pearson_r is None and rep.spearman_rho is None
        assert "pearson undefined" in rep.notes
        assert rep.mae == pytest.approx(0.0, abs=1e-9)

    def test_random_targets(self):
        # P(|rho| < 0.35) for 50 patients, 7 independent columns: 0.889 from 1000
        # Monte-Carlo draws; 200 draws at >= 0.8 leaves a 4-sigma margin
        hits = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            dm, recs = matrix(rng.gamma(2.0, 1.0, (50, 7)), rng.integers(0, 133, 50))
            hits += abs(fuse_loso(dm, recs).spearman_rho) < 0.35
        assert hits / 200 >= 0.8

    def test_too_few_patients(self):
        dm, recs = matrix(np.ones((2, 7)), [1, 2])
        with pytest.raises(ValidationError):
            fuse_loso(dm, recs)

    def test_rank_deficient_uses_ridge(self, caplog):
        rng = np.random.default_rng(2)
        dm, recs = matrix(rng.random((6, 7)), rng.integers(0, 133, 6))
        with caplog.at_level(logging.WARNING):
            rep = fuse_loso(dm, recs)
        assert "ridge fallback in 6 folds" in rep.notes
        assert "ridge" in caplog.text
        assert np.all(np.isfinite(rep.predictions))

    def test_ridge_leaves_intercept_free(self):
        x = np.tile([[1.0, 1.0]], (4, 1)) + np.arange(4)[:, None]  # collinear columns
        y = 100 + 2 * x[:, 0]
        b0, beta, used = fit_linear(x, y)
        assert used
        assert b0 + x[0] @ beta == pytest.approx(y[0], abs=1e-4)

    def test_held_out_row_never_used(self):
        rng = np.random.default_rng(3)
        x = rng.random((12, 3))
        y = rng.normal(size=12)
        _, clean, _ = loso_predictions(x, y)
        for i in range(12):
            poisoned = x.copy()
            poisoned[i] = 1e6
            y_p = y.copy()
            y_p[i] = -1e6
            preds, params, _ = loso_predictions(poisoned, y_p)
            assert np.array_equal(params[i], clean[i])
            assert preds[i] == pytest.approx(params[i, 0] + poisoned[i] @ params[i, 1:])
            others = np.arange(12) != i
            assert not np.allclose(params[others], clean[others])

    def test_full_data_coefficients(self):
        rng = np.random.default_rng(4)
        x = rng.random((30, 7))
        y = np.round(60 + 20 * (x[:, 0] - x[:, 0].mean()) / x[:, 0].std())
        dm, recs = matrix(x, np.clip(y, 0, 132))
        rep = fuse_loso(dm, recs)
        assert len(rep.coefficients) == 7
        assert np.argmax(np.abs(rep.coefficients)) == 0
        assert rep.column_spearman[0] > 0.9


def fuse_loso_targets(dm, y):
    """fuse_loso with real-valued targets, bypassing the integer score record."""

    class Rec:
        def __init__(self, v):
            self.updrs = v
    return fuse_loso(dm, {sid: Rec(v) for sid, v in zip(dm.subjects, y)})


# -- report --------------------------------------------------------------------

@pytest.fixture()
def report():
    rng = np.random.default_rng(5)
    dm, recs = matrix(rng.random((3, 7)), [10, 50, 90])
    return fuse_loso(dm, recs)


class TestReport:
    def test_files(self, report, tmp_path):
        emit_report(report, tmp_path)
        scatter = (tmp_path / SCATTER).read_text().splitlines()
        assert scatter[0] == "subject,true,predicted" and len(scatter) == 4
        coefs = (tmp_path / COEFFICIENTS).read_text().splitlines()
        assert len(coefs) == 8
        assert [line.split(",")[0] for line in coefs[1:]] == list(TAGS)

    def test_round_trip_bit_exact(self, report, tmp_path):
        emit_report(report, tmp_path)
        back = read_summary(tmp_path / SUMMARY)
        for key in ("pearson_r", "pearson_p", "spearman_rho", "spearman_p", "mae", "intercept"):
            assert back[key] == getattr(report, key)
        assert tuple(back["coefficients"][t] for t in TAGS) == report.coefficients

    def test_undefined_is_null(self, tmp_path):
        dm, recs = matrix(np.random.default_rng(1).random((5, 2)), [7] * 5)
        emit_report(fuse_loso(dm, recs), tmp_path)
        back = json.loads((tmp_path / SUMMARY).read_text())
        assert back["pearson_r"] is None and back["spearman_rho"] is None

    def test_deterministic_bytes(self, report, tmp_path):
        emit_report(report, tmp_path / "a")
        emit_report(report, tmp_path / "b")
        for name in (SCATTER, COEFFICIENTS, SUMMARY):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unwritable(self, report, tmp_path):
        (tmp_path / "f").write_text("x")
        with pytest.raises(ValidationError):
            emit_report(report, tmp_path / "f" / "out")


# -- config and CLI ------------------------------------------------------------

class TestConfig:
    def test_values(self):
        cfg = parse_config(["# comment", "", "em.n_components = 8", "map.relevance=4",
                            "map.adapt_variances = no", "tv.rank = 3", "score.normalize = zscore"])
        assert cfg.em.n_components == 8 and cfg.map.relevance == 4.0
        assert cfg.map.adapt_variances is False and cfg.tv.rank == 3 and cfg.normalize == "zscore"
        assert cfg.with_seed(9).em.seed == 9 and cfg.with_seed(9).tv.seed == 9

    @pytest.mark.parametrize("line", ["em.colour = 3", "gmm.k = 3", "em.n_components = many",
                                      "em.n_components", "map.adapt_means = maybe", "em.tol = -1",
                                      "score.normalize = minmax"])
    def test_rejects(self, line):
        with pytest.raises(ValidationError):
            parse_config([line])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            load_config(tmp_path / "none.cfg")


class TestCli:
    def test_report_end_to_end(self, tiny, tmp_path, capsys):
        args = ["report", "--corpus", str(tiny), "--features", "phonation,kinematic",
                "--out", str(tmp_path / "r"), "--seed", "1"]
        assert cli.main(args) == 0
        assert "spearman=" in capsys.readouterr().out
        for name in (SCATTER, COEFFICIENTS, SUMMARY, "distances.csv"):
            assert (tmp_path / "r" / name).exists()
        assert cli.main(args[:-4] + ["--out", str(tmp_path / "r2"), "--seed", "1"]) == 0
        for name in (SCATTER, COEFFICIENTS, SUMMARY):
            assert (tmp_path / "r" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()

    def test_score_then_fuse(self, tiny, tmp_path):
        assert cli.main(["score", "--corpus", str(tiny), "--features", "kinematic",
                         "--out", str(tmp_path / "d.csv")]) == 0
        assert cli.main(["fuse", "--metadata", str(tiny / "metadata.csv"),
                         "--distances", str(tmp_path / "d.csv"), "--out", str(tmp_path / "f")]) == 0
        assert (tmp_path / "f" / SUMMARY).exists()

    def test_train_ubm(self, tiny, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("em.n_components = 2\n")
        assert cli.main(["train-ubm", "--corpus", str(tiny), "--features", "kinematic",
                         "--config", str(cfg), "--out", str(tmp_path / "u")]) == 0
        assert "K 2" in (tmp_path / "u" / "ubm_kinematic.txt").read_text()

    def test_synth(self, tmp_path):
        assert cli.main(["synth", "--n-controls", "2", "--n-patients", "2", "--seed", "1",
                         "--gait-seconds", "10", "--out", str(tmp_path)]) == 0
        assert len([p for p in tmp_path.iterdir() if p.is_dir()]) == 4

    @pytest.mark.parametrize("argv", [
        ["score", "--corpus", "/nonexistent", "--out", "/tmp/x"],
        ["score", "--out", "/tmp/x"],
        ["score", "--features", "timbre"],
        ["bogus"],
        ["synth", "--n-controls", "1", "--out", "/tmp/x"],
    ])
    def test_validation_exit_code(self, argv, capsys):
        with_exit = None
        try:
            with_exit = cli.main(argv)
        except SystemExit as exc:
            with_exit = exc.code
        assert with_exit == cli.EXIT_INVALID

    def test_bad_config_exit_code(self, tiny, tmp_path):
        (tmp_path / "c.cfg").write_text("em.bogus = 1\n")
        assert cli.main(["score", "--corpus", str(tiny), "--config", str(tmp_path / "c.cfg"),
                         "--out", str(tmp_path / "d.csv")]) == cli.EXIT_INVALID

    def test_numerical_exit_code(self, monkeypatch):
        def boom(args):
            raise NumericalError("singular")
        monkeypatch.setitem(cli.COMMANDS, "score", boom)
        assert cli.main(["score"]) == cli.EXIT_NUMERICAL
