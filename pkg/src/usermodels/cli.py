"""Command line entry point.

    usermodels synth --out corpus --n-controls 30 --n-patients 40 --seed 7
    usermodels report --corpus corpus --out results
"""

import argparse
import logging
from pathlib import Path
import sys

from .config import PipelineConfig, load_config
from .errors import NumericalError, ValidationError
from .gmm_ubm import save_gmm
from .pipeline.corpus import FEATURE_SETS, extract_features, ingest_corpus, read_metadata
from .pipeline.fusion import fuse_loso
from .pipeline.report import emit_report
from .pipeline.scoring import (
    FAMILIES, NORMALIZERS, control_pool, fit_ubm, read_distances, score_all, write_distances,
)
from .synth import SynthConfig, generate_cohort

log = logging.getLogger("usermodels")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
DISTANCES = "distances.csv"


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors; exit code 2 is reserved for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _feature_list(text):
    tags = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in tags if t not in FEATURE_SETS]
    if bad or not tags:
        raise argparse.ArgumentTypeError(f"unknown feature set(s): {', '.join(bad) or text!r}")
    return tags


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--corpus", type=Path, help="corpus root directory")
    common.add_argument("--metadata", type=Path, help="metadata CSV (default <corpus>/metadata.csv)")
    common.add_argument("--seed", type=int, default=None, help="overrides em.seed and tv.seed")
    common.add_argument("--model", choices=FAMILIES, default="gmm")
    common.add_argument("--features", type=_feature_list, default=list(FEATURE_SETS),
                        help="comma-separated feature sets (default: all seven)")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("--config", type=Path, help="key=value file with em.*, map.*, tv.* settings")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="usermodels", description="Severity modelling from speech, handwriting and gait.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train-ubm", parents=[common], help="train one UBM per feature set on the controls")
    sub.add_parser("score", parents=[common], help="write the patient x feature-set distance matrix")
    f = sub.add_parser("fuse", parents=[common], help="LOSO fusion of a distance matrix into a report")
    f.add_argument("--distances", type=Path, required=True)
    sub.add_parser("report", parents=[common], help="score, fuse and write the report in one pass")
    s = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    s.add_argument("--n-controls", type=int, default=30)
    s.add_argument("--n-patients", type=int, default=40)
    s.add_argument("--gait-seconds", type=float, default=15.0)
    return p


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ValidationError(f"--{n} is required for {args.command}")


def _settings(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    return cfg if args.seed is None else cfg.with_seed(args.seed)


def _features(args):
    _need(args, "corpus")
    corpus = ingest_corpus(args.corpus, args.metadata)
    return corpus, extract_features(corpus, args.features)


def _score(args, cfg):
    corpus, feats = _features(args)
    dm = score_all(feats, corpus.records, args.model, args.features, cfg.em, cfg.map, cfg.tv, cfg.normalize)
    return corpus, dm


def cmd_train_ubm(args):
    _need(args, "out")
    cfg = _settings(args)
    corpus, feats = _features(args)
    args.out.mkdir(parents=True, exist_ok=True)
    for tag in args.features:
        _, pool = control_pool(feats.get(tag, {}), corpus.records, tag)
        ubm = fit_ubm(NORMALIZERS[cfg.normalize](pool)(pool), cfg.em, tag)
        save_gmm(ubm, args.out / f"ubm_{tag}.txt")
        print(f"{tag}: K={ubm.n_components} D={ubm.dim} -> {args.out / f'ubm_{tag}.txt'}")


def cmd_score(args):
    _need(args, "out")
    _, dm = _score(args, _settings(args))
    path = args.out if args.out.suffix == ".csv" else args.out / DISTANCES
    path.parent.mkdir(parents=True, exist_ok=True)
    write_distances(dm, path)
    print(f"{len(dm.subjects)} patients x {len(dm.tags)} feature sets -> {path}")
    for sid, why in dm.excluded.items():
        print(f"excluded {sid}: {why}")


def _finish(report, out):
    emit_report(report, out)
    fmt = lambda v: "undefined" if v is None else f"{v:.4f}"
    print(f"n={len(report.subjects)} pearson={fmt(report.pearson_r)} spearman={fmt(report.spearman_rho)} "
          f"mae={fmt(report.mae)} -> {out}")


def cmd_fuse(args):
    _need(args, "out")
    if args.metadata is None:
        _need(args, "corpus")
    records = read_metadata(args.metadata or args.corpus / "metadata.csv")
    dm = read_distances(args.distances, args.model)
    unknown = [s for s in dm.subjects if s not in records or not records[s].is_patient]
    if unknown:
        raise ValidationError(f"distance rows without a patient record: {', '.join(unknown)}")
    _finish(fuse_loso(dm, records), args.out)


def cmd_report(args):
    _need(args, "out")
    corpus, dm = _score(args, _settings(args))
    args.out.mkdir(parents=True, exist_ok=True)
    write_distances(dm, args.out / DISTANCES)
    _finish(fuse_loso(dm, corpus.records), args.out)


def cmd_synth(args):
    _need(args, "out")
    cfg = SynthConfig(n_controls=args.n_controls, n_patients=args.n_patients,
                      seed=0 if args.seed is None else args.seed, gait_seconds=args.gait_seconds)
    generate_cohort(cfg, args.out)
    print(f"{cfg.n_controls} controls + {cfg.n_patients} patients -> {args.out}")


COMMANDS = {"train-ubm": cmd_train_ubm, "score": cmd_score, "fuse": cmd_fuse,
            "report": cmd_report, "synth": cmd_synth}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
