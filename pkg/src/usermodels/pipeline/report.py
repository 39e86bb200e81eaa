import csv
import json
from pathlib import Path

from ..errors import ValidationError

SCATTER = "scatter.csv"
COEFFICIENTS = "coefficients.csv"
SUMMARY = "summary.json"


def _num(v):
    # repr keeps doubles bit-exact through a text round trip
    return "" if v is None else repr(float(v))


def summary_dict(report):
    return {
        "family": report.family,
        "n_subjects": len(report.subjects),
        "pearson_r": report.pearson_r,
        "pearson_p": report.pearson_p,
        "spearman_rho": report.spearman_rho,
        "spearman_p": report.spearman_p,
        "mae": report.mae,
        "intercept": report.intercept,
        "coefficients": dict(zip(report.tags, report.coefficients)),
        "column_spearman": dict(zip(report.tags, report.column_spearman)),
        "excluded": dict(sorted(report.excluded.items())),
        "notes": list(report.notes),
    }


def emit_report(report, out_dir):
    """scatter.csv (true vs predicted), coefficients.csv and summary.json under out_dir."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / SCATTER, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", "true", "predicted"])
            for sid, a, b in zip(report.subjects, report.targets, report.predictions):
                w.writerow([sid, _num(a), _num(b)])
        with open(out / COEFFICIENTS, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature_set", "coefficient", "column_spearman"])
            for tag, c, rho in zip(report.tags, report.coefficients, report.column_spearman):
                w.writerow([tag, _num(c), _num(rho)])
        text = json.dumps(summary_dict(report), indent=2, sort_keys=True, allow_nan=False)
        (out / SUMMARY).write_text(text + "\n")
    except OSError as exc:
        raise ValidationError(f"cannot write report to {out}: {exc}") from None
    return [out / SCATTER, out / COEFFICIENTS, out / SUMMARY]


def read_summary(path):
    with open(path) as fh:
        return json.load(fh)
