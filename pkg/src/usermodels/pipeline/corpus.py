"""Corpus layout, metadata validation and per-subject feature extraction.

Layout under the corpus root, one directory per subject id::

    <id>/speech/<task>.wav
    <id>/phonological/<task>.csv
    <id>/handwriting/<task>.csv
    <id>/gait/<task>_<foot>.csv

Missing directories or files are recorded as gaps, not errors.
"""

import csv
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Optional

from ..errors import NumericalError, ValidationError
from ..gait.features import harmonic_frames, load_gait_csv, nonlinear_frames
from ..handwriting_features import handwriting_frames, parse_pen_stream
from ..speech_features import load_phonological, read_wav, speech_frames
from ..frames import concat

log = logging.getLogger(__name__)

MAX_SCORE = 132
METADATA_COLUMNS = ["id", "group", "gender", "age", "updrs"]

# feature set -> modality directory
FEATURE_SETS = {
    "harmonic": "gait",
    "nonlinear": "gait",
    "kinematic": "handwriting",
    "phonation": "speech",
    "articulation": "speech",
    "prosody": "speech",
    "phonological": "phonological",
}
MODALITY_SUFFIX = {"speech": ".wav", "phonological": ".csv", "handwriting": ".csv", "gait": ".csv"}


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    group: str  # "patient" | "control"
    gender: str  # "F" | "M"
    age: float
    updrs: Optional[int] = None

    def __post_init__(self):
        if self.group not in ("patient", "control"):
            raise ValidationError(f"{self.id}: group must be patient or control")
        if self.gender not in ("F", "M"):
            raise ValidationError(f"{self.id}: gender must be F or M")
        if not self.age > 0:
            raise ValidationError(f"{self.id}: age must be positive")
        if self.group == "patient":
            if self.updrs is None:
                raise ValidationError(f"{self.id}: patient without severity score")
            if not 0 <= self.updrs <= MAX_SCORE:
                raise ValidationError(f"{self.id}: score {self.updrs} outside [0, {MAX_SCORE}]")

    @property
    def is_patient(self):
        return self.group == "patient"


@dataclass
class Corpus:
    root: Path
    records: dict  # id -> SubjectRecord, metadata order
    files: dict  # id -> modality -> sorted list of paths
    gaps: list = field(default_factory=list)  # (id, modality or tag, reason)

    @property
    def controls(self):
        return [r for r in self.records.values() if not r.is_patient]

    @property
    def patients(self):
        return [r for r in self.records.values() if r.is_patient]


def read_metadata(path):
    records = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read metadata {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != METADATA_COLUMNS:
            raise ValidationError(f"{path}: metadata header must be {','.join(METADATA_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != len(METADATA_COLUMNS):
                raise ValidationError(f"{path}:{lineno}: expected {len(METADATA_COLUMNS)} fields")
            sid, group, gender, age, score = (v.strip() for v in row)
            if not sid:
                raise ValidationError(f"{path}:{lineno}: empty subject id")
            if sid in records:
                raise ValidationError(f"{path}:{lineno}: duplicate id {sid}")
            try:
                age = float(age)
                score = None if score == "" else float(score)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: malformed number") from None
            if score is not None:
                if score != int(score):
                    raise ValidationError(f"{path}:{lineno}: score must be an integer")
                score = int(score)
                if group == "control":
                    log.warning("%s: control has a score; ignored", sid)
                    score = None
            records[sid] = SubjectRecord(sid, group, gender, age, score)
    if not records:
        raise ValidationError(f"{path}: no subjects")
    return records


def ingest_corpus(root, metadata=None):
    root = Path(root)
    records = read_metadata(metadata if metadata is not None else root / "metadata.csv")
    files, gaps = {}, []
    for sid in records:
        files[sid] = {}
        for modality, suffix in MODALITY_SUFFIX.items():
            d = root / sid / modality
            found = sorted(d.glob(f"*{suffix}")) if d.is_dir() else []
            if found:
                files[sid][modality] = found
            else:
                gaps.append((sid, modality, "no files"))
                log.warning("%s: no %s files", sid, modality)
    return Corpus(root, records, files, gaps)


def _split_gait_name(path):
    stem = path.stem
    task, _, foot = stem.rpartition("_")
    return (task, foot) if task else (stem, "")


def subject_features(corpus, sid, tags):
    """Frame sequences for the requested feature sets of one subject.

    Returns (features, failures) where failures maps tag -> reason.
    """
    want = set(tags)
    files = corpus.files.get(sid, {})
    feats, failed = {}, {}

    def attempt(these, fn):
        these = [t for t in these if t in want]
        if not these:
            return
        modality = FEATURE_SETS[these[0]]
        if modality not in files:
            for t in these:
                failed[t] = f"no {modality} files"
            return
        try:
            out = fn(files[modality], these)
        except (ValidationError, NumericalError) as exc:
            for t in these:
                failed[t] = str(exc)
            return
        for t in these:
            if t in out:
                feats[t] = out[t]
            else:
                failed[t] = f"no {t} frames"

    def speech(paths, these):
        return speech_frames([read_wav(p, sid, p.stem) for p in paths])

    def phonological(paths, these):
        return {"phonological": concat([load_phonological(p) for p in paths])}

    def handwriting(paths, these):
        return {"kinematic": handwriting_frames([parse_pen_stream(p, p.stem) for p in paths])}

    def gait(paths, these):
        recs = []
        for p in paths:
            task, foot = _split_gait_name(p)
            recs.append(load_gait_csv(p, foot=foot, task=task))
        out = {}
        if "harmonic" in these:
            out["harmonic"] = harmonic_frames(recs)
        if "nonlinear" in these:
            out["nonlinear"] = nonlinear_frames(recs)
        return out

    attempt(["phonation", "articulation", "prosody"], speech)
    attempt(["phonological"], phonological)
    attempt(["kinematic"], handwriting)
    # harmonic and nonlinear fail independently
    for t in ("harmonic", "nonlinear"):
        attempt([t], gait)
    return feats, failed


def extract_features(corpus, tags=tuple(FEATURE_SETS)):
    """tag -> {subject id -> FrameSequence}; failures are appended to corpus.gaps."""
    for t in tags:
        if t not in FEATURE_SETS:
            raise ValidationError(f"unknown feature set {t!r}")
    table = {t: {} for t in tags}
    for sid in corpus.records:
        feats, failed = subject_features(corpus, sid, tags)
        for t, seq in feats.items():
            table[t][sid] = seq
        for t, reason in sorted(failed.items()):
            log.warning("%s/%s: %s", sid, t, reason)
            corpus.gaps.append((sid, t, reason))
    return table
