from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class FrameSequence:
    """Time-ordered T x D matrix of feature vectors.

    ``modality`` and ``tag`` identify where the frames came from
    (e.g. ``("gait", "harmonic")``).
    """

    data: np.ndarray
    frame_period: float = 0.0
    modality: str = ""
    tag: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"frames must be a non-empty T x D matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("frames contain non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    def __len__(self):
        return self.data.shape[0]


def as_matrix(frames, allow_empty=False):
    """Return the frame matrix of a FrameSequence or array-like as float64 2-D."""
    if isinstance(frames, FrameSequence):
        return frames.data
    x = np.asarray(frames, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValidationError(f"expected a 2-D frame matrix, got {x.ndim}-D")
    if x.shape[0] == 0 and not allow_empty:
        raise ValidationError("empty frame matrix")
    if not np.all(np.isfinite(x)):
        raise ValidationError("frames contain non-finite entries")
    return x


def concat(seqs, modality="", tag=""):
    """Pool several sequences of the same dimension into one."""
    seqs = [s for s in seqs if s is not None]
    if not seqs:
        raise ValidationError("nothing to concatenate")
    dims = {s.dim for s in seqs}
    if len(dims) != 1:
        raise ValidationError(f"dimension mismatch while pooling: {sorted(dims)}")
    return FrameSequence(np.vstack([s.data for s in seqs]), seqs[0].frame_period,
                         modality or seqs[0].modality, tag or seqs[0].tag)
