from .features import (
    CHANNELS, InertialRecording, harmonic_frames, load_gait_csv, nonlinear_features,
    nonlinear_frames, window_signal,
)
from .harmonic import cwt_scalogram, freeze_index, harmonic_features
from .nonlinear import (
    EmbeddingConfig, correlation_dimension, dfa, embed, hurst, largest_lyapunov,
    lempel_ziv, sample_entropy,
)
