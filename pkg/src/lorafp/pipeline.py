"""End-to-end helpers: received frame -> preprocessed preamble -> feature
matrix -> fingerprint vector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LorafpError
from .features import StftConfig, featurize, DEFAULT_CLIP_DB
from .frontend import DEFAULT_SYNC_THRESHOLD, preprocess
from .phy import LoraConfig


@dataclass
class ExtractionResult:
    """Fingerprints for the frames that survived the front end.

    ``vectors[j]`` belongs to the frame at ``ok_indices[j]``; per-frame
    failures are collected, never fatal to the batch.
    """

    vectors: np.ndarray
    ok_indices: list
    failures: list = field(default_factory=list)  # (index, error message)

    def __len__(self):
        return len(self.ok_indices)


def features_from_frames(frames, lora_cfg: LoraConfig, stft_cfg: StftConfig = StftConfig(),
                         clip_db: float = DEFAULT_CLIP_DB,
                         sync_threshold: float = DEFAULT_SYNC_THRESHOLD,
                         plain_spectrogram: bool = False):
    """Front end + featurization for a batch of frames.

    Returns (features (n_ok, rows, cols) float32, ok_indices, failures).
    """
    feats, ok, failures = [], [], []
    for i, frame in enumerate(frames):
        try:
            pre = preprocess(frame, lora_cfg, threshold=sync_threshold)
            feat = featurize(pre, stft_cfg, clip_db=clip_db,
                             plain_spectrogram=plain_spectrogram)
            feats.append(feat.values_db.astype(np.float32))
            ok.append(i)
        except LorafpError as err:
            failures.append((i, f"{type(err).__name__}: {err}"))
    if feats:
        features = np.stack(feats)
    else:
        features = np.zeros((0, stft_cfg.n_fft, 0), dtype=np.float32)
    return features, ok, failures


def embed_features(model, features, batch: int = 64) -> np.ndarray:
    """Forward a feature stack through the extractor in batches."""
    features = np.asarray(features)
    if features.shape[0] == 0:
        return np.zeros((0, model.embedding_dim))
    out = np.empty((features.shape[0], model.embedding_dim))
    for s in range(0, features.shape[0], batch):
        out[s:s + batch] = model.forward(features[s:s + batch])
    return out


def extract_fingerprints(frames, model, lora_cfg: LoraConfig,
                         stft_cfg: StftConfig = StftConfig(),
                         clip_db: float = DEFAULT_CLIP_DB,
                         sync_threshold: float = DEFAULT_SYNC_THRESHOLD,
                         plain_spectrogram: bool = False) -> ExtractionResult:
    """Full receive chain per frame; errors are collected per frame."""
    features, ok, failures = features_from_frames(
        frames, lora_cfg, stft_cfg, clip_db=clip_db, sync_threshold=sync_threshold,
        plain_spectrogram=plain_spectrogram,
    )
    vectors = embed_features(model, features)
    return ExtractionResult(vectors=vectors, ok_indices=ok, failures=failures)
