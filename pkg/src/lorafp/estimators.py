"""Scikit-learn style estimators wrapping the fingerprinting pipeline.

Three composable stages:

* :class:`ChannelIndependentFeaturizer` - stateless transformer from
  received IQ frames to channel-independent spectrogram stacks.
* :class:`TripletEmbedder` - fit trains the residual CNN with triplet
  loss; transform maps feature stacks to unit-norm fingerprint vectors.
* :class:`OpenSetKnnIdentifier` - fit enrolls labeled fingerprints;
  predict majority-votes the K nearest templates, and decision_function
  scores legitimacy for open-set rejection. Enrolling or revoking a
  device never retrains anything.

All three follow the get_params/set_params contract, so they clone and
compose with sklearn pipelines and model selection tools.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .embedder import EmbedderConfig, TrainConfig, train
from .errors import ContractError
from .features import DEFAULT_CLIP_DB, StftConfig
from .frontend import DEFAULT_SYNC_THRESHOLD
from .identify import calibrate_threshold, classify_batch, detect_scores
from .phy import LoraConfig
from .pipeline import embed_features, features_from_frames
from .registry import Registry
from .validation import check_spectrogram_batch, check_unit_norm


class ChannelIndependentFeaturizer(TransformerMixin, BaseEstimator):
    """IqFrame list -> (n, n_fft, M-1) channel-independent spectrogram stack.

    Stateless; fit only validates. Frames that fail synchronization raise,
    since silently dropping rows would break X/y alignment - use
    lorafp.pipeline.features_from_frames for the tolerant variant.
    """

    def __init__(self, lora_config=None, n_fft=256, hop=128, window="rectangular",
                 clip_db=DEFAULT_CLIP_DB, sync_threshold=DEFAULT_SYNC_THRESHOLD,
                 plain_spectrogram=False):
        self.lora_config = lora_config
        self.n_fft = n_fft
        self.hop = hop
        self.window = window
        self.clip_db = clip_db
        self.sync_threshold = sync_threshold
        self.plain_spectrogram = plain_spectrogram

    def _configs(self):
        lora = self.lora_config or LoraConfig()
        stft_cfg = StftConfig(n_fft=self.n_fft, hop=self.hop, window=self.window)
        return lora, stft_cfg

    def fit(self, X, y=None):
        self._configs()
        return self

    def transform(self, X):
        lora, stft_cfg = self._configs()
        feats, ok, failures = features_from_frames(
            X, lora, stft_cfg, clip_db=self.clip_db,
            sync_threshold=self.sync_threshold,
            plain_spectrogram=self.plain_spectrogram,
        )
        if failures:
            idx, msg = failures[0]
            raise ContractError(f"frame {idx} failed the front end: {msg}")
        return feats


class TripletEmbedder(TransformerMixin, BaseEstimator):
    """Deep metric learning RFF extractor with the sklearn fit/transform API."""

    def __init__(self, embedding_dim=512, stem_filters=32, stage2_filters=64,
                 width_scale=1.0, margin_alpha=0.1, initial_lr=1e-3,
                 lr_drop_factor=0.2, lr_patience_epochs=10, stop_patience_epochs=30,
                 batch_size=32, val_fraction=0.1, max_epochs=500,
                 semi_hard_mining=False, seed=0):
        self.embedding_dim = embedding_dim
        self.stem_filters = stem_filters
        self.stage2_filters = stage2_filters
        self.width_scale = width_scale
        self.margin_alpha = margin_alpha
        self.initial_lr = initial_lr
        self.lr_drop_factor = lr_drop_factor
        self.lr_patience_epochs = lr_patience_epochs
        self.stop_patience_epochs = stop_patience_epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.max_epochs = max_epochs
        self.semi_hard_mining = semi_hard_mining
        self.seed = seed

    def fit(self, X, y):
        X = check_spectrogram_batch(X)
        y = np.asarray(y)
        ecfg = EmbedderConfig(
            input_shape=X.shape[1:3],
            stem_filters=self.stem_filters,
            stage2_filters=self.stage2_filters,
            embedding_dim=self.embedding_dim,
            margin_alpha=self.margin_alpha,
            width_scale=self.width_scale,
        )
        tcfg = TrainConfig(
            initial_lr=self.initial_lr,
            lr_drop_factor=self.lr_drop_factor,
            lr_patience_epochs=self.lr_patience_epochs,
            stop_patience_epochs=self.stop_patience_epochs,
            batch_size=self.batch_size,
            val_fraction=self.val_fraction,
            max_epochs=self.max_epochs,
            semi_hard_mining=self.semi_hard_mining,
            seed=self.seed,
        )
        self.model_, self.history_ = train(X, y, tcfg, ecfg)
        return self

    def transform(self, X):
        if not hasattr(self, "model_"):
            raise ContractError("TripletEmbedder is not fitted")
        X = check_spectrogram_batch(X)
        return embed_features(self.model_, X)


class OpenSetKnnIdentifier(ClassifierMixin, BaseEstimator):
    """Majority-vote k-NN over enrolled fingerprints with rogue rejection.

    fit() is enrollment: it memorizes unit-norm template vectors per label.
    decision_function returns (threshold - D_avg): positive means the query
    looks legitimate. Devices can join and leave a fitted identifier via
    enroll()/revoke() - there is deliberately no retraining path.
    """

    def __init__(self, k_neighbors=15, rogue_threshold=None,
                 extractor_fingerprint="unversioned"):
        self.k_neighbors = k_neighbors
        self.rogue_threshold = rogue_threshold
        self.extractor_fingerprint = extractor_fingerprint

    def fit(self, X, y):
        X = check_unit_norm(X, name="fingerprints")
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise ContractError("labels misaligned with fingerprints")
        self.registry_ = Registry(k_neighbors=self.k_neighbors,
                                  rogue_threshold=self.rogue_threshold)
        for dev in sorted(set(str(lab) for lab in y)):
            self.registry_.enroll(dev, X[y == dev], self.extractor_fingerprint)
        self.classes_ = np.array(self.registry_.device_ids)
        return self

    def _check_fitted(self):
        if not hasattr(self, "registry_"):
            raise ContractError("OpenSetKnnIdentifier is not fitted")

    def enroll(self, device_id, vectors) -> "OpenSetKnnIdentifier":
        self._check_fitted()
        self.registry_.enroll(str(device_id), vectors, self.extractor_fingerprint)
        self.classes_ = np.array(self.registry_.device_ids)
        return self

    def revoke(self, device_id) -> "OpenSetKnnIdentifier":
        self._check_fitted()
        self.registry_.revoke(str(device_id))
        self.classes_ = np.array(self.registry_.device_ids)
        return self

    def predict(self, X):
        self._check_fitted()
        return classify_batch(self.registry_, X)

    def score_samples(self, X):
        """Negated mean K-nearest distance; higher means more legitimate."""
        self._check_fitted()
        return -detect_scores(self.registry_, X)

    def decision_function(self, X):
        self._check_fitted()
        thr = self.registry_.rogue_threshold
        if thr is None:
            raise ContractError("no rogue threshold set; call calibrate() first")
        return thr + self.score_samples(X)

    def predict_legitimate(self, X):
        return self.decision_function(X) >= 0.0

    def calibrate(self, X_holdout, target_tpr=0.99) -> float:
        """Set the rogue threshold from held-out legitimate fingerprints."""
        self._check_fitted()
        thr = calibrate_threshold(self.registry_, X_holdout, target_tpr)
        self.registry_.rogue_threshold = thr
        return thr
