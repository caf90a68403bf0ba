"""STFT, dB spectrogram, and the channel-independent spectrogram.

The channel-independent construction divides each STFT column by the
previous one: a channel frequency response that is (nearly) common to
adjacent columns cancels in the ratio while multiplicative transmitter
distortion survives. Outside the chirp's instantaneous band the ratio is
leakage over leakage and swings wildly, so both operands have their
magnitudes floored at a fraction of their column peak (no-support bins
then divide to ~0 dB on any channel) and the dB output is clipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .frames import IqFrame

DB_FLOOR_EPS = 1e-12
DEFAULT_CLIP_DB = 40.0
SUPPORT_FLOOR_REL = 1e-2


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 256
    hop: int = 128
    window: str = "rectangular"

    def __post_init__(self):
        if not 0 < self.hop <= self.n_fft:
            raise ConfigError("hop must satisfy 0 < hop <= n_fft")
        if self.window not in ("rectangular", "hann"):
            raise ConfigError(f"unknown window {self.window!r}")

    def window_values(self) -> np.ndarray:
        if self.window == "hann":
            return np.hanning(self.n_fft)
        return np.ones(self.n_fft)


@dataclass
class Spectrogram:
    """dB-scale magnitude-squared STFT, rows fftshift-centered."""

    values_db: np.ndarray

    @property
    def freq_bins(self) -> int:
        return self.values_db.shape[0]

    @property
    def time_cols(self) -> int:
        return self.values_db.shape[1]


@dataclass
class ChannIndSpectrogram:
    """Channel-independent spectrogram: one column fewer than its source."""

    values_db: np.ndarray

    @property
    def freq_bins(self) -> int:
        return self.values_db.shape[0]

    @property
    def time_cols(self) -> int:
        return self.values_db.shape[1]


def n_columns(n_samples: int, cfg: StftConfig) -> int:
    return (n_samples - cfg.n_fft) // cfg.hop + 1


def stft(frame, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex STFT matrix, shape (n_fft, M), frequency rows centered.

    Column m is the windowed DFT of samples [m*hop, m*hop + n_fft); the
    rows are fftshift-ordered so the two band halves sit symmetrically
    around the middle row.
    """
    s = frame.samples if isinstance(frame, IqFrame) else np.asarray(frame, dtype=np.complex128)
    N, R = cfg.n_fft, cfg.hop
    if s.size < N:
        raise ContractError(f"frame of {s.size} samples is shorter than n_fft={N}")
    m = n_columns(s.size, cfg)
    stride = s.strides[0]
    segments = np.lib.stride_tricks.as_strided(s, (m, N), (R * stride, stride))
    spec = np.fft.fft(segments * cfg.window_values(), axis=1)
    return np.fft.fftshift(spec.T, axes=0)


def spectrogram_db(S: np.ndarray, floor_eps: float = DB_FLOOR_EPS) -> Spectrogram:
    """10*log10(|S|^2 + eps); the floor keeps empty bins finite."""
    return Spectrogram(values_db=10.0 * np.log10(np.abs(S) ** 2 + floor_eps))


def _floor_columns(M: np.ndarray, floor_rel: float) -> np.ndarray:
    """Raise each bin's magnitude to at least floor_rel of its column peak,
    keeping the phase; exact-zero bins become the (real) floor value."""
    mag = np.abs(M)
    floor = np.broadcast_to(floor_rel * mag.max(axis=0, keepdims=True), mag.shape)
    out = M.copy()
    low = (mag < floor) & (mag > 0)
    out[low] *= floor[low] / mag[low]
    out[mag == 0] = floor[mag == 0]
    return out


def adjacent_column_ratio(S: np.ndarray, floor_rel: float = 0.0) -> np.ndarray:
    """Elementwise column ratio S[:, m+1] / S[:, m], shape (N, M-1).

    With floor_rel > 0 both operands are column-magnitude floored first, so
    bins without signal support divide to magnitude ~1 instead of junk.
    floor_rel = 0 is the raw ratio (exact reconstruction identity).
    """
    if S.ndim != 2 or S.shape[1] < 2:
        raise ContractError("need an STFT matrix with at least 2 columns")
    if floor_rel > 0.0:
        return _floor_columns(S[:, 1:], floor_rel) / _floor_columns(S[:, :-1], floor_rel)
    return S[:, 1:] / S[:, :-1]


def channel_independent(S: np.ndarray, clip_db: float = DEFAULT_CLIP_DB,
                        floor_rel: float = SUPPORT_FLOOR_REL) -> ChannIndSpectrogram:
    """dB magnitude of the adjacent-column ratio, clipped to +-clip_db."""
    q = adjacent_column_ratio(S, floor_rel=floor_rel)
    q_db = 10.0 * np.log10(np.abs(q) ** 2 + DB_FLOOR_EPS)
    return ChannIndSpectrogram(values_db=np.clip(q_db, -clip_db, clip_db))


def featurize(pre: IqFrame, cfg: StftConfig = StftConfig(),
              clip_db: float = DEFAULT_CLIP_DB, plain_spectrogram: bool = False):
    """Preprocessed preamble -> model input matrix.

    Default output is the channel-independent spectrogram (256 x 62 with
    the default radio and STFT parameters); plain_spectrogram=True returns
    the ordinary dB spectrogram (256 x 63) for baseline comparisons.
    """
    S = stft(pre, cfg)
    if plain_spectrogram:
        return spectrogram_db(S)
    return channel_independent(S, clip_db=clip_db)
