import numpy as np
import pytest

from lorafp.channel import AugmentRanges, ChannelSpec
from lorafp.dataset import synthesize_packet
from lorafp.embedder import EmbedderConfig, RffExtractor, TrainConfig
from lorafp.features import StftConfig
from lorafp.frames import IqFrame
from lorafp.phy import LoraConfig, sample_fleet
from lorafp.pipeline import extract_fingerprints
from lorafp.registry import DEFAULT_K_NEIGHBORS

CFG = LoraConfig()
MODEL = RffExtractor(EmbedderConfig(width_scale=16.0), seed=0)


def _packet(profile, seed):
    spec = ChannelSpec(snr_db=40.0, seed=seed)
    return synthesize_packet(CFG, profile, spec, impair_seed=seed,
                             noise_seed=seed + 500, pad_head=400)


def test_extract_empty_list():
    result = extract_fingerprints([], MODEL, CFG)
    assert len(result) == 0
    assert result.vectors.shape[0] == 0
    assert result.failures == []


def test_extract_same_frame_twice_identical():
    prof = sample_fleet([1, 0, 0, 0], seed=1)[0][0]
    frame = _packet(prof, seed=3)
    result = extract_fingerprints([frame, frame], MODEL, CFG)
    assert np.array_equal(result.vectors[0], result.vectors[1])
    assert np.linalg.norm(result.vectors[0]) == pytest.approx(1.0, abs=1e-6)


def test_extract_collects_failures_without_killing_batch():
    prof = sample_fleet([1, 0, 0, 0], seed=2)[0][0]
    rng = np.random.default_rng(0)
    noise = IqFrame(rng.standard_normal(12000) + 1j * rng.standard_normal(12000),
                    CFG.sample_rate_hz)
    frames = [_packet(prof, 1), noise, _packet(prof, 2)]
    result = extract_fingerprints(frames, MODEL, CFG)
    assert result.ok_indices == [0, 2]
    assert len(result.failures) == 1
    assert result.failures[0][0] == 1
    assert "NoPacketError" in result.failures[0][1]
    assert result.vectors.shape == (2, MODEL.embedding_dim)


def test_paper_sourced_defaults():
    """Constants lifted from the study's stated configuration."""
    stft = StftConfig()
    assert (stft.n_fft, stft.hop) == (256, 128)

    emb = EmbedderConfig()
    assert (emb.stem_filters, emb.stage2_filters) == (32, 64)
    assert emb.embedding_dim == 512
    assert emb.margin_alpha == 0.1

    tr = TrainConfig()
    assert tr.initial_lr == 1e-3
    assert tr.lr_drop_factor == 0.2
    assert tr.lr_patience_epochs == 10
    assert tr.stop_patience_epochs == 30
    assert tr.batch_size == 32
    assert tr.val_fraction == 0.1

    assert DEFAULT_K_NEIGHBORS == 15

    ranges = AugmentRanges()
    assert ranges.delay_spread_s == (5e-9, 300e-9)
    assert ranges.doppler_hz == (0.0, 10.0)
    assert ranges.rician_k == (0.0, 10.0)
    assert ranges.snr_db == (20.0, 80.0)

    cfg = LoraConfig()
    assert cfg.preamble_samples == 8192  # 63 STFT columns at N=256, R=128
