import numpy as np
import pytest

from lorafp.channel import add_awgn
from lorafp.errors import ContractError, NoPacketError
from lorafp.frames import IqFrame
from lorafp.frontend import (SyncResult, compensate_cfo, estimate_cfo,
                             extract_preamble, normalize, preprocess,
                             synchronize)
from lorafp.phy import DeviceProfile, LoraConfig, apply_impairments, make_preamble

CFG = LoraConfig()
FS = CFG.sample_rate_hz


def _padded(samples, head, tail=256):
    return np.concatenate([np.zeros(head, complex), samples, np.zeros(tail, complex)])


def test_synchronize_known_offset():
    pre = make_preamble(CFG)
    rx = IqFrame(_padded(pre.samples, 500), FS)
    sync = synchronize(rx, CFG)
    assert sync.start_index == 500
    assert sync.correlation_peak > 0.99


def test_synchronize_pure_noise_raises():
    rng = np.random.default_rng(0)
    rx = IqFrame(rng.standard_normal(12000) + 1j * rng.standard_normal(12000), FS)
    with pytest.raises(NoPacketError):
        synchronize(rx, CFG)


def test_synchronize_monte_carlo_snr20():
    pre = make_preamble(CFG)
    hits = 0
    for seed in range(200):
        rx = IqFrame(_padded(pre.samples, 777), FS)
        rx = add_awgn(rx, 20.0, seed=seed, ref_power=pre.power())
        sync = synchronize(rx, CFG)
        hits += abs(sync.start_index - 777) <= 1
    assert hits >= 190  # >= 95% of 200 trials


def test_extract_preamble_lengths():
    pre = make_preamble(CFG)
    rx = IqFrame(_padded(pre.samples, 300), FS)
    out = extract_preamble(rx, SyncResult(300, 1.0), CFG)
    assert len(out) == 8192
    assert np.array_equal(out.samples, pre.samples)

    exact = IqFrame(pre.samples, FS)
    assert np.array_equal(extract_preamble(exact, SyncResult(0, 1.0), CFG).samples,
                          pre.samples)

    short = IqFrame(pre.samples[:4000], FS)
    with pytest.raises(ContractError):
        extract_preamble(short, SyncResult(0, 1.0), CFG)


def test_estimate_cfo_clean_zero():
    pre = make_preamble(CFG)
    assert abs(estimate_cfo(pre, CFG)) < 0.1


def test_estimate_cfo_injected_exact():
    dev = DeviceProfile(device_id="d", cfo_hz=200.0)
    pre = apply_impairments(make_preamble(CFG), dev, seed=0)
    assert estimate_cfo(pre, CFG) == pytest.approx(200.0, abs=0.5)


def test_estimate_cfo_noisy_monte_carlo():
    dev = DeviceProfile(device_id="d", cfo_hz=200.0)
    pre = apply_impairments(make_preamble(CFG), dev, seed=0)
    hits = 0
    for seed in range(200):
        noisy = add_awgn(pre, 20.0, seed=seed)
        hits += abs(estimate_cfo(noisy, CFG) - 200.0) <= 5.0
    assert hits >= 190


def test_estimate_cfo_unbiased():
    dev = DeviceProfile(device_id="d", cfo_hz=120.0)
    pre = apply_impairments(make_preamble(CFG), dev, seed=0)
    errors = [estimate_cfo(add_awgn(pre, 20.0, seed=s), CFG) - 120.0
              for s in range(500)]
    assert abs(np.mean(errors)) <= 1.0


def test_estimate_cfo_contract_errors():
    with pytest.raises(ContractError):
        estimate_cfo(IqFrame(np.zeros(8192, complex), FS), CFG)
    with pytest.raises(ContractError):
        estimate_cfo(IqFrame(np.ones(1024, complex), FS), CFG)


def test_compensate_cfo_is_exact_inverse():
    pre = make_preamble(CFG)
    n = np.arange(len(pre))
    shifted = pre.with_samples(pre.samples * np.exp(2j * np.pi * 180.0 * n / FS))
    restored = compensate_cfo(shifted, 180.0)
    assert np.max(np.abs(restored.samples - pre.samples)) < 1e-9


def test_compensate_cfo_zero_identity():
    pre = make_preamble(CFG)
    assert np.array_equal(compensate_cfo(pre, 0.0).samples, pre.samples)


def test_compensate_cfo_phase_additivity():
    pre = make_preamble(CFG)
    once = compensate_cfo(pre, 100.0)
    twice = compensate_cfo(compensate_cfo(pre, 50.0), 50.0)
    assert np.max(np.abs(once.samples - twice.samples)) < 1e-12


def test_normalize_unit_rms_and_scale_invariance():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
    frame = IqFrame(x, FS)
    out = normalize(frame)
    assert out.rms() == pytest.approx(1.0, abs=1e-12)
    scaled = normalize(IqFrame(10.0 * x, FS))
    assert np.allclose(scaled.samples, out.samples, atol=1e-12)
    with pytest.raises(ContractError):
        normalize(IqFrame(np.zeros(16, complex), FS))


def test_preprocess_idempotent():
    dev = DeviceProfile(device_id="d", cfo_hz=150.0, iq_gain_imbalance=1.03,
                        dc_offset=0.02 + 0.01j, pa_coeffs=(1.0, 0.05 + 0.02j))
    pre = apply_impairments(make_preamble(CFG), dev, seed=4)
    rx = IqFrame(_padded(pre.samples, 400), FS)
    rx = add_awgn(rx, 30.0, seed=9, ref_power=pre.power())

    once = preprocess(rx, CFG)
    twice = preprocess(once, CFG)
    assert np.max(np.abs(twice.samples - once.samples)) < 1e-6
    assert once.rms() == pytest.approx(1.0, abs=1e-9)


def test_preprocess_removes_device_cfo():
    dev = DeviceProfile(device_id="d", cfo_hz=240.0)
    pre = apply_impairments(make_preamble(CFG), dev, seed=0)
    rx = IqFrame(_padded(pre.samples, 600), FS)
    out = preprocess(rx, CFG)
    assert abs(estimate_cfo(out, CFG)) < 0.01
    assert float(out.meta["cfo_estimate_hz"]) == pytest.approx(240.0, abs=1.0)
