import numpy as np
import pytest

from lorafp.errors import ConfigError, ImpairmentError
from lorafp.phy import (DEFAULT_CLUSTERS, DeviceProfile, LoraConfig,
                        apply_impairments, make_preamble, make_upchirp,
                        sample_fleet)

CFG = LoraConfig()  # SF7, 125 kHz, 1 MHz, 8 symbols


def test_symbol_geometry():
    assert CFG.symbol_duration_s == pytest.approx(2**7 / 125e3)
    assert CFG.samples_per_symbol == 1024
    assert CFG.preamble_samples == 8192


def test_upchirp_value_at_t0_is_amplitude():
    for amp in (1.0, 0.5, 3.0):
        chirp = make_upchirp(LoraConfig(amplitude=amp))
        assert chirp.samples[0] == pytest.approx(amp + 0j)


def test_upchirp_instantaneous_frequency_zero_at_midpoint():
    chirp = make_upchirp(CFG)
    phase = np.unwrap(np.angle(chirp.samples))
    mid = CFG.samples_per_symbol // 2
    # Centered difference is exact for the quadratic chirp phase.
    f_mid = (phase[mid + 1] - phase[mid - 1]) / (2 * 2 * np.pi / CFG.sample_rate_hz)
    assert abs(f_mid) < 1.0


def test_upchirp_sweeps_full_bandwidth():
    chirp = make_upchirp(CFG)
    phase = np.unwrap(np.angle(chirp.samples))
    f_inst = np.diff(phase) / (2 * np.pi / CFG.sample_rate_hz)
    # Forward differences sit half a frequency step inside the sweep ends.
    step = CFG.bandwidth_hz / 2**CFG.spreading_factor
    assert f_inst[0] == pytest.approx(-CFG.bandwidth_hz / 2, abs=step)
    assert f_inst[-1] == pytest.approx(CFG.bandwidth_hz / 2, abs=2 * step)


def test_upchirp_frequency_sweep_is_linear():
    chirp = make_upchirp(CFG)
    phase = np.unwrap(np.angle(chirp.samples))
    diff2 = np.diff(phase, 2)
    assert np.ptp(diff2) < 1e-9


def test_upchirp_constant_envelope():
    chirp = make_upchirp(LoraConfig(amplitude=2.5))
    assert np.max(np.abs(np.abs(chirp.samples) - 2.5)) < 1e-12 * 2.5


def test_preamble_single_symbol_equals_upchirp():
    cfg = LoraConfig(n_preamble_symbols=1)
    assert np.array_equal(make_preamble(cfg).samples, make_upchirp(cfg).samples)


def test_preamble_length_and_periodicity():
    pre = make_preamble(CFG)
    assert len(pre) == 8192
    L = CFG.samples_per_symbol
    assert np.array_equal(pre.samples[:-L], pre.samples[L:])


def test_config_validation():
    with pytest.raises(ConfigError):
        LoraConfig(spreading_factor=4)
    with pytest.raises(ConfigError):
        LoraConfig(spreading_factor=13)
    with pytest.raises(ConfigError):
        LoraConfig(sample_rate_hz=1.0e6, bandwidth_hz=3.0e5)  # non-integer ratio
    with pytest.raises(ConfigError):
        LoraConfig(amplitude=0.0)


IDENTITY = DeviceProfile(device_id="id")


def test_identity_profile_is_fixed_point():
    pre = make_preamble(CFG)
    out = apply_impairments(pre, IDENTITY, seed=0)
    assert np.array_equal(out.samples, pre.samples)


def test_pa_polynomial_on_unit_envelope():
    dev = DeviceProfile(device_id="pa", pa_coeffs=(1.0, -0.1))
    pre = make_preamble(CFG)
    out = apply_impairments(pre, dev, seed=0)
    assert np.allclose(np.abs(out.samples), 0.9, atol=1e-12)


def test_cfo_phase_rotation():
    dev = DeviceProfile(device_id="cfo", cfo_hz=1000.0)
    pre = make_preamble(CFG)
    out = apply_impairments(pre, dev, seed=0)
    # 2*pi*1e-3*500 = pi at sample 500.
    rel = np.angle(out.samples[500] / pre.samples[500])
    assert abs(abs(rel) - np.pi) < 1e-9


def test_impairments_deterministic_and_seed_sensitive():
    dev = DeviceProfile(device_id="pn", phase_noise_std_rad=1e-3)
    pre = make_preamble(CFG)
    a = apply_impairments(pre, dev, seed=11)
    b = apply_impairments(pre, dev, seed=11)
    c = apply_impairments(pre, dev, seed=12)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_divergent_pa_raises_impairment_error():
    dev = DeviceProfile(device_id="hot", pa_coeffs=(1.0, 1e308))
    pre = make_preamble(LoraConfig(amplitude=2.0))  # 1e308 * 2 * |2|^2 overflows
    with pytest.raises(ImpairmentError):
        apply_impairments(pre, dev, seed=0)


def test_profile_validation():
    with pytest.raises(ConfigError):
        DeviceProfile(device_id="bad", pa_coeffs=(0.2,))  # linear gain too small
    with pytest.raises(ConfigError):
        DeviceProfile(device_id="bad", pa_coeffs=(2.5,))
    with pytest.raises(ConfigError):
        DeviceProfile(device_id="bad", phase_noise_std_rad=-1.0)
    with pytest.raises(ConfigError):
        DeviceProfile(device_id="")


def test_sample_fleet_counts_clusters_and_determinism():
    fleet = sample_fleet([5, 5, 5, 5], seed=3)
    assert len(fleet) == 20
    names = [c.name for c in DEFAULT_CLUSTERS]
    labels = [cluster for _, cluster in fleet]
    for name in names:
        assert labels.count(name) == 5
    ids = [p.device_id for p, _ in fleet]
    assert len(set(ids)) == 20

    again = sample_fleet([5, 5, 5, 5], seed=3)
    for (p1, c1), (p2, c2) in zip(fleet, again):
        assert p1 == p2 and c1 == c2
    other = sample_fleet([5, 5, 5, 5], seed=4)
    assert any(p1 != p2 for (p1, _), (p2, _) in zip(fleet, other))


def test_sample_fleet_rejects_bad_counts():
    with pytest.raises(ConfigError):
        sample_fleet([1, 2, 3, 4, 5], seed=0)
    with pytest.raises(ConfigError):
        sample_fleet([-1, 0, 0, 0], seed=0)


def test_fleet_profiles_roundtrip_dict():
    fleet = sample_fleet([2, 1, 0, 0], seed=9)
    for profile, _ in fleet:
        assert DeviceProfile.from_dict(profile.to_dict()) == profile
