"""LoRa preamble synthesis and transmitter hardware impairments.

The up-chirp sweeps linearly from -bw/2 to +bw/2 over one symbol; a preamble
is a run of identical up-chirps. Hardware impairments are modeled as a
direct-conversion transmit chain applied in this fixed order:

    IQ imbalance -> DC offset -> PA polynomial -> phase noise -> CFO

so that the (constant-envelope) chirp acquires envelope variation before the
amplifier nonlinearity sees it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ImpairmentError
from .frames import IqFrame

_PREAMBLE_CACHE: dict = {}


@dataclass(frozen=True)
class LoraConfig:
    """Radio parameters of the synthesized LoRa signal.

    Defaults (SF7, 125 kHz, 1 MHz sampling, 8 preamble symbols) give a
    1024-sample symbol and an 8192-sample preamble.
    """

    spreading_factor: int = 7
    bandwidth_hz: float = 125e3
    sample_rate_hz: float = 1e6
    n_preamble_symbols: int = 8
    amplitude: float = 1.0

    def __post_init__(self):
        if not 5 <= self.spreading_factor <= 12:
            raise ConfigError(f"spreading_factor {self.spreading_factor} outside [5, 12]")
        if self.bandwidth_hz <= 0 or self.sample_rate_hz <= 0:
            raise ConfigError("bandwidth_hz and sample_rate_hz must be positive")
        ratio = self.sample_rate_hz / self.bandwidth_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(
                f"sample_rate_hz must be an integer multiple of bandwidth_hz "
                f"(got ratio {ratio})"
            )
        if self.n_preamble_symbols < 1:
            raise ConfigError("n_preamble_symbols must be >= 1")
        if self.amplitude <= 0:
            raise ConfigError("amplitude must be positive")

    @property
    def symbol_duration_s(self) -> float:
        return (2 ** self.spreading_factor) / self.bandwidth_hz

    @property
    def samples_per_symbol(self) -> int:
        return int(round(self.sample_rate_hz * self.symbol_duration_s))

    @property
    def preamble_samples(self) -> int:
        return self.n_preamble_symbols * self.samples_per_symbol

    @property
    def sample_interval_s(self) -> float:
        return 1.0 / self.sample_rate_hz


@dataclass(frozen=True)
class DeviceProfile:
    """Per-device transmitter impairment parameters.

    ``pa_coeffs`` are memoryless polynomial coefficients of odd orders
    (1, 3, 5): y = sum_k c_k * x * |x|^(2k).
    """

    device_id: str
    cfo_hz: float = 0.0
    iq_gain_imbalance: float = 1.0
    iq_phase_imbalance_rad: float = 0.0
    dc_offset: complex = 0j
    pa_coeffs: tuple = (1.0 + 0j,)
    phase_noise_std_rad: float = 0.0

    def __post_init__(self):
        if not self.device_id:
            raise ConfigError("device_id must be nonempty")
        coeffs = tuple(complex(c) for c in self.pa_coeffs)
        if len(coeffs) == 0 or len(coeffs) > 3:
            raise ConfigError("pa_coeffs must hold 1 to 3 odd-order coefficients")
        if not 0.5 < abs(coeffs[0]) < 2.0:
            raise ConfigError(f"linear PA gain |{coeffs[0]}| outside (0.5, 2.0)")
        if self.phase_noise_std_rad < 0:
            raise ConfigError("phase_noise_std_rad must be >= 0")
        object.__setattr__(self, "pa_coeffs", coeffs)
        object.__setattr__(self, "dc_offset", complex(self.dc_offset))

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "cfo_hz": self.cfo_hz,
            "iq_gain_imbalance": self.iq_gain_imbalance,
            "iq_phase_imbalance_rad": self.iq_phase_imbalance_rad,
            "dc_offset": [self.dc_offset.real, self.dc_offset.imag],
            "pa_coeffs": [[c.real, c.imag] for c in self.pa_coeffs],
            "phase_noise_std_rad": self.phase_noise_std_rad,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        return cls(
            device_id=d["device_id"],
            cfo_hz=d["cfo_hz"],
            iq_gain_imbalance=d["iq_gain_imbalance"],
            iq_phase_imbalance_rad=d["iq_phase_imbalance_rad"],
            dc_offset=complex(*d["dc_offset"]),
            pa_coeffs=tuple(complex(re, im) for re, im in d["pa_coeffs"]),
            phase_noise_std_rad=d["phase_noise_std_rad"],
        )


IDENTITY_PROFILE = DeviceProfile(device_id="identity")


def make_upchirp(cfg: LoraConfig) -> IqFrame:
    """One baseband up-chirp: A*exp(j*2*pi*(-bw/2 + bw/(2T)*t)*t), t in [0, T)."""
    n = cfg.samples_per_symbol
    t = np.arange(n) / cfg.sample_rate_hz
    bw, T = cfg.bandwidth_hz, cfg.symbol_duration_s
    phase = 2.0 * np.pi * (-bw / 2.0 + (bw / (2.0 * T)) * t) * t
    samples = cfg.amplitude * np.exp(1j * phase)
    return IqFrame(samples, cfg.sample_rate_hz, meta={"stage": "upchirp"})


def make_preamble(cfg: LoraConfig) -> IqFrame:
    """Concatenation of n_preamble_symbols identical up-chirps.

    The chirp phase returns to zero at t = T, so the tiled preamble is
    exactly periodic with the symbol period.
    """
    key = (cfg.spreading_factor, cfg.bandwidth_hz, cfg.sample_rate_hz,
           cfg.n_preamble_symbols, cfg.amplitude)
    cached = _PREAMBLE_CACHE.get(key)
    if cached is None:
        chirp = make_upchirp(cfg)
        cached = np.tile(chirp.samples, cfg.n_preamble_symbols)
        _PREAMBLE_CACHE[key] = cached
    return IqFrame(cached.copy(), cfg.sample_rate_hz, meta={"stage": "preamble"})


def apply_impairments(frame: IqFrame, dev: DeviceProfile, seed: int = 0) -> IqFrame:
    """Distort a frame with one device's transmit-chain impairments.

    Deterministic given (frame, dev, seed); the seed only drives the
    phase-noise random walk.
    """
    x = frame.samples

    # IQ imbalance: I passes, Q path has gain g and quadrature skew phi.
    # Complex-baseband equivalent: mu*x + nu*conj(x).
    g = dev.iq_gain_imbalance
    phi = dev.iq_phase_imbalance_rad
    rot = g * np.exp(1j * phi)
    mu = 0.5 * (1.0 + rot)
    nu = 0.5 * (1.0 - rot)
    y = mu * x + nu * np.conj(x)

    y = y + dev.dc_offset

    # Memoryless PA polynomial over odd orders 1, 3, 5. Overflow surfaces
    # as the finiteness check below, not as a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        mag2 = np.abs(y) ** 2
        acc = np.zeros_like(y)
        power = np.ones_like(mag2)
        for c in dev.pa_coeffs:
            acc = acc + c * y * power
            power = power * mag2
        y = acc

    if dev.phase_noise_std_rad > 0.0:
        rng = np.random.default_rng(seed)
        walk = np.cumsum(dev.phase_noise_std_rad * rng.standard_normal(y.size))
        y = y * np.exp(1j * walk)

    if dev.cfo_hz != 0.0:
        n = np.arange(y.size)
        y = y * np.exp(2j * np.pi * dev.cfo_hz * n / frame.sample_rate_hz)

    if not np.all(np.isfinite(y.real)) or not np.all(np.isfinite(y.imag)):
        raise ImpairmentError(f"impairments for {dev.device_id} produced non-finite samples")

    return frame.with_samples(y, device_id=dev.device_id, impair_seed=seed)


@dataclass(frozen=True)
class ImpairmentCluster:
    """Per-"manufacturer" parameter distribution; (mean, std) pairs.

    Cluster means mimic distinct chipset families; the stds are the
    device-to-device spread within a family. These are simulator tuning
    knobs, not measured hardware values.
    """

    name: str
    cfo_hz: tuple = (0.0, 80.0)
    iq_gain_imbalance: tuple = (1.0, 0.02)
    iq_phase_imbalance_rad: tuple = (0.0, 0.01)
    dc_offset_mag: tuple = (0.02, 0.008)
    pa_cubic_mag: tuple = (0.08, 0.03)
    pa_quintic_mag: tuple = (0.02, 0.008)
    phase_noise_std_rad: tuple = (3e-4, 1e-4)


DEFAULT_CLUSTERS = (
    ImpairmentCluster(
        name="m0", cfo_hz=(-120.0, 60.0), iq_gain_imbalance=(1.030, 0.018),
        iq_phase_imbalance_rad=(0.025, 0.010), dc_offset_mag=(0.022, 0.008),
        pa_cubic_mag=(0.065, 0.022), pa_quintic_mag=(0.016, 0.006),
        phase_noise_std_rad=(3e-4, 1e-4),
    ),
    ImpairmentCluster(
        name="m1", cfo_hz=(90.0, 60.0), iq_gain_imbalance=(0.968, 0.018),
        iq_phase_imbalance_rad=(-0.030, 0.010), dc_offset_mag=(0.038, 0.010),
        pa_cubic_mag=(0.105, 0.030), pa_quintic_mag=(0.024, 0.008),
        phase_noise_std_rad=(5e-4, 1.5e-4),
    ),
    ImpairmentCluster(
        name="m2", cfo_hz=(0.0, 80.0), iq_gain_imbalance=(1.055, 0.020),
        iq_phase_imbalance_rad=(0.045, 0.012), dc_offset_mag=(0.014, 0.005),
        pa_cubic_mag=(0.042, 0.016), pa_quintic_mag=(0.010, 0.004),
        phase_noise_std_rad=(2e-4, 8e-5),
    ),
    ImpairmentCluster(
        name="m3", cfo_hz=(-40.0, 70.0), iq_gain_imbalance=(0.940, 0.020),
        iq_phase_imbalance_rad=(-0.055, 0.014), dc_offset_mag=(0.052, 0.012),
        pa_cubic_mag=(0.135, 0.035), pa_quintic_mag=(0.032, 0.010),
        phase_noise_std_rad=(8e-4, 2e-4),
    ),
)

# CFO beyond fs/(2*L_symbol) would wrap the preamble autocorrelation
# estimator; the fleet stays well inside.
_CFO_CLIP_HZ = 450.0


def _draw(rng, mean_std):
    mean, std = mean_std
    return mean + std * rng.standard_normal()


def sample_fleet(counts, seed: int, clusters=DEFAULT_CLUSTERS, id_prefix="dev"):
    """Draw a deterministic fleet of device profiles from manufacturer clusters.

    ``counts[i]`` devices are drawn from ``clusters[i]``. Returns a list of
    (DeviceProfile, cluster_name) in device-id order.
    """
    if len(counts) > len(clusters):
        raise ConfigError(f"got {len(counts)} counts for {len(clusters)} clusters")
    if any(c < 0 for c in counts):
        raise ConfigError("cluster counts must be >= 0")
    rng = np.random.default_rng(seed)
    fleet = []
    idx = 0
    for cluster, count in zip(clusters, counts):
        for _ in range(count):
            cfo = float(np.clip(_draw(rng, cluster.cfo_hz), -_CFO_CLIP_HZ, _CFO_CLIP_HZ))
            gain = max(0.5, _draw(rng, cluster.iq_gain_imbalance))
            phase = _draw(rng, cluster.iq_phase_imbalance_rad)
            dc_mag = max(0.0, _draw(rng, cluster.dc_offset_mag))
            dc_phase = rng.uniform(0.0, 2.0 * np.pi)
            c3_mag = max(0.0, _draw(rng, cluster.pa_cubic_mag))
            c3_phase = rng.uniform(0.0, 2.0 * np.pi)
            c5_mag = max(0.0, _draw(rng, cluster.pa_quintic_mag))
            c5_phase = rng.uniform(0.0, 2.0 * np.pi)
            pn = max(0.0, _draw(rng, cluster.phase_noise_std_rad))
            profile = DeviceProfile(
                device_id=f"{id_prefix}{idx:03d}",
                cfo_hz=cfo,
                iq_gain_imbalance=gain,
                iq_phase_imbalance_rad=phase,
                dc_offset=dc_mag * np.exp(1j * dc_phase),
                pa_coeffs=(
                    1.0 + 0j,
                    c3_mag * np.exp(1j * c3_phase),
                    c5_mag * np.exp(1j * c5_phase),
                ),
                phase_noise_std_rad=pn,
            )
            fleet.append((profile, cluster.name))
            idx += 1
    return fleet
