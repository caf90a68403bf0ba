"""Time-varying multipath/Doppler/Rician fading, AWGN, and the augmentation channel.

Taps sit on the receiver sample grid (1 us at 1 MHz), average tap powers
follow a normalized exponential power delay profile, and each tap varies in
time as an independent Jakes-spectrum process synthesized from a sum of
equal-strength sinusoids. Tap 0 optionally carries a Rician line-of-sight
component; all later taps are Rayleigh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DegeneratePdpError
from .frames import IqFrame

MAX_PATH_INDEX_CAP = 8
_PDP_TRUNCATION = 1e-3
# Grid density of the decimated fading synthesis, in points per Doppler cycle.
_FADING_POINTS_PER_CYCLE = 512


@dataclass(frozen=True)
class ChannelSpec:
    """One channel draw: delay spread, Doppler, Rician K, SNR, and its seed.

    ``max_path_index=None`` selects the last tap automatically: the smallest
    index whose pre-normalization PDP value falls below 1e-3 of tap 0,
    capped at 8. ``snr_db=inf`` means no noise is added.
    """

    rms_delay_spread_s: float = 0.0
    max_doppler_hz: float = 0.0
    rician_k: float = math.inf
    snr_db: float = math.inf
    max_path_index: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rms_delay_spread_s < 0 or self.max_doppler_hz < 0:
            raise ConfigError("delay spread and Doppler must be >= 0")
        if self.rician_k < 0:
            raise ConfigError("rician_k must be >= 0")
        if self.max_path_index is not None and self.max_path_index < 0:
            raise ConfigError("max_path_index must be >= 0")
        if self.rms_delay_spread_s == 0.0 and self.max_path_index not in (None, 0):
            # Zero delay spread forces a flat channel.
            object.__setattr__(self, "max_path_index", 0)

    def resolve_max_path_index(self, ts: float) -> int:
        if self.rms_delay_spread_s == 0.0:
            return 0
        if self.max_path_index is not None:
            return self.max_path_index
        return default_max_path_index(self.rms_delay_spread_s, ts)

    def to_dict(self) -> dict:
        return {
            "rms_delay_spread_s": self.rms_delay_spread_s,
            "max_doppler_hz": self.max_doppler_hz,
            "rician_k": self.rician_k if math.isfinite(self.rician_k) else "inf",
            "snr_db": self.snr_db if math.isfinite(self.snr_db) else "inf",
            "max_path_index": self.max_path_index,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSpec":
        k = d["rician_k"]
        snr = d["snr_db"]
        return cls(
            rms_delay_spread_s=d["rms_delay_spread_s"],
            max_doppler_hz=d["max_doppler_hz"],
            rician_k=math.inf if k == "inf" else float(k),
            snr_db=math.inf if snr == "inf" else float(snr),
            max_path_index=d.get("max_path_index"),
            seed=int(d["seed"]),
        )


@dataclass
class ChannelRealization:
    """Per-sample time-varying FIR taps: gains (n_samples, n_taps)."""

    tap_gains: np.ndarray
    tap_delays_samples: list

    @property
    def n_taps(self) -> int:
        return self.tap_gains.shape[1]


def default_max_path_index(tau_d: float, ts: float) -> int:
    """Smallest p with exp(-p*ts/tau_d) < 1e-3, capped at MAX_PATH_INDEX_CAP."""
    if tau_d <= 0:
        return 0
    p = math.floor(math.log(1.0 / _PDP_TRUNCATION) * tau_d / ts) + 1
    return min(p, MAX_PATH_INDEX_CAP)


def exponential_pdp(spec: ChannelSpec, ts: float) -> np.ndarray:
    """Normalized exponential power delay profile on the ts tap grid.

    P(p) proportional to (1/tau_d) * exp(-p*ts/tau_d) for p = 0..p_max,
    rescaled to sum to one.
    """
    tau_d = spec.rms_delay_spread_s
    if tau_d <= 0.0:
        raise DegeneratePdpError("tau_d = 0: use a flat (single-tap) channel")
    p_max = spec.resolve_max_path_index(ts)
    p = np.arange(p_max + 1, dtype=np.float64)
    pdp = (1.0 / tau_d) * np.exp(-p * ts / tau_d)
    return pdp / pdp.sum()


def jakes_fading(n_samples: int, fd_hz: float, fs_hz: float, seed: int,
                 n_sinusoids: int = 32) -> np.ndarray:
    """Unit-mean-power fading with a Jakes Doppler spectrum band-limited to fd.

    Sum of equal-strength sinusoids at arrival angles spread over the circle
    with i.i.d. random phases, synthesized on a coarse time grid (>= 512
    points per Doppler cycle) and linearly interpolated to the sample grid.
    The block is rescaled to exactly unit mean power so that channel
    application conserves energy in expectation. fd = 0 degenerates to a
    constant unit-magnitude gain with random phase.
    """
    if n_samples <= 0:
        raise ContractError("n_samples must be positive")
    if not 0.0 <= fd_hz < fs_hz / 2.0:
        raise ConfigError(f"fd_hz {fd_hz} outside [0, fs/2)")
    rng = np.random.default_rng(seed)
    if fd_hz == 0.0:
        theta = rng.uniform(0.0, 2.0 * np.pi)
        return np.full(n_samples, np.exp(1j * theta))

    duration = (n_samples - 1) / fs_hz
    cycles = fd_hz * duration
    n_grid = int(min(n_samples, max(4, math.ceil(cycles * _FADING_POINTS_PER_CYCLE) + 4)))
    t_grid = np.linspace(0.0, duration, n_grid)

    rotation = rng.uniform(0.0, 2.0 * np.pi / n_sinusoids)
    angles = 2.0 * np.pi * (np.arange(n_sinusoids) + 0.5) / n_sinusoids + rotation
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_sinusoids)
    omega = 2.0 * np.pi * fd_hz * np.cos(angles)

    osc = np.exp(1j * (omega[:, None] * t_grid[None, :] + phases[:, None]))
    h_grid = osc.sum(axis=0) / np.sqrt(n_sinusoids)

    if n_grid == n_samples:
        h = h_grid
    else:
        t = np.arange(n_samples) / fs_hz
        h = np.interp(t, t_grid, h_grid.real) + 1j * np.interp(t, t_grid, h_grid.imag)

    h = h / np.sqrt(np.mean(np.abs(h) ** 2))
    return h


def realize_channel(spec: ChannelSpec, n_samples: int, fs_hz: float) -> ChannelRealization:
    """Draw one time-varying channel: PDP-weighted taps with Jakes fading.

    Each diffuse tap is a frozen complex-Gaussian level (the Rayleigh
    realization-to-realization severity, unit mean power) multiplied by a
    unit-power Jakes process (the in-packet time variation; constant when
    f_d = 0). Tap 0 adds a zero-phase LOS component of power K/(K+1) so a
    K->inf flat channel is the identity; taps 1..p_max are pure Rayleigh.
    Deterministic given spec.seed.
    """
    ts = 1.0 / fs_hz
    p_max = spec.resolve_max_path_index(ts)
    if spec.rms_delay_spread_s > 0.0:
        pdp = exponential_pdp(spec, ts)
    else:
        pdp = np.ones(1)

    master = np.random.default_rng(spec.seed)
    tap_seeds = master.integers(0, 2**63 - 1, size=p_max + 1)
    levels = (master.standard_normal(p_max + 1)
              + 1j * master.standard_normal(p_max + 1)) / np.sqrt(2.0)

    k = spec.rician_k
    if math.isinf(k):
        los_w, diffuse_w = 1.0, 0.0
    else:
        los_w = math.sqrt(k / (k + 1.0))
        diffuse_w = math.sqrt(1.0 / (k + 1.0))

    gains = np.empty((n_samples, p_max + 1), dtype=np.complex128)
    for p in range(p_max + 1):
        if p == 0:
            diffuse = (
                levels[0] * jakes_fading(n_samples, spec.max_doppler_hz, fs_hz,
                                         int(tap_seeds[0]))
                if diffuse_w > 0.0 else 0.0
            )
            tap = los_w + diffuse_w * diffuse
        else:
            tap = levels[p] * jakes_fading(n_samples, spec.max_doppler_hz, fs_hz,
                                           int(tap_seeds[p]))
        gains[:, p] = np.sqrt(pdp[p]) * tap
    return ChannelRealization(tap_gains=gains, tap_delays_samples=list(range(p_max + 1)))


def apply_channel(frame: IqFrame, ch: ChannelRealization) -> IqFrame:
    """Time-varying FIR: y[n] = sum_p g[n,p] * s[n - delay_p], zero initial state."""
    s = frame.samples
    if ch.tap_gains.shape[0] != s.size:
        raise ContractError(
            f"channel realization length {ch.tap_gains.shape[0]} != frame length {s.size}"
        )
    y = np.zeros_like(s)
    for p, delay in enumerate(ch.tap_delays_samples):
        if delay == 0:
            y += ch.tap_gains[:, p] * s
        elif delay < s.size:
            y[delay:] += ch.tap_gains[delay:, p] * s[:-delay]
    return frame.with_samples(y, stage="channel")


def add_awgn(frame: IqFrame, snr_db: float, seed: int, ref_power: float | None = None) -> IqFrame:
    """Complex circular white Gaussian noise at the given SNR; inf = no noise.

    ``ref_power`` overrides the signal-power reference (useful when the
    frame carries zero padding around the packet).
    """
    if math.isinf(snr_db):
        return frame.with_samples(frame.samples.copy(), stage="awgn", snr_db="inf")
    p_sig = frame.power() if ref_power is None else float(ref_power)
    if p_sig <= 0.0:
        raise ContractError("cannot set an SNR on a zero-power frame")
    p_noise = p_sig / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = np.sqrt(p_noise / 2.0) * (
        rng.standard_normal(frame.samples.size)
        + 1j * rng.standard_normal(frame.samples.size)
    )
    return frame.with_samples(frame.samples + noise, stage="awgn", snr_db=snr_db,
                              noise_seed=seed)


@dataclass(frozen=True)
class AugmentRanges:
    """Uniform draw ranges for the augmentation channel (lo == hi pins a value)."""

    delay_spread_s: tuple = (5e-9, 300e-9)
    doppler_hz: tuple = (0.0, 10.0)
    rician_k: tuple = (0.0, 10.0)
    snr_db: tuple = (20.0, 80.0)

    def to_dict(self) -> dict:
        def enc(pair):
            return [v if math.isfinite(v) else "inf" for v in pair]
        return {
            "delay_spread_s": enc(self.delay_spread_s),
            "doppler_hz": enc(self.doppler_hz),
            "rician_k": enc(self.rician_k),
            "snr_db": enc(self.snr_db),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentRanges":
        def dec(pair):
            return tuple(math.inf if v == "inf" else float(v) for v in pair)
        return cls(
            delay_spread_s=dec(d["delay_spread_s"]),
            doppler_hz=dec(d["doppler_hz"]),
            rician_k=dec(d["rician_k"]),
            snr_db=dec(d["snr_db"]),
        )


def _draw_uniform(rng, lo_hi):
    lo, hi = lo_hi
    if lo == hi:
        return lo
    return float(rng.uniform(lo, hi))


def _draw_spec_from(rng, ranges: AugmentRanges) -> ChannelSpec:
    # Doppler drawn last: two range tables differing only in Doppler then
    # yield identical delay/K/SNR/seed sequences from the same generator,
    # which keeps f_d ablations controlled.
    tau = _draw_uniform(rng, ranges.delay_spread_s)
    k = _draw_uniform(rng, ranges.rician_k)
    snr = _draw_uniform(rng, ranges.snr_db)
    seed = int(rng.integers(0, 2**63 - 1))
    fd = _draw_uniform(rng, ranges.doppler_hz)
    return ChannelSpec(rms_delay_spread_s=tau, max_doppler_hz=fd, rician_k=k,
                       snr_db=snr, seed=seed)


def draw_channel_spec(ranges: AugmentRanges, seed: int) -> ChannelSpec:
    """Draw one augmentation ChannelSpec; its fading seed derives from `seed`."""
    return _draw_spec_from(np.random.default_rng(seed), ranges)


def augment(frame: IqFrame, ranges: AugmentRanges, seed: int) -> IqFrame:
    """Push one clean frame through a randomly drawn fading channel plus AWGN."""
    rng = np.random.default_rng(seed)
    spec = _draw_spec_from(rng, ranges)
    noise_seed = int(rng.integers(0, 2**63 - 1))
    ch = realize_channel(spec, len(frame), frame.sample_rate_hz)
    out = apply_channel(frame, ch)
    out = add_awgn(out, spec.snr_db, noise_seed)
    out.meta.update({
        "aug_seed": str(seed),
        "aug_tau_d_s": repr(spec.rms_delay_spread_s),
        "aug_fd_hz": repr(spec.max_doppler_hz),
        "aug_rician_k": repr(spec.rician_k),
        "aug_snr_db": repr(spec.snr_db),
    })
    return out
