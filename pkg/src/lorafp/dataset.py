"""On-disk datasets: one contiguous IQ blob plus a JSON manifest.

IQ samples are stored as interleaved little-endian float32 (I, Q) pairs;
every packet is an offset/length window into the blob with its device id,
channel draw and seeds recorded, so any byte of any result can be traced
back to how it was synthesized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .channel import (AugmentRanges, ChannelSpec, _draw_spec_from, add_awgn,
                      apply_channel, realize_channel)
from .errors import ConfigError, ContractError, IntegrityError
from .frames import IqFrame
from .phy import DeviceProfile, LoraConfig, apply_impairments, make_preamble

FORMAT_VERSION = 1
CARRIER_HZ = 868.1e6
TX_INTERVAL_S = 0.3  # recorded for fidelity; the simulator has no drift model
_PAD_HEAD_RANGE = (200, 1200)
_PAD_TAIL = 256

# Doppler of a 2 m/s walk at the 868 MHz carrier.
MOBILE_DOPPLER_HZ = 5.8
OBJECT_MOVING_DOPPLER_HZ = 2.0
DOPPLER_SWEEP_HZ = (0.0, 10.0, 30.0, 50.0, 100.0)


@dataclass(frozen=True)
class ScenarioSpec:
    """Named channel-condition recipe for one dataset."""

    name: str
    n_packets_per_device: int
    ranges: AugmentRanges
    seed: int = 0
    clean: bool = False
    tau_fixed_per_dataset: bool = False
    device_ids: tuple | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_packets_per_device": self.n_packets_per_device,
            "ranges": self.ranges.to_dict(),
            "seed": self.seed,
            "clean": self.clean,
            "tau_fixed_per_dataset": self.tau_fixed_per_dataset,
            "device_ids": list(self.device_ids) if self.device_ids else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(
            name=d["name"],
            n_packets_per_device=d["n_packets_per_device"],
            ranges=AugmentRanges.from_dict(d["ranges"]),
            seed=d.get("seed", 0),
            clean=d.get("clean", False),
            tau_fixed_per_dataset=d.get("tau_fixed_per_dataset", False),
            device_ids=tuple(d["device_ids"]) if d.get("device_ids") else None,
        )


def scenario_preset(name: str, n_packets_per_device: int, seed: int = 0,
                    device_ids=None, **overrides) -> ScenarioSpec:
    """Presets for the scenario taxonomy: clean, stationary, object-moving,
    mobile, and doppler-{0,10,30,50,100}."""
    table_one = dict(delay_spread_s=(5e-9, 300e-9), rician_k=(0.0, 10.0),
                     snr_db=(20.0, 80.0))
    if name == "clean":
        ranges = AugmentRanges(delay_spread_s=(0.0, 0.0), doppler_hz=(0.0, 0.0),
                               rician_k=(math.inf, math.inf), snr_db=(50.0, 80.0))
        spec = ScenarioSpec(name, n_packets_per_device, ranges, seed=seed, clean=True)
    elif name == "stationary":
        ranges = AugmentRanges(doppler_hz=(0.0, 0.0), **table_one)
        spec = ScenarioSpec(name, n_packets_per_device, ranges, seed=seed,
                            tau_fixed_per_dataset=True)
    elif name == "object-moving":
        fd = OBJECT_MOVING_DOPPLER_HZ
        ranges = AugmentRanges(doppler_hz=(fd, fd), **table_one)
        spec = ScenarioSpec(name, n_packets_per_device, ranges, seed=seed,
                            tau_fixed_per_dataset=True)
    elif name == "mobile":
        fd = MOBILE_DOPPLER_HZ
        ranges = AugmentRanges(doppler_hz=(fd, fd), **table_one)
        spec = ScenarioSpec(name, n_packets_per_device, ranges, seed=seed)
    elif name.startswith("doppler-"):
        fd = float(name.split("-", 1)[1])
        if fd not in DOPPLER_SWEEP_HZ:
            raise ConfigError(f"doppler preset must use one of {DOPPLER_SWEEP_HZ}")
        ranges = AugmentRanges(doppler_hz=(fd, fd), **table_one)
        spec = ScenarioSpec(name, n_packets_per_device, ranges, seed=seed)
    else:
        raise ConfigError(f"unknown scenario preset {name!r}")
    if device_ids is not None:
        spec = replace(spec, device_ids=tuple(device_ids))
    if overrides:
        spec = replace(spec, **overrides)
    return spec


def synthesize_packet(cfg: LoraConfig, profile: DeviceProfile, chan_spec: ChannelSpec,
                      impair_seed: int, noise_seed: int, pad_head: int = 0,
                      pad_tail: int = _PAD_TAIL) -> IqFrame:
    """One received packet: impaired preamble through a channel, padded,
    with AWGN referenced to the in-packet signal power."""
    clean = make_preamble(cfg)
    tx = apply_impairments(clean, profile, seed=impair_seed)
    ch = realize_channel(chan_spec, len(tx), cfg.sample_rate_hz)
    rx = apply_channel(tx, ch)
    padded = np.concatenate([
        np.zeros(pad_head, dtype=np.complex128),
        rx.samples,
        np.zeros(pad_tail, dtype=np.complex128),
    ])
    frame = IqFrame(padded, cfg.sample_rate_hz, meta=dict(rx.meta))
    frame = add_awgn(frame, chan_spec.snr_db, noise_seed, ref_power=rx.power())
    frame.meta.update({"device_id": profile.device_id, "pad_head": str(pad_head)})
    return frame


def packet_seeds(scenario_seed: int, device_index: int, packet_index: int):
    """Deterministic per-packet seed bundle."""
    ss = np.random.SeedSequence(entropy=(scenario_seed, device_index, packet_index))
    vals = ss.generate_state(4, dtype=np.uint64)
    return tuple(int(v % (2**63 - 1)) for v in vals)


class DatasetWriter:
    def __init__(self, out_dir, lora_cfg: LoraConfig, scenario: dict, clean: bool,
                 dataset_id: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._blob = open(self.out_dir / "iq.bin", "wb")
        self._offset = 0
        self.entries = []
        self.header = {
            "format_version": FORMAT_VERSION,
            "dataset_id": dataset_id,
            "created_utc": datetime.now(timezone.utc).isoformat(),
            "lora_config": {
                "spreading_factor": lora_cfg.spreading_factor,
                "bandwidth_hz": lora_cfg.bandwidth_hz,
                "sample_rate_hz": lora_cfg.sample_rate_hz,
                "n_preamble_symbols": lora_cfg.n_preamble_symbols,
                "amplitude": lora_cfg.amplitude,
            },
            "scenario": scenario,
            "clean": clean,
            "carrier_hz": CARRIER_HZ,
            "tx_interval_s": TX_INTERVAL_S,
        }

    def append(self, samples: np.ndarray, entry: dict):
        iq = np.empty(2 * samples.size, dtype="<f4")
        iq[0::2] = samples.real
        iq[1::2] = samples.imag
        self._blob.write(iq.tobytes())
        entry = dict(entry)
        entry["index"] = len(self.entries)
        entry["offset_samples"] = self._offset
        entry["n_samples"] = int(samples.size)
        self.entries.append(entry)
        self._offset += samples.size

    def close(self):
        self._blob.close()
        manifest = dict(self.header)
        manifest["entries"] = self.entries
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))


class DatasetReader:
    def __init__(self, path):
        self.dir = Path(path)
        manifest_path = self.dir / "manifest.json"
        if not manifest_path.exists():
            raise IntegrityError(f"{path}: no manifest.json")
        self.manifest = json.loads(manifest_path.read_text())
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise IntegrityError(f"{path}: unsupported dataset format")
        self.entries = self.manifest["entries"]
        self._blob = np.fromfile(self.dir / "iq.bin", dtype="<f4")
        total = sum(e["n_samples"] for e in self.entries)
        if self._blob.size != 2 * total:
            raise IntegrityError(
                f"{path}: iq.bin holds {self._blob.size // 2} samples, "
                f"manifest expects {total}"
            )

    def __len__(self):
        return len(self.entries)

    @property
    def lora_config(self) -> LoraConfig:
        return LoraConfig(**self.manifest["lora_config"])

    @property
    def sample_rate_hz(self) -> float:
        return self.manifest["lora_config"]["sample_rate_hz"]

    def device_ids(self) -> list:
        return sorted({e["device_id"] for e in self.entries})

    def label(self, i: int) -> str:
        return self.entries[i]["device_id"]

    def frame(self, i: int) -> IqFrame:
        e = self.entries[i]
        start = 2 * e["offset_samples"]
        stop = start + 2 * e["n_samples"]
        raw = self._blob[start:stop].astype(np.float64)
        samples = raw[0::2] + 1j * raw[1::2]
        return IqFrame(samples, self.sample_rate_hz,
                       meta={"device_id": e["device_id"], "index": str(i)})

    def frames(self):
        return [self.frame(i) for i in range(len(self))]

    def labels(self) -> np.ndarray:
        return np.array([e["device_id"] for e in self.entries])


def generate_dataset(out_dir, lora_cfg: LoraConfig, fleet, scenario: ScenarioSpec,
                     dataset_id: str | None = None) -> DatasetReader:
    """Synthesize one packet dataset for the fleet subset under a scenario.

    ``fleet`` is a list of DeviceProfile; the scenario's device_ids filter
    selects a subset by id. Byte-identical re-runs for equal inputs.
    """
    profiles = [p for p in fleet
                if scenario.device_ids is None or p.device_id in scenario.device_ids]
    if not profiles:
        raise ConfigError("scenario selects no devices from the fleet")
    profiles = sorted(profiles, key=lambda p: p.device_id)

    ranges = scenario.ranges
    if scenario.tau_fixed_per_dataset:
        rng_loc = np.random.default_rng(np.random.SeedSequence((scenario.seed, 0xA11)))
        lo, hi = ranges.delay_spread_s
        tau = lo if lo == hi else float(rng_loc.uniform(lo, hi))
        ranges = replace(ranges, delay_spread_s=(tau, tau))

    writer = DatasetWriter(out_dir, lora_cfg, scenario.to_dict(), scenario.clean,
                           dataset_id or scenario.name)
    for d_idx, profile in enumerate(profiles):
        for p_idx in range(scenario.n_packets_per_device):
            impair_seed, draw_seed, noise_seed, pad_seed = packet_seeds(
                scenario.seed, d_idx, p_idx)
            chan_spec = _draw_spec_from(np.random.default_rng(draw_seed), ranges)
            pad_head = int(np.random.default_rng(pad_seed).integers(*_PAD_HEAD_RANGE))
            frame = synthesize_packet(lora_cfg, profile, chan_spec,
                                      impair_seed, noise_seed, pad_head=pad_head)
            writer.append(frame.samples, {
                "device_id": profile.device_id,
                "channel": chan_spec.to_dict(),
                "impair_seed": impair_seed,
                "noise_seed": noise_seed,
                "pad_head": pad_head,
                "origin": "synth",
            })
    writer.close()
    return DatasetReader(out_dir)


def augment_dataset(src, out_dir, ranges: AugmentRanges, factor: int, seed: int,
                    allow_nonclean: bool = False) -> DatasetReader:
    """Originals plus (factor - 1) channel-augmented copies of each packet."""
    reader = src if isinstance(src, DatasetReader) else DatasetReader(src)
    if factor < 1:
        raise ConfigError("replication factor must be >= 1")
    if not reader.manifest.get("clean", False) and not allow_nonclean:
        raise ContractError(
            "source dataset is not flagged clean; augmenting a channel-distorted "
            "dataset compounds channels (pass allow_nonclean to override)"
        )
    scenario = dict(reader.manifest["scenario"])
    scenario["augmented_from"] = reader.manifest["dataset_id"]
    scenario["augment_ranges"] = ranges.to_dict()
    scenario["augment_factor"] = factor
    writer = DatasetWriter(out_dir, reader.lora_config, scenario, clean=False,
                           dataset_id=f"{reader.manifest['dataset_id']}-aug{factor}")
    fs = reader.sample_rate_hz
    for i in range(len(reader)):
        entry = dict(reader.entries[i])
        frame = reader.frame(i)
        entry["origin"] = "copy"
        entry["source_index"] = i
        writer.append(frame.samples, entry)
        for rep in range(factor - 1):
            aug_seed, chan_seed, noise_seed, _ = packet_seeds(seed, i, rep)
            rng = np.random.default_rng(chan_seed)
            chan_spec = _draw_spec_from(rng, ranges)
            ch = realize_channel(chan_spec, len(frame), fs)
            out = apply_channel(frame, ch)
            out = add_awgn(out, chan_spec.snr_db, noise_seed)
            writer.append(out.samples, {
                "device_id": entry["device_id"],
                "channel": chan_spec.to_dict(),
                "impair_seed": entry.get("impair_seed"),
                "noise_seed": noise_seed,
                "pad_head": entry.get("pad_head"),
                "origin": "augment",
                "source_index": i,
            })
    writer.close()
    return DatasetReader(out_dir)
