"""Experiment orchestration behind the CLI subcommands.

Every function takes a plain config dict (parsed from the experiment's JSON
file), resolves defaults, performs the work, and returns
(resolved_config, result_summary). File outputs are deterministic for a
fixed config and seed.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .channel import AugmentRanges
from .dataset import (DatasetReader, ScenarioSpec, augment_dataset,
                      generate_dataset, scenario_preset)
from .embedder import (EmbedderConfig, TrainConfig, load_model, save_weights,
                       train, weight_file_hash)
from .errors import ConfigError, VersionMismatchError
from .identify import (calibrate_threshold, classify, detect_scores, evaluate,
                       save_report)
from .phy import DEFAULT_CLUSTERS, DeviceProfile, LoraConfig, sample_fleet
from .pipeline import embed_features, features_from_frames
from .registry import Registry

DEFAULT_ROLES = {
    "train": [3, 3, 2, 2],
    "legit_unseen": [2, 1, 1, 1],
    "rogue": [1, 1, 1, 0],
}


def _lora_config(cfg: dict) -> LoraConfig:
    return LoraConfig(**cfg.get("lora_config", {}))


# -- fleet ----------------------------------------------------------------

def gen_fleet(config: dict, seed: int, out_path) -> tuple:
    """Draw a fleet and write fleet.json with cluster and role labels."""
    roles = config.get("roles", DEFAULT_ROLES)
    n_clusters = len(DEFAULT_CLUSTERS)
    for role, counts in roles.items():
        if len(counts) > n_clusters or any(c < 0 for c in counts):
            raise ConfigError(f"bad counts for role {role!r}: {counts}")
    per_cluster = [0] * n_clusters
    for counts in roles.values():
        for i, c in enumerate(counts):
            per_cluster[i] += c

    fleet = sample_fleet(per_cluster, seed)
    by_cluster = {}
    for profile, cluster in fleet:
        by_cluster.setdefault(cluster, []).append(profile)

    devices = []
    for ci, cluster in enumerate(c.name for c in DEFAULT_CLUSTERS):
        pool = by_cluster.get(cluster, [])
        pos = 0
        for role, counts in roles.items():
            take = counts[ci] if ci < len(counts) else 0
            for profile in pool[pos:pos + take]:
                devices.append({"profile": profile.to_dict(), "cluster": cluster,
                                "role": role})
            pos += take
    devices.sort(key=lambda d: d["profile"]["device_id"])

    resolved = {"roles": roles, "seed": seed}
    doc = {"format_version": 1, "seed": seed, "roles": roles, "devices": devices}
    Path(out_path).write_text(json.dumps(doc, indent=1))
    summary = {"n_devices": len(devices),
               "per_role": {r: sum(c for c in counts) for r, counts in roles.items()}}
    return resolved, summary


def load_fleet(path) -> list:
    doc = json.loads(Path(path).read_text())
    return doc["devices"]


def fleet_profiles(path, role: str | None = None, device_ids=None) -> list:
    out = []
    for dev in load_fleet(path):
        if role is not None and dev["role"] != role:
            continue
        profile = DeviceProfile.from_dict(dev["profile"])
        if device_ids is not None and profile.device_id not in device_ids:
            continue
        out.append(profile)
    return out


# -- datasets ---------------------------------------------------------------

def gen_dataset(config: dict, seed: int, out_dir) -> tuple:
    lora = _lora_config(config)
    scenario_cfg = config.get("scenario", {})
    preset = scenario_cfg.get("preset", "clean")
    n_packets = scenario_cfg.get("n_packets_per_device", 100)
    profiles = fleet_profiles(config["fleet"], role=config.get("role"),
                              device_ids=config.get("devices"))
    if not profiles:
        raise ConfigError("no devices selected from the fleet")
    scenario = scenario_preset(preset, n_packets, seed=seed,
                               device_ids=[p.device_id for p in profiles])
    reader = generate_dataset(out_dir, lora, profiles, scenario,
                              dataset_id=config.get("dataset_id"))
    resolved = {"fleet": str(config["fleet"]), "role": config.get("role"),
                "scenario": scenario.to_dict(), "seed": seed,
                "lora_config": reader.manifest["lora_config"]}
    return resolved, {"n_entries": len(reader), "devices": reader.device_ids()}


def augment_cmd(config: dict, seed: int, out_dir) -> tuple:
    ranges = (AugmentRanges.from_dict(config["ranges"])
              if "ranges" in config else AugmentRanges())
    factor = config.get("factor", 2)
    reader = augment_dataset(config["source"], out_dir, ranges, factor, seed,
                             allow_nonclean=config.get("allow_nonclean", False))
    resolved = {"source": str(config["source"]), "factor": factor,
                "ranges": ranges.to_dict(), "seed": seed,
                "allow_nonclean": config.get("allow_nonclean", False)}
    return resolved, {"n_entries": len(reader)}


def _dataset_features(paths, lora: LoraConfig, plain_spectrogram=False):
    """Features + labels pooled over datasets; front-end failures dropped."""
    feats, labels, n_failed = [], [], 0
    for path in paths:
        reader = DatasetReader(path)
        frames = reader.frames()
        f, ok, failures = features_from_frames(
            frames, lora, plain_spectrogram=plain_spectrogram)
        n_failed += len(failures)
        if f.shape[0]:
            feats.append(f)
            labels.extend(reader.label(i) for i in ok)
    if not feats:
        raise ConfigError("no packets survived the front end")
    return np.concatenate(feats), np.array(labels), n_failed


# -- training ---------------------------------------------------------------

def train_cmd(config: dict, seed: int, out_path) -> tuple:
    lora = _lora_config(config)
    plain = config.get("plain_spectrogram", False)
    features, labels, n_failed = _dataset_features(config["datasets"], lora,
                                                   plain_spectrogram=plain)
    ecfg = EmbedderConfig(input_shape=features.shape[1:3],
                          **config.get("embedder", {}))
    tcfg = TrainConfig(seed=seed, **config.get("train", {}))
    model, history = train(features, labels, tcfg, ecfg)
    fingerprint = save_weights(out_path, model, extra_meta={
        "datasets": ",".join(str(p) for p in config["datasets"]),
        "plain_spectrogram": plain,
    })
    hist_path = Path(str(out_path) + ".history.jsonl")
    hist_path.write_text("\n".join(json.dumps(h) for h in history) + "\n")
    resolved = {"datasets": [str(p) for p in config["datasets"]],
                "embedder": ecfg.to_dict(), "train": tcfg.to_dict(),
                "plain_spectrogram": plain, "seed": seed,
                "lora_config": config.get("lora_config", {})}
    summary = {"weights_sha256": fingerprint, "epochs": len(history),
               "best_val_loss": min(h["val_loss"] for h in history),
               "n_train_packets": int(features.shape[0]), "n_failed": n_failed}
    return resolved, summary


def _extract_dataset(path, model, lora: LoraConfig, plain_spectrogram=False):
    reader = DatasetReader(path)
    features, ok, failures = features_from_frames(
        reader.frames(), lora, plain_spectrogram=plain_spectrogram)
    vectors = embed_features(model, features)
    labels = np.array([reader.label(i) for i in ok])
    return vectors, labels, failures


def _check_version(weights_path, registry: Registry, force: bool):
    expected = weight_file_hash(weights_path)
    actual = registry.extractor_fingerprint
    if actual is not None and actual != expected and not force:
        raise VersionMismatchError(
            f"registry built with extractor {actual[:12]}... but weight file "
            f"hashes to {expected[:12]}... (pass force to override)"
        )


# -- enrollment and identification -------------------------------------------

def enroll_cmd(config: dict, seed: int, out_path) -> tuple:
    lora = _lora_config(config)
    model = load_model(config["weights"])
    fingerprint = weight_file_hash(config["weights"])
    plain = config.get("plain_spectrogram", False)
    vectors, labels, failures = _extract_dataset(config["dataset"], model, lora,
                                                 plain_spectrogram=plain)
    reg = Registry(k_neighbors=config.get("k_neighbors", 15))
    wanted = config.get("devices")
    for dev in sorted(set(labels)):
        if wanted is not None and dev not in wanted:
            continue
        reg.enroll(dev, vectors[labels == dev], fingerprint)

    threshold = None
    if "calibrate" in config:
        cal = config["calibrate"]
        cal_vec, _, _ = _extract_dataset(cal["dataset"], model, lora,
                                         plain_spectrogram=plain)
        threshold = calibrate_threshold(reg, cal_vec, cal.get("target_tpr", 0.99))
        reg.rogue_threshold = threshold
    sha = reg.save(out_path)

    # Enrollment-quality diagnostic (reported, never enforced): RMS distance
    # of each device's templates to their centroid.
    dispersion = {}
    for dev in reg.device_ids:
        vecs = reg.records[dev].vectors.astype(np.float64)
        centroid = vecs.mean(axis=0)
        dispersion[dev] = float(np.sqrt(np.mean(np.sum((vecs - centroid) ** 2, axis=1))))

    resolved = {"dataset": str(config["dataset"]), "weights": str(config["weights"]),
                "k_neighbors": reg.k_neighbors, "devices": wanted, "seed": seed,
                "calibrate": config.get("calibrate"), "plain_spectrogram": plain}
    summary = {"registry_sha256": sha, "devices": reg.device_ids,
               "n_vectors": reg.n_vectors, "rogue_threshold": threshold,
               "template_dispersion": dispersion, "n_failed": len(failures)}
    return resolved, summary


def revoke_cmd(config: dict, seed: int, out_path) -> tuple:
    reg = Registry.load(config["registry"])
    reg.revoke(config["device_id"])
    sha = reg.save(out_path or config["registry"])
    resolved = {"registry": str(config["registry"]),
                "device_id": config["device_id"], "seed": seed}
    return resolved, {"registry_sha256": sha, "devices": reg.device_ids}


def identify_cmd(config: dict, seed: int, out_path) -> tuple:
    lora = _lora_config(config)
    model = load_model(config["weights"])
    reg = Registry.load(config["registry"])
    _check_version(config["weights"], reg, config.get("force", False))
    threshold = config.get("threshold", reg.rogue_threshold)
    if threshold is None:
        raise ConfigError(
            "no rogue threshold: calibrate at enrollment or pass \"threshold\""
        )
    plain = config.get("plain_spectrogram", False)
    vectors, labels, failures = _extract_dataset(config["dataset"], model, lora,
                                                 plain_spectrogram=plain)
    scores = detect_scores(reg, vectors)
    lines = ["index,device_id,d_avg,is_legitimate,predicted_id"]
    n_legit = 0
    for i, (vec, lab, score) in enumerate(zip(vectors, labels, scores)):
        legit = bool(score <= threshold)
        n_legit += legit
        pred = classify(reg, vec).predicted_id if legit else ""
        lines.append(f"{i},{lab},{score:.6f},{int(legit)},{pred}")
    Path(out_path).write_text("\n".join(lines) + "\n")
    resolved = {"dataset": str(config["dataset"]), "weights": str(config["weights"]),
                "registry": str(config["registry"]), "threshold": threshold,
                "seed": seed, "plain_spectrogram": plain}
    summary = {"n_queries": int(vectors.shape[0]), "n_accepted": int(n_legit),
               "n_failed": len(failures)}
    return resolved, summary


def evaluate_cmd(config: dict, seed: int, out_dir) -> tuple:
    lora = _lora_config(config)
    model = load_model(config["weights"])
    reg = Registry.load(config["registry"])
    _check_version(config["weights"], reg, config.get("force", False))
    plain = config.get("plain_spectrogram", False)
    legit_vec, legit_lab, fail_l = _extract_dataset(config["legit_dataset"], model,
                                                    lora, plain_spectrogram=plain)
    rogue_vec = None
    fail_r = []
    if config.get("rogue_dataset"):
        rogue_vec, _, fail_r = _extract_dataset(config["rogue_dataset"], model, lora,
                                                plain_spectrogram=plain)
    report = evaluate(reg, legit_vec, legit_lab, rogue_vec)
    save_report(report, out_dir)
    meta = {
        "weights_sha256": weight_file_hash(config["weights"]),
        "registry_sha256": hashlib.sha256(
            Path(config["registry"]).read_bytes()).hexdigest(),
        "registry_extractor_sha256": reg.extractor_fingerprint,
        "n_failed_legit": len(fail_l), "n_failed_rogue": len(fail_r),
    }
    (Path(out_dir) / "provenance.json").write_text(json.dumps(meta, indent=2))
    resolved = {"legit_dataset": str(config["legit_dataset"]),
                "rogue_dataset": config.get("rogue_dataset"),
                "weights": str(config["weights"]),
                "registry": str(config["registry"]), "seed": seed,
                "plain_spectrogram": plain}
    summary = {"overall_accuracy": report.overall_accuracy, "auc": report.auc,
               **meta}
    return resolved, summary
