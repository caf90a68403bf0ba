"""Open-set identification over the fingerprint registry.

Rogue detection scores a query by the mean Euclidean distance to its K
nearest stored templates across the whole database and compares it to the
threshold; classification majority-votes the owners of the K nearest
templates. Ties are broken by the smaller summed distance among the tied
devices, then lexicographically, so results never depend on enrollment
order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ContractError
from .registry import Registry
from .validation import check_vectors


@dataclass
class DetectionResult:
    d_avg: float
    is_legitimate: bool
    threshold_used: float


@dataclass
class ClassificationResult:
    predicted_id: str
    vote_counts: dict
    neighbor_distances: list


@dataclass
class EvalReport:
    device_ids: list
    confusion: np.ndarray  # rows: true device, cols: predicted device
    overall_accuracy: float
    roc_points: list = field(default_factory=list)  # (fpr, tpr, threshold)
    auc: float | None = None

    def to_dict(self) -> dict:
        return {
            "device_ids": self.device_ids,
            "confusion": self.confusion.tolist(),
            "overall_accuracy": self.overall_accuracy,
            "roc_points": [list(p) for p in self.roc_points],
            "auc": self.auc,
        }


def _distances_to_templates(reg: Registry, queries: np.ndarray):
    # Direct subtraction keeps identical vectors at exactly zero distance
    # (the q^2 + t^2 - 2qt shortcut loses ~1e-8 to cancellation); chunked
    # so the (n_queries, n_templates, dim) intermediate stays small.
    templates, owners = reg.template_matrix()
    q = check_vectors(queries, dim=templates.shape[1], name="queries")
    out = np.empty((q.shape[0], templates.shape[0]))
    for s in range(0, q.shape[0], 64):
        diff = q[s:s + 64, None, :] - templates[None, :, :]
        out[s:s + 64] = np.sqrt(np.sum(diff * diff, axis=2))
    return out, owners


def detect_scores(reg: Registry, queries) -> np.ndarray:
    """Mean distance to the K nearest templates, for each query row."""
    dists, _ = _distances_to_templates(reg, np.atleast_2d(queries))
    k = reg.k_neighbors
    if dists.shape[1] < k:
        raise ContractError(
            f"registry holds {dists.shape[1]} templates, need at least K={k}"
        )
    # Averaged in ascending order: bit-identical to a full-sort reference.
    part = np.sort(np.partition(dists, k - 1, axis=1)[:, :k], axis=1)
    return part.mean(axis=1)


def detect(reg: Registry, v, threshold: float | None = None) -> DetectionResult:
    """Distance-based rogue detection: legitimate iff D_avg <= threshold."""
    thr = reg.rogue_threshold if threshold is None else threshold
    if thr is None:
        raise ContractError("no rogue threshold set; calibrate one first")
    d_avg = float(detect_scores(reg, v)[0])
    return DetectionResult(d_avg=d_avg, is_legitimate=bool(d_avg <= thr),
                           threshold_used=float(thr))


def classify(reg: Registry, v) -> ClassificationResult:
    """Majority vote over the owners of the K nearest templates."""
    dists, owners = _distances_to_templates(reg, np.atleast_2d(v))
    d = dists[0]
    k = min(reg.k_neighbors, d.size)
    order = np.argsort(d, kind="stable")[:k]
    near_owner = owners[order]
    near_dist = d[order]

    votes = {}
    sums = {}
    for owner, dist in zip(near_owner, near_dist):
        votes[owner] = votes.get(owner, 0) + 1
        sums[owner] = sums.get(owner, 0.0) + float(dist)
    # Most votes, then smaller summed distance, then lexicographic id.
    best = min(votes, key=lambda dev: (-votes[dev], sums[dev], dev))
    return ClassificationResult(
        predicted_id=str(best),
        vote_counts=votes,
        neighbor_distances=[float(x) for x in near_dist],
    )


def classify_batch(reg: Registry, queries) -> np.ndarray:
    return np.array([classify(reg, q).predicted_id for q in np.atleast_2d(queries)])


def calibrate_threshold(reg: Registry, held_out_legit, target_tpr: float) -> float:
    """Smallest threshold accepting at least target_tpr of held-out legit vectors."""
    if not 0.0 <= target_tpr <= 1.0:
        raise CalibrationError(f"target TPR {target_tpr} outside [0, 1]")
    if target_tpr == 0.0:
        return 0.0
    scores = detect_scores(reg, held_out_legit)
    n_needed = int(np.ceil(target_tpr * scores.size))
    return float(np.sort(scores)[n_needed - 1])


def roc_curve(legit_scores, rogue_scores):
    """Empirical ROC over every observed score; returns (points, auc).

    Positive class is "legitimate", accepted when score <= threshold, so
    TPR and FPR both grow monotonically with the threshold.
    """
    legit = np.asarray(legit_scores, dtype=float)
    rogue = np.asarray(rogue_scores, dtype=float)
    if legit.size == 0 or rogue.size == 0:
        raise ContractError("ROC needs both legitimate and rogue scores")
    thresholds = np.unique(np.concatenate([legit, rogue]))
    points = [(0.0, 0.0, -np.inf)]
    for thr in thresholds:
        tpr = float(np.mean(legit <= thr))
        fpr = float(np.mean(rogue <= thr))
        points.append((fpr, tpr, float(thr)))
    fprs = np.array([p[0] for p in points])
    tprs = np.array([p[1] for p in points])
    auc = float(np.trapezoid(tprs, fprs))
    return points, auc


def evaluate(reg: Registry, legit_vectors, legit_labels, rogue_vectors=None) -> EvalReport:
    """Classification metrics on legitimate queries, plus ROC/AUC when rogue
    queries are supplied."""
    legit_vectors = check_vectors(legit_vectors, name="legit queries")
    legit_labels = np.asarray(legit_labels)
    if legit_labels.shape[0] != legit_vectors.shape[0]:
        raise ContractError("labels misaligned with query vectors")
    device_ids = reg.device_ids
    unknown = set(legit_labels) - set(device_ids)
    if unknown:
        raise ContractError(f"labels {sorted(unknown)} are not enrolled")

    index = {dev: i for i, dev in enumerate(device_ids)}
    confusion = np.zeros((len(device_ids), len(device_ids)), dtype=np.int64)
    predicted = classify_batch(reg, legit_vectors)
    for true, pred in zip(legit_labels, predicted):
        confusion[index[true], index[pred]] += 1
    accuracy = float(np.mean(predicted == legit_labels))

    report = EvalReport(device_ids=device_ids, confusion=confusion,
                        overall_accuracy=accuracy)
    if rogue_vectors is not None and len(rogue_vectors) > 0:
        legit_scores = detect_scores(reg, legit_vectors)
        rogue_scores = detect_scores(reg, rogue_vectors)
        report.roc_points, report.auc = roc_curve(legit_scores, rogue_scores)
    return report


def save_report(report: EvalReport, out_dir) -> None:
    """report.json plus flat confusion.csv / roc.csv tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))

    with open(out / "confusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + report.device_ids)
        for dev, row in zip(report.device_ids, report.confusion):
            writer.writerow([dev] + [int(x) for x in row])

    if report.roc_points:
        with open(out / "roc.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr", "threshold"])
            for fpr, tpr, thr in report.roc_points:
                writer.writerow([fpr, tpr, thr])
