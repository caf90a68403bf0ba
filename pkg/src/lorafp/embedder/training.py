"""Triplet-loss training of the RFF extractor.

One step samples a handful of devices, a few feature matrices per device,
forms one random (anchor, positive, negative) triplet per batch slot, and
updates every tensor with RMS-scaled gradient descent. The learning rate
drops by a fixed factor when the validation loss stalls and training stops
after a longer stall, returning the best-validation weights.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError, TrainingError
from .model import EmbedderConfig, RffExtractor

_DIST_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1e-3
    lr_drop_factor: float = 0.2
    lr_patience_epochs: int = 10
    stop_patience_epochs: int = 30
    batch_size: int = 32
    val_fraction: float = 0.1
    seed: int = 0
    max_epochs: int = 500
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    n_val_triplets: int = 256
    semi_hard_mining: bool = False

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in (0, 1)")
        if self.initial_lr <= 0 or self.lr_drop_factor <= 0:
            raise ConfigError("learning rate and drop factor must be positive")
        if self.lr_patience_epochs <= 0 or self.stop_patience_epochs <= 0:
            raise ConfigError("patience values must be positive")
        if self.batch_size < 2 or self.max_epochs < 1:
            raise ConfigError("batch_size must be >= 2 and max_epochs >= 1")

    def to_dict(self) -> dict:
        return {
            "initial_lr": self.initial_lr,
            "lr_drop_factor": self.lr_drop_factor,
            "lr_patience_epochs": self.lr_patience_epochs,
            "stop_patience_epochs": self.stop_patience_epochs,
            "batch_size": self.batch_size,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
            "max_epochs": self.max_epochs,
            "rms_decay": self.rms_decay,
            "rms_eps": self.rms_eps,
            "n_val_triplets": self.n_val_triplets,
            "semi_hard_mining": self.semi_hard_mining,
        }


def euclidean(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))


def triplet_loss(anc, pos, neg, alpha: float) -> float:
    """max(D(anc, pos) - D(anc, neg) + alpha, 0) with Euclidean D."""
    return max(euclidean(anc, pos) - euclidean(anc, neg) + alpha, 0.0)


def triplet_loss_batch(emb, a_idx, p_idx, n_idx, alpha):
    """Mean triplet loss over index triplets plus its gradient w.r.t. emb.

    Inactive triplets (hinge at or below zero) contribute exactly zero
    gradient; zero-distance pairs use a zero subgradient.
    """
    a_idx = np.asarray(a_idx)
    p_idx = np.asarray(p_idx)
    n_idx = np.asarray(n_idx)
    ap = emb[a_idx] - emb[p_idx]
    an = emb[a_idx] - emb[n_idx]
    d_ap = np.linalg.norm(ap, axis=1)
    d_an = np.linalg.norm(an, axis=1)
    margins = d_ap - d_an + alpha
    active = margins > 0.0
    n_trip = a_idx.size
    loss = float(np.sum(np.maximum(margins, 0.0)) / n_trip)

    d_emb = np.zeros_like(emb)
    if np.any(active):
        w = active.astype(emb.dtype) / n_trip
        g_ap = ap * (w / np.maximum(d_ap, _DIST_FLOOR))[:, None]
        g_an = an * (w / np.maximum(d_an, _DIST_FLOOR))[:, None]
        g_ap[d_ap <= _DIST_FLOOR] = 0.0
        g_an[d_an <= _DIST_FLOOR] = 0.0
        np.add.at(d_emb, a_idx, g_ap - g_an)
        np.add.at(d_emb, p_idx, -g_ap)
        np.add.at(d_emb, n_idx, g_an)
    return loss, d_emb


def _group_by_label(labels):
    groups = OrderedDict()
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    return groups


def _split_train_val(labels, val_fraction, rng):
    """Per-device split keeping at least two training samples per device."""
    groups = _group_by_label(labels)
    train_idx, val_idx = [], []
    for lab, idxs in groups.items():
        idxs = np.array(idxs)
        rng.shuffle(idxs)
        n_val = int(round(val_fraction * idxs.size))
        n_val = min(n_val, idxs.size - 2)
        n_val = max(n_val, 0)
        val_idx.extend(idxs[:n_val])
        train_idx.extend(idxs[n_val:])
    return np.array(sorted(train_idx)), np.array(sorted(val_idx))


def _make_triplets(pool_by_label, rng, count):
    """Draw `count` random (anchor, positive, negative) index triplets."""
    labels = [lab for lab, idxs in pool_by_label.items() if len(idxs) >= 2]
    if not labels:
        raise ContractError("need at least one device with >= 2 samples for triplets")
    multi = {lab: np.array(pool_by_label[lab]) for lab in labels}
    all_labels = list(pool_by_label.keys())
    triplets = np.empty((count, 3), dtype=np.int64)
    for t in range(count):
        lab = labels[rng.integers(len(labels))]
        pool = multi[lab]
        a, p = rng.choice(pool.size, size=2, replace=False)
        others = [ol for ol in all_labels if ol != lab]
        neg_lab = others[rng.integers(len(others))]
        neg_pool = pool_by_label[neg_lab]
        n = neg_pool[rng.integers(len(neg_pool))]
        triplets[t] = (pool[a], pool[p], n)
    return triplets


def _sample_batch(groups_list, rng, batch_size):
    """P devices x K samples, then one random triplet per batch slot.

    Triplet indices are positions within the batch.
    """
    n_dev = len(groups_list)
    p = min(n_dev, max(2, batch_size // 4))
    k = max(2, batch_size // p)
    chosen = rng.choice(n_dev, size=p, replace=False)
    batch_idx = []
    batch_lab = []
    for gi in chosen:
        idxs = groups_list[gi]
        replace = len(idxs) < k
        take = rng.choice(len(idxs), size=k, replace=replace)
        batch_idx.extend(idxs[t] for t in take)
        batch_lab.extend([gi] * k)
    batch_idx = np.array(batch_idx)
    batch_lab = np.array(batch_lab)

    pool_by_label = OrderedDict()
    for pos_in_batch, gi in enumerate(batch_lab):
        pool_by_label.setdefault(int(gi), []).append(pos_in_batch)
    trips = _make_triplets(pool_by_label, rng, batch_idx.size)
    return batch_idx, batch_lab, trips


def _semi_hard_triplets(emb, batch_lab, rng):
    """Random anchor/positive per device; the negative is the nearest one
    beyond the positive distance (classic semi-hard band), falling back to
    the hardest negative when the band is empty."""
    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    trips = []
    for a in range(batch_lab.size):
        same = np.where(batch_lab == batch_lab[a])[0]
        same = same[same != a]
        negs = np.where(batch_lab != batch_lab[a])[0]
        if same.size == 0 or negs.size == 0:
            continue
        p = same[rng.integers(same.size)]
        band = negs[dist[a, negs] > dist[a, p]]
        n = band[np.argmin(dist[a, band])] if band.size else negs[np.argmin(dist[a, negs])]
        trips.append((a, p, n))
    return np.array(trips, dtype=np.int64)


def train(features, labels, train_config: TrainConfig,
          embedder_config: EmbedderConfig, log=None):
    """Train an extractor on (feature matrix, device id) pairs.

    Returns (model, history); the model carries the best-validation weights.
    Fully deterministic given train_config.seed.
    """
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.ndim != 3 or features.shape[0] != labels.shape[0]:
        raise ContractError("features must be (n, rows, cols) aligned with labels")
    groups = _group_by_label(labels)
    if len(groups) < 2:
        raise ContractError("training needs at least 2 devices")
    if any(len(v) < 2 for v in groups.values()):
        raise ContractError("every device needs at least 2 samples")

    root = np.random.SeedSequence(train_config.seed)
    ss_model, ss_split, ss_batch, ss_val = root.spawn(4)
    rng_split = np.random.default_rng(ss_split)
    rng_batch = np.random.default_rng(ss_batch)
    rng_val = np.random.default_rng(ss_val)

    train_idx, val_idx = _split_train_val(labels, train_config.val_fraction, rng_split)
    if val_idx.size == 0:
        raise ContractError("validation split is empty; provide more samples per device")

    train_groups = _group_by_label(labels[train_idx])
    groups_list = [np.array([train_idx[i] for i in idxs]) for idxs in train_groups.values()]

    val_pool = _group_by_label(labels[val_idx])
    val_pool = OrderedDict((lab, [val_idx[i] for i in idxs]) for lab, idxs in val_pool.items())
    n_val_triplets = min(train_config.n_val_triplets, 8 * val_idx.size)
    val_trips = _make_triplets(val_pool, rng_val, n_val_triplets)

    model = RffExtractor(embedder_config, seed=int(ss_model.generate_state(1)[0]),
                         dtype=np.float32)
    alpha = embedder_config.margin_alpha
    rms_cache = {name: np.zeros_like(arr) for name, arr in model.params().items()}

    lr = train_config.initial_lr
    best_val = math.inf
    best_weights = None
    stall = 0
    lr_stall = 0
    history = []
    steps_per_epoch = max(1, -(-train_idx.size // train_config.batch_size))

    for epoch in range(train_config.max_epochs):
        epoch_loss = 0.0
        for _ in range(steps_per_epoch):
            batch_idx, batch_lab, trips = _sample_batch(groups_list, rng_batch,
                                                        train_config.batch_size)
            x = features[batch_idx]
            emb = model.forward(x)
            if train_config.semi_hard_mining:
                mined = _semi_hard_triplets(emb, batch_lab, rng_batch)
                if mined.size:
                    trips = mined
            loss, d_emb = triplet_loss_batch(emb, trips[:, 0], trips[:, 1], trips[:, 2], alpha)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch} (lr={lr:.2e})"
                )
            epoch_loss += loss
            model.backward(d_emb.astype(model.dtype))
            params = model.params()
            grads = model.grads()
            for name, g in grads.items():
                cache = rms_cache[name]
                cache *= train_config.rms_decay
                cache += (1.0 - train_config.rms_decay) * (g * g)
                params[name] -= (lr * g / (np.sqrt(cache) + train_config.rms_eps)).astype(
                    params[name].dtype
                )
        epoch_loss /= steps_per_epoch

        val_loss = _triplet_loss_on(model, features, val_trips, alpha)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        improved = val_loss < best_val
        if improved:
            best_val = val_loss
            best_weights = {k: v.copy() for k, v in model.params().items()}
            stall = 0
            lr_stall = 0
        else:
            stall += 1
            lr_stall += 1
        history.append({
            "epoch": epoch, "train_loss": epoch_loss, "val_loss": val_loss,
            "best_val": best_val, "lr": lr,
        })
        if log is not None:
            log(history[-1])
        if stall >= train_config.stop_patience_epochs:
            break
        if lr_stall >= train_config.lr_patience_epochs:
            lr *= train_config.lr_drop_factor
            lr_stall = 0

    if best_weights is not None:
        params = model.params()
        for name, arr in best_weights.items():
            params[name][...] = arr
    return model, history


def _triplet_loss_on(model, features, trips, alpha, chunk=64):
    """Loss of fixed triplets, forwarding each referenced sample once."""
    needed = np.unique(trips)
    remap = {int(i): k for k, i in enumerate(needed)}
    emb = np.empty((needed.size, model.embedding_dim), dtype=np.float64)
    for s in range(0, needed.size, chunk):
        sel = needed[s:s + chunk]
        emb[s:s + sel.size] = model.forward(features[sel])
    a = np.array([remap[int(i)] for i in trips[:, 0]])
    p = np.array([remap[int(i)] for i in trips[:, 1]])
    n = np.array([remap[int(i)] for i in trips[:, 2]])
    loss, _ = triplet_loss_batch(emb, a, p, n, alpha)
    return loss
