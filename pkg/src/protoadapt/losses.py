"""Objective terms: Siamese distance loss, cross-entropy, prototype loss.

The combined objective is L_P = lambda*L_D + (1-lambda)*L_CB where L_D
is a binary cross-entropy over pair similarities and L_CB a prototype
cross-entropy with three regularizers (compactness, separation, norm).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network
from . import tensor as T
from .tensor import Tensor

CLAMP = 1e-12


@dataclass
class LossConfig:
    gamma_d: float = 1.0      # distance scaling inside the pair sigmoid
    gamma_s: float = 1.0      # hardness of the prototype assignment softmax
    lambda_: float = 0.5      # mix: lambda*L_D + (1-lambda)*classification
    lambda1: float = 0.01     # compactness  ||g - c_m||_1
    lambda2: float = 0.01     # separation  -sum over pairs ||c_i - c_j||_1
    lambda3: float = 0.001    # prototype norm  sum ||c_i||_2

    def __post_init__(self):
        if self.gamma_d <= 0.0 or self.gamma_s <= 0.0:
            raise ValueError("gamma_d and gamma_s must be positive")
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ValueError(f"lambda must be in [0,1], got {self.lambda_}")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0.0:
            raise ValueError("regularizer weights must be non-negative")


@dataclass
class PairBatch:
    """Parallel arrays of paired windows; same_class[i] = 1 iff labels match."""

    source_values: np.ndarray     # [B, 2048]
    target_values: np.ndarray     # [B, 2048]
    same_class: np.ndarray        # [B] of {0.0, 1.0}
    source_labels: np.ndarray     # [B]
    target_labels: np.ndarray     # [B]

    def __post_init__(self):
        n = len(self.source_values)
        if not (len(self.target_values) == len(self.same_class)
                == len(self.source_labels) == len(self.target_labels) == n):
            raise ValueError("pair batch arrays must have equal lengths")
        match = (self.source_labels == self.target_labels).astype(np.float64)
        if not np.array_equal(match, self.same_class):
            raise ValueError("same_class flags must equal label agreement")

    def __len__(self) -> int:
        return len(self.same_class)


def pair_similarity(fs, ft, gamma_d: float) -> Tensor:
    """s = 2*(1 - sigmoid(gamma_d * ||fs - ft||_2)), in (0, 1].

    s = 1 exactly when the features coincide and decays toward 0 with
    distance, so BCE(s, y_d=1) pulls a pair together.  (The raw sigmoid
    of a norm lives in [0.5, 1), which would invert the polarity.)
    """
    if gamma_d <= 0.0:
        raise ValueError(f"gamma_d must be positive, got {gamma_d}")
    fs, ft = T.as_tensor(fs), T.as_tensor(ft)
    if fs.shape != ft.shape:
        raise ValueError(f"feature shapes differ: {fs.shape} vs {ft.shape}")
    diff = fs - ft
    dist = T.sqrt(T.tsum(diff * diff, axis=-1))
    return 2.0 * (1.0 - T.sigmoid(T.mul(dist, gamma_d)))


def binary_cross_entropy(s: Tensor, targets) -> Tensor:
    """Mean BCE with probabilities clamped to [1e-12, 1-1e-12]."""
    y = np.asarray(targets, dtype=np.float64)
    sc = T.clip(s, CLAMP, 1.0 - CLAMP)
    losses = -(T.mul(T.log(sc), y) + T.mul(T.log(1.0 - sc), 1.0 - y))
    return T.mean(losses)


def distance_loss(batch: PairBatch, model, cfg: LossConfig) -> Tensor:
    """Siamese pair loss: mean BCE(pair_similarity, same_class).

    Both streams share the one extractor.  Repeated windows (the few
    shot side repeats heavily) are forwarded once and gathered back, so
    the gradient accumulates exactly as if each pair were forwarded.
    """
    if len(batch) == 0:
        raise ValueError("distance_loss needs a non-empty pair batch")
    us, inv_s = np.unique(batch.source_values, axis=0, return_inverse=True)
    ut, inv_t = np.unique(batch.target_values, axis=0, return_inverse=True)
    fs = T.gather_rows(network.extract_features(model, us), inv_s.ravel())
    ft = T.gather_rows(network.extract_features(model, ut), inv_t.ravel())
    sim = pair_similarity(fs, ft, cfg.gamma_d)
    return binary_cross_entropy(sim, batch.same_class)


def categorical_ce(probs, label) -> Tensor:
    """-ln p[label] of a probability vector (or row-wise with a label array)."""
    probs = T.as_tensor(probs)
    if probs.ndim == 1:
        n = probs.shape[0]
        label = int(label)
        if not 0 <= label < n:
            raise ValueError(f"label {label} out of range for {n} classes")
        picked = T.gather_along_last(T.reshape(probs, (1, n)), [label])
        return T.reshape(-T.log(T.clip(picked, CLAMP, 1.0)), ())
    labels = np.asarray(label, dtype=np.intp)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f"label out of range for {probs.shape[1]} classes")
    picked = T.gather_along_last(probs, labels)
    return T.mean(-T.log(T.clip(picked, CLAMP, 1.0)))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Cross-entropy straight from logits in fused log-softmax form."""
    labels = np.asarray(labels, dtype=np.intp)
    single = logits.ndim == 1
    if single:
        logits = T.reshape(logits, (1, -1))
        labels = labels.reshape(1)
    picked = T.gather_along_last(T.log_softmax(logits, axis=1), labels)
    return -T.mean(picked)


def prototype_assignment(projected, prototypes, gamma_s: float) -> Tensor:
    """Soft assignment: softmax over classes of -gamma_s * ||g - c_i||_2^2."""
    if gamma_s < 0.0:
        raise ValueError(f"gamma_s must be non-negative, got {gamma_s}")
    d2 = T.pairwise_sqdist(projected, prototypes)
    return T.softmax(T.mul(d2, -gamma_s), axis=-1)


def proto_class_loss(projected, prototypes, label, gamma_s: float) -> Tensor:
    """L_C: cross-entropy of the prototype assignment, fused with the softmax."""
    d2 = T.pairwise_sqdist(projected, prototypes)
    return softmax_cross_entropy(T.mul(d2, -gamma_s), label)


def proto_loss_lcb(projected, prototypes, label, cfg: LossConfig) -> Tensor:
    """L_CB = L_C + lambda1*||g-c_m||_1 - lambda2*pair_sum + lambda3*norm_sum.

    The separation sum counts each unordered prototype pair once; the
    sample-dependent terms average over the batch, the prototype-only
    regularizers do not depend on it.
    """
    projected = T.as_tensor(projected)
    prototypes = T.as_tensor(prototypes)
    labels = np.atleast_1d(np.asarray(label, dtype=np.intp))
    proj = T.reshape(projected, (1, -1)) if projected.ndim == 1 else projected
    loss = proto_class_loss(proj, prototypes, labels, cfg.gamma_s)
    if cfg.lambda1:
        own = T.gather_rows(prototypes, labels)
        compact = T.mean(T.tsum(T.absolute(proj - own), axis=1))
        loss = loss + T.mul(compact, cfg.lambda1)
    if cfg.lambda2:
        loss = loss - T.mul(T.pairwise_l1_separation(prototypes), cfg.lambda2)
    if cfg.lambda3:
        norms = T.sqrt(T.tsum(prototypes * prototypes, axis=1))
        loss = loss + T.mul(T.sorted_sum(norms, axis=0), cfg.lambda3)
    return loss


def combined_loss(distance_term, classification_term, lambda_: float) -> Tensor:
    """L_P = lambda*L_D + (1-lambda)*L_CB; exactly linear in lambda."""
    if not 0.0 <= lambda_ <= 1.0:
        raise ValueError(f"lambda must be in [0,1], got {lambda_}")
    return T.mul(T.as_tensor(distance_term), lambda_) \
        + T.mul(T.as_tensor(classification_term), 1.0 - lambda_)
