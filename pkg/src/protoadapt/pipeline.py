"""Training loops (CTM/FTM/FPM), fine-tuning, evaluation, feature export.

CTM trains a traditional softmax head on the mixed labeled pool with no
adaptation.  FTM adds the Siamese distance loss on sampled cross-domain
pairs.  FPM replaces the head with the prototypical layer and its
regularized loss.  Every run is a deterministic function of its config
seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import network as N
from . import tensor as T
from .data import Dataset, sample_pairs, select_few_shot
from .losses import LossConfig
from .network import ModelParams
from .optim import AdaDeltaState, adadelta_step

CTM = "CTM"
FTM = "FTM"
FPM = "FPM"
VARIANTS = (CTM, FTM, FPM)

EVAL_BATCH = 256


@dataclass
class TrainConfig:
    variant: str = FPM
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 64
    epochs: int = 50
    fine_tune_epochs: int = 20
    n_shot: int = 1
    seed: int = 0
    dropout_rate: float = 0.5
    proj_dim: int = 5
    prototype_std: float = 0.1
    pair_batch_size: int | None = None     # defaults to batch_size
    positive_fraction: float = 0.5
    fine_tune_head_only: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0 or self.fine_tune_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.n_shot < 0:
            raise ValueError(f"n_shot must be >= 0, got {self.n_shot}")
        if self.proj_dim < 1:
            raise ValueError(f"proj_dim must be >= 1, got {self.proj_dim}")
        if self.pair_batch_size is not None and self.pair_batch_size < 1:
            raise ValueError("pair_batch_size must be >= 1")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError("positive_fraction must be in [0,1]")


@dataclass
class TrainingLog:
    """Optional per-run records a caller can hand to train()/fine_tune()."""

    epoch_total: list[float] = field(default_factory=list)
    epoch_distance: list[float] = field(default_factory=list)
    epoch_classification: list[float] = field(default_factory=list)
    prototypes_initial: np.ndarray | None = None
    prototypes_final: np.ndarray | None = None
    optimizer_state: list | None = None


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: np.ndarray      # NaN for classes absent from the test set
    confusion: np.ndarray               # [N, N] counts, rows = true, cols = predicted

    @property
    def class_count(self) -> int:
        return self.confusion.shape[0]


def _spawn_rngs(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(4)]


def initial_model_for(cfg: TrainConfig, class_count: int) -> ModelParams:
    """Exactly the model train() would build before its first step."""
    rng_init = _spawn_rngs(cfg.seed)[0]
    head = N.PROTOTYPICAL if cfg.variant == FPM else N.TRADITIONAL
    return N.init_model(class_count, head=head, proj_dim=cfg.proj_dim, seed=rng_init,
                        prototype_std=cfg.prototype_std, dropout_rate=cfg.dropout_rate)


def _classification_loss(model: ModelParams, values: np.ndarray, labels: np.ndarray,
                         cfg: TrainConfig, mode: str, rng) -> T.Tensor:
    features = N.extract_features(model, values)
    if model.head == N.PROTOTYPICAL:
        projected = N.project_to_prototype_space(model, features, mode, rng)
        return L.proto_loss_lcb(projected, model.prototypes, labels, cfg.loss)
    logits = N.class_logits(model, features, mode, rng)
    return L.softmax_cross_entropy(logits, labels)


def train(source: Dataset, target_few: Dataset | None, cfg: TrainConfig,
          log: TrainingLog | None = None,
          initial_model: ModelParams | None = None) -> ModelParams:
    """Train a fresh (or given) model; returns its final parameters.

    Per step: one labeled batch from source + few-shot target for the
    classification term; FTM/FPM additionally sample one cross-domain
    PairBatch for the distance term; AdaDelta updates throughout.
    """
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    if target_few is not None and len(target_few) == 0:
        target_few = None
    if target_few is not None and target_few.class_count != source.class_count:
        raise ValueError(f"class counts differ: source {source.class_count}, "
                         f"target {target_few.class_count}")
    if cfg.variant != CTM:
        if target_few is None:
            raise ValueError(f"{cfg.variant} requires few-shot target windows")
        shared = source.per_class_counts * target_few.per_class_counts
        if not np.any(shared > 0):
            raise ValueError("source and target share no classes")

    rngs = _spawn_rngs(cfg.seed)
    _, rng_order, rng_drop, rng_pair = rngs
    if initial_model is None:
        head = N.PROTOTYPICAL if cfg.variant == FPM else N.TRADITIONAL
        model = N.init_model(source.class_count, head=head, proj_dim=cfg.proj_dim,
                             seed=rngs[0], prototype_std=cfg.prototype_std,
                             dropout_rate=cfg.dropout_rate)
    else:
        model = N.clone_model(initial_model)
    if (model.head == N.PROTOTYPICAL) != (cfg.variant == FPM):
        raise ValueError(f"model head {model.head!r} does not fit variant {cfg.variant}")
    if log is not None and model.prototypes is not None:
        log.prototypes_initial = model.prototypes.data.copy()

    params = model.trainable()
    state = AdaDeltaState(params)
    if target_few is not None:
        pool_values = np.concatenate([source.values_matrix(), target_few.values_matrix()])
        pool_labels = np.concatenate([source.labels_array(), target_few.labels_array()])
    else:
        pool_values = source.values_matrix()
        pool_labels = source.labels_array()
    pair_batch = cfg.pair_batch_size or cfg.batch_size

    for _ in range(cfg.epochs):
        order = rng_order.permutation(len(pool_labels))
        totals, dists, clss = [], [], []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cls_loss = _classification_loss(model, pool_values[idx], pool_labels[idx],
                                            cfg, T.TRAIN, rng_drop)
            if cfg.variant == CTM:
                total = cls_loss
                d_val = 0.0
            else:
                pairs = sample_pairs(source, target_few, pair_batch,
                                     cfg.positive_fraction, rng_pair)
                d_loss = L.distance_loss(pairs, model, cfg.loss)
                total = L.combined_loss(d_loss, cls_loss, cfg.loss.lambda_)
                d_val = d_loss.item()
            T.zero_grads(params)
            total.backward()
            adadelta_step(params, None, state)
            totals.append(total.item())
            dists.append(d_val)
            clss.append(cls_loss.item())
        if log is not None and totals:
            log.epoch_total.append(float(np.mean(totals)))
            log.epoch_distance.append(float(np.mean(dists)))
            log.epoch_classification.append(float(np.mean(clss)))

    if log is not None:
        if model.prototypes is not None:
            log.prototypes_final = model.prototypes.data.copy()
        log.optimizer_state = state.snapshot()
    return model


def fine_tune(model: ModelParams, target_few: Dataset, cfg: TrainConfig,
              log: TrainingLog | None = None) -> ModelParams:
    """Continue on the classification loss only, over the few-shot windows.

    Optimizer accumulators start fresh for this stage.  All parameters
    train unless cfg.fine_tune_head_only is set.
    """
    if target_few is None or len(target_few) == 0:
        raise ValueError("fine_tune needs a non-empty few-shot dataset")
    if target_few.class_count != model.class_count:
        raise ValueError(f"class counts differ: model {model.class_count}, "
                         f"target {target_few.class_count}")
    params = model.head_trainable() if cfg.fine_tune_head_only else model.trainable()
    state = AdaDeltaState(params)
    ss = np.random.SeedSequence([cfg.seed, 1])
    rng_order, rng_drop = [np.random.default_rng(c) for c in ss.spawn(2)]
    values = target_few.values_matrix()
    labels = target_few.labels_array()
    for _ in range(cfg.fine_tune_epochs):
        order = rng_order.permutation(len(labels))
        totals = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = _classification_loss(model, values[idx], labels[idx],
                                        cfg, T.TRAIN, rng_drop)
            T.zero_grads(params)
            loss.backward()
            adadelta_step(params, None, state)
            totals.append(loss.item())
        if log is not None and totals:
            log.epoch_total.append(float(np.mean(totals)))
            log.epoch_classification.append(float(np.mean(totals)))
            log.epoch_distance.append(0.0)
    if log is not None and model.prototypes is not None:
        log.prototypes_final = model.prototypes.data.copy()
    return model


def predict(model: ModelParams, values: np.ndarray) -> np.ndarray:
    """Eval-mode class predictions for stacked windows [n, 2048]."""
    out = np.empty(len(values), dtype=np.intp)
    for start in range(0, len(values), EVAL_BATCH):
        chunk = values[start:start + EVAL_BATCH]
        features = N.extract_features(model, chunk)
        if model.head == N.PROTOTYPICAL:
            projected = N.project_to_prototype_space(model, features, T.EVAL)
            out[start:start + len(chunk)] = N.predict_label(model, projected)
        else:
            logits = N.class_logits(model, features, T.EVAL)
            probs = T.softmax(logits, axis=1)
            out[start:start + len(chunk)] = probs.data.argmax(axis=1)
    return out


def evaluate(model: ModelParams, test: Dataset) -> EvalReport:
    """Pure function of (model, test): accuracy, per-class accuracy, confusion."""
    if test.class_count != model.class_count:
        raise ValueError(f"class counts differ: model {model.class_count}, "
                         f"test {test.class_count}")
    if len(test) == 0:
        raise ValueError("test dataset is empty")
    true = test.labels_array()
    pred = predict(model, test.values_matrix())
    n = model.class_count
    confusion = np.zeros((n, n), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    row_sums = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(row_sums > 0, np.diag(confusion) / np.maximum(row_sums, 1), np.nan)
    accuracy = float(np.trace(confusion) / len(test))
    return EvalReport(accuracy, per_class, confusion)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def export_features(model: ModelParams, datasets: list[Dataset], path):
    """Write features + projections for every window, and the prototypes.

    Returns (features_path, prototypes_path).  The prototype CSV sits
    next to the main file with a `_prototypes` suffix.
    """
    from pathlib import Path
    if model.head != N.PROTOTYPICAL:
        raise ValueError("feature export needs a prototypical-head model")
    path = Path(path)
    proto_path = path.with_name(path.stem + "_prototypes" + (path.suffix or ".csv"))
    p = model.proj_dim
    header = (["domain", "true_label"]
              + [f"f{i:03d}" for i in range(N.FEATURE_DIM)]
              + [f"z{i}" for i in range(p)])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for dataset in datasets:
            values = dataset.values_matrix()
            for start in range(0, len(values), EVAL_BATCH):
                chunk = values[start:start + EVAL_BATCH]
                feats = N.extract_features(model, chunk)
                proj = N.project_to_prototype_space(model, feats, T.EVAL)
                for row in range(len(chunk)):
                    w = dataset.windows[start + row]
                    cells = ([w.domain, str(w.label)]
                             + [_fmt(v) for v in feats.data[row]]
                             + [_fmt(v) for v in proj.data[row]])
                    fh.write(",".join(cells) + "\n")
    with open(proto_path, "w") as fh:
        fh.write(",".join(["label"] + [f"z{i}" for i in range(p)]) + "\n")
        for k in range(model.class_count):
            fh.write(",".join([str(k)] + [_fmt(v) for v in model.prototypes.data[k]]) + "\n")
    return path, proto_path


def min_pairwise_l1(prototypes: np.ndarray) -> float:
    """Smallest L1 distance over unordered prototype row pairs."""
    n = len(prototypes)
    ii, jj = np.triu_indices(n, k=1)
    return float(np.abs(prototypes[ii] - prototypes[jj]).sum(axis=1).min())


def run_experiment(source: Dataset, target: Dataset, cfg: TrainConfig,
                   log: TrainingLog | None = None):
    """select_few_shot -> train -> optional fine_tune -> evaluate.

    Returns (model, report, few, remainder).  n_shot = 0 trains CTM on
    source alone and evaluates on the full target.  The fine-tune stage
    is part of the two adaptation variants only; CTM sees the few-shot
    windows merely as extra training rows.
    """
    if cfg.n_shot > 0:
        few, remainder = select_few_shot(target, cfg.n_shot, cfg.seed)
    else:
        few, remainder = None, target
    model = train(source, few, cfg, log=log)
    if cfg.fine_tune_epochs > 0 and few is not None and cfg.variant != CTM:
        fine_tune(model, few, cfg, log=log)
    report = evaluate(model, remainder)
    return model, report, few, remainder
