"""The diagnosis model: 1-D CNN feature extractor plus a classification head.

The extractor maps a 2048-sample window through five conv/pool blocks
(wide first kernel) and an FC-sigmoid layer to a 100-dim feature vector.
Two heads exist: a prototypical head (dropout + linear 100->p plus a
trainable prototype row per class, classification = nearest prototype)
and a traditional head (dropout + linear 100->N + softmax).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

WINDOW_LEN = 2048
FEATURE_DIM = 100
PROTO_DIM = 5

# (out_channels, kernel) per conv block; stride 1, then maxpool 2/2
CONV_BLOCKS = ((16, 64), (32, 3), (64, 2), (64, 3), (64, 3))
POOL_WINDOW = 2
POOL_STRIDE = 2

PROTOTYPICAL = "prototypical"
TRADITIONAL = "traditional"

# binary checkpoint container
_MAGIC = b"PVDM"
_VERSION = 1
_HEAD_CODE = {PROTOTYPICAL: 0, TRADITIONAL: 1}
_HEAD_NAME = {v: k for k, v in _HEAD_CODE.items()}


def conv_output_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def layer_output_lengths(length: int = WINDOW_LEN) -> list[int]:
    """Intermediate lengths after each conv and pool, in forward order."""
    chain = []
    for _, kernel in CONV_BLOCKS:
        length = conv_output_length(length, kernel, 1)
        chain.append(length)
        length = conv_output_length(length, POOL_WINDOW, POOL_STRIDE)
        chain.append(length)
    return chain


def flat_feature_count(length: int = WINDOW_LEN) -> int:
    return layer_output_lengths(length)[-1] * CONV_BLOCKS[-1][0]


@dataclass
class ModelParams:
    """All trainable tensors of the extractor and the active head."""

    conv_weights: list[Tensor]
    conv_biases: list[Tensor]
    fc_weight: Tensor
    fc_bias: Tensor
    head_weight: Tensor
    head_bias: Tensor
    prototypes: Tensor | None
    head: str
    class_count: int
    proj_dim: int = PROTO_DIM
    dropout_rate: float = 0.5

    def trainable(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.conv_weights, self.conv_biases):
            params += [w, b]
        params += [self.fc_weight, self.fc_bias, self.head_weight, self.head_bias]
        if self.prototypes is not None:
            params.append(self.prototypes)
        return params

    def head_trainable(self) -> list[Tensor]:
        params = [self.head_weight, self.head_bias]
        if self.prototypes is not None:
            params.append(self.prototypes)
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.trainable())


def init_model(class_count: int, head: str = PROTOTYPICAL, proj_dim: int = PROTO_DIM,
               seed: int | np.random.Generator = 0, prototype_std: float = 0.1,
               dropout_rate: float = 0.5) -> ModelParams:
    """He-initialized model: weights ~ N(0, 2/fan_in), biases 0.

    Prototypes start at N(0, prototype_std) so their pairwise distances
    are nonzero and the separation regularizer has gradients from step
    one.
    """
    if head not in (PROTOTYPICAL, TRADITIONAL):
        raise ValueError(f"unknown head kind {head!r}")
    if class_count < 2:
        raise ValueError(f"class_count must be >= 2, got {class_count}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def he(shape, fan_in):
        return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    conv_w, conv_b = [], []
    c_in = 1
    for c_out, kernel in CONV_BLOCKS:
        conv_w.append(he((c_out, c_in, kernel), c_in * kernel))
        conv_b.append(zeros(c_out))
        c_in = c_out
    flat = flat_feature_count()
    fc_w = he((FEATURE_DIM, flat), flat)
    fc_b = zeros(FEATURE_DIM)
    out_dim = proj_dim if head == PROTOTYPICAL else class_count
    head_w = he((out_dim, FEATURE_DIM), FEATURE_DIM)
    head_b = zeros(out_dim)
    protos = None
    if head == PROTOTYPICAL:
        protos = Tensor(rng.normal(0.0, prototype_std, (class_count, proj_dim)),
                        requires_grad=True)
    return ModelParams(conv_w, conv_b, fc_w, fc_b, head_w, head_b, protos,
                       head, class_count, proj_dim, dropout_rate)


def _window_batch(window) -> tuple[np.ndarray, bool]:
    """Normalize a window / array of windows to [batch, 1, 2048]."""
    values = np.asarray(getattr(window, "values", window), dtype=np.float64)
    single = values.ndim == 1
    if single:
        values = values[None, :]
    if values.ndim == 2:
        values = values[:, None, :]
    if values.ndim != 3 or values.shape[1] != 1 or values.shape[2] != WINDOW_LEN:
        raise ValueError(f"expected windows of length {WINDOW_LEN}, got shape {values.shape}")
    return values, single


def extract_features(model: ModelParams, window) -> Tensor:
    """Forward a window (or stacked windows) through h; output in (0,1)."""
    values, single = _window_batch(window)
    x = Tensor(values)
    for w, b in zip(model.conv_weights, model.conv_biases):
        x = T.relu(T.conv1d(x, w, b, stride=1))
        x = T.maxpool1d(x, POOL_WINDOW, POOL_STRIDE)
    x = T.reshape(x, (values.shape[0], -1))
    x = T.sigmoid(T.linear(x, model.fc_weight, model.fc_bias))
    return T.reshape(x, (-1,)) if single else x


def project_to_prototype_space(model: ModelParams, features: Tensor | np.ndarray,
                               mode: str = T.EVAL,
                               rng: np.random.Generator | None = None) -> Tensor:
    """Dropout + linear map to the p-dim space the prototypes live in."""
    if model.head != PROTOTYPICAL:
        raise ValueError("model has no prototypical head")
    features = T.as_tensor(features)
    if features.shape[-1] != FEATURE_DIM:
        raise ValueError(f"expected {FEATURE_DIM}-dim features, got {features.shape}")
    dropped = T.dropout(features, model.dropout_rate, mode, rng)
    return T.linear(dropped, model.head_weight, model.head_bias)


def class_logits(model: ModelParams, features: Tensor | np.ndarray,
                 mode: str = T.EVAL,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Dropout + linear map to N class scores (traditional head, pre-softmax)."""
    if model.head != TRADITIONAL:
        raise ValueError("model has no traditional head")
    features = T.as_tensor(features)
    if features.shape[-1] != FEATURE_DIM:
        raise ValueError(f"expected {FEATURE_DIM}-dim features, got {features.shape}")
    dropped = T.dropout(features, model.dropout_rate, mode, rng)
    return T.class_scores(dropped, model.head_weight, model.head_bias)


def predict_label(model: ModelParams, projected, gamma_s: float = 1.0):
    """Nearest prototype under squared Euclidean distance; ties -> lowest index.

    Identical to the argmax of the softmax assignment for any gamma_s > 0,
    since the softmax is strictly monotone in the negated distances.
    """
    if gamma_s <= 0.0:
        raise ValueError(f"gamma_s must be positive, got {gamma_s}")
    if model.prototypes is None:
        raise ValueError("model has no prototypes")
    proj = projected.data if isinstance(projected, Tensor) else np.asarray(projected)
    single = proj.ndim == 1
    if single:
        proj = proj[None, :]
    diff = proj[:, None, :] - model.prototypes.data[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    labels = d2.argmin(axis=1)
    return int(labels[0]) if single else labels


def clone_model(model: ModelParams) -> ModelParams:
    """Independent copy: training the clone never touches the original."""

    def copy(t: Tensor | None) -> Tensor | None:
        if t is None:
            return None
        return Tensor(t.data.copy(), requires_grad=t.requires_grad)

    return ModelParams([copy(t) for t in model.conv_weights],
                       [copy(t) for t in model.conv_biases],
                       copy(model.fc_weight), copy(model.fc_bias),
                       copy(model.head_weight), copy(model.head_bias),
                       copy(model.prototypes), model.head, model.class_count,
                       model.proj_dim, model.dropout_rate)


def permute_class_parameters(model: ModelParams, permutation) -> ModelParams:
    """Copy of the model with class-indexed parameters carried through a
    label bijection: row k serves class permutation[k] afterwards.

    Everything else (extractor, projection) is class-agnostic and is
    copied unchanged.
    """
    perm = np.asarray(permutation, dtype=np.intp)
    n = model.class_count
    if sorted(perm.tolist()) != list(range(n)):
        raise ValueError(f"permutation must be a bijection on [0,{n})")
    inverse = np.empty(n, dtype=np.intp)
    inverse[perm] = np.arange(n)

    def copy(t: Tensor) -> Tensor:
        return Tensor(t.data.copy(), requires_grad=t.requires_grad)

    def permute_rows(t: Tensor) -> Tensor:
        return Tensor(t.data[inverse].copy(), requires_grad=t.requires_grad)

    conv_w = [copy(t) for t in model.conv_weights]
    conv_b = [copy(t) for t in model.conv_biases]
    if model.head == PROTOTYPICAL:
        head_w, head_b = copy(model.head_weight), copy(model.head_bias)
        protos = permute_rows(model.prototypes)
    else:
        head_w, head_b = permute_rows(model.head_weight), permute_rows(model.head_bias)
        protos = None
    return ModelParams(conv_w, conv_b, copy(model.fc_weight), copy(model.fc_bias),
                       head_w, head_b, protos, model.head, model.class_count,
                       model.proj_dim, model.dropout_rate)


# -- checkpoint container -----------------------------------------------------


def save_checkpoint(model: ModelParams, path, optimizer_state=None) -> None:
    """Flat versioned binary file: header + raw little-endian float64.

    Tensors are written in trainable() declaration order; when given, the
    optimizer accumulator pair for each tensor follows in the same order
    so training resumes bit-exactly.
    """
    tensors = model.trainable()
    if optimizer_state is not None and len(optimizer_state) != len(tensors):
        raise ValueError("optimizer state does not match parameter list")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IBBHIId", _VERSION, _HEAD_CODE[model.head],
                             1 if optimizer_state is not None else 0, 0,
                             model.class_count, model.proj_dim, model.dropout_rate))
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        for t in tensors:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        if optimizer_state is not None:
            for acc_g, acc_d in optimizer_state:
                fh.write(np.ascontiguousarray(acc_g, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(acc_d, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint -> (ModelParams, optimizer_state | None)."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise ValueError(f"checkpoint truncated while reading {what}")
        chunk = raw[offset:offset + n]
        offset += n
        return chunk

    offset = 0
    if take(4, "magic") != _MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    version, head_code, has_opt, _pad, class_count, proj_dim, dropout_rate = \
        struct.unpack("<IBBHIId", take(24, "header"))
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if head_code not in _HEAD_NAME:
        raise ValueError(f"unknown head code {head_code}")
    head = _HEAD_NAME[head_code]
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    shapes = []
    for i in range(count):
        (ndim,) = struct.unpack("<I", take(4, f"tensor {i} ndim"))
        shapes.append(struct.unpack(f"<{ndim}I", take(4 * ndim, f"tensor {i} dims")))
    arrays = []
    for i, shape in enumerate(shapes):
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        buf = take(8 * n, f"tensor {i} data")
        arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    opt_state = None
    if has_opt:
        opt_state = []
        for i, shape in enumerate(shapes):
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            acc_g = np.frombuffer(take(8 * n, f"accumulator g {i}"), dtype="<f8").reshape(shape).copy()
            acc_d = np.frombuffer(take(8 * n, f"accumulator d {i}"), dtype="<f8").reshape(shape).copy()
            opt_state.append((acc_g, acc_d))
    if offset != len(raw):
        raise ValueError(f"checkpoint has {len(raw) - offset} trailing bytes")

    expected = 2 * len(CONV_BLOCKS) + 4 + (1 if head == PROTOTYPICAL else 0)
    if count != expected:
        raise ValueError(f"checkpoint lists {count} tensors, expected {expected}")
    params = [Tensor(a, requires_grad=True) for a in arrays]
    conv_w = params[0:2 * len(CONV_BLOCKS):2]
    conv_b = params[1:2 * len(CONV_BLOCKS):2]
    base = 2 * len(CONV_BLOCKS)
    fc_w, fc_b, head_w, head_b = params[base:base + 4]
    protos = params[base + 4] if head == PROTOTYPICAL else None
    model = ModelParams(conv_w, conv_b, fc_w, fc_b, head_w, head_b, protos,
                        head, class_count, proj_dim, dropout_rate)
    for t, want in zip(model.trainable(), _expected_shapes(model)):
        if t.shape != want:
            raise ValueError(f"checkpoint tensor shape {t.shape} does not match model layout {want}")
    return model, opt_state


def _expected_shapes(model: ModelParams) -> list[tuple[int, ...]]:
    shapes = []
    c_in = 1
    for c_out, kernel in CONV_BLOCKS:
        shapes += [(c_out, c_in, kernel), (c_out,)]
        c_in = c_out
    flat = flat_feature_count()
    shapes += [(FEATURE_DIM, flat), (FEATURE_DIM,)]
    out_dim = model.proj_dim if model.head == PROTOTYPICAL else model.class_count
    shapes += [(out_dim, FEATURE_DIM), (out_dim,)]
    if model.head == PROTOTYPICAL:
        shapes.append((model.class_count, model.proj_dim))
    return shapes
