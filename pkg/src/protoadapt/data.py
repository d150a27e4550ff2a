"""Signal ingestion, windowing, dataset assembly, and pair sampling.

Windows are fixed at 2048 samples with an 80-sample step.  Datasets are
immutable once built; every randomized operation here is a
deterministic function of an explicit seed or generator, and all of the
sampling is window-first (random choices pick window identities, never
class indices), which keeps runs reproducible under class relabeling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import PairBatch

WINDOW = 2048
STEP = 80

SOURCE = "source"
TARGET = "target"
DOMAINS = (SOURCE, TARGET)


@dataclass
class RawSignal:
    samples: np.ndarray
    sample_rate_hz: float = 12000.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("signal must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("signal contains non-finite values")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")


@dataclass
class LabeledWindow:
    values: np.ndarray
    label: int
    domain: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (WINDOW,):
            raise ValueError(f"window must have length {WINDOW}, got {self.values.shape}")
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")


class Dataset:
    """A list of labeled windows over the label space [0, class_count).

    Some classes may be empty (incomplete-class sources); class_count is
    the size of the label space, not the number of populated classes.
    """

    def __init__(self, windows: list[LabeledWindow], class_count: int | None = None):
        self.windows = list(windows)
        labels = [w.label for w in self.windows]
        if class_count is None:
            if not labels:
                raise ValueError("cannot infer class_count of an empty dataset")
            class_count = max(labels) + 1
            missing = sorted(set(range(class_count)) - set(labels))
            if missing:
                raise ValueError(f"label gaps {missing} with inferred class count "
                                 f"{class_count}; pass class_count explicitly")
        if class_count < 1:
            raise ValueError("class_count must be >= 1")
        bad = [l for l in labels if l >= class_count]
        if bad:
            raise ValueError(f"labels {sorted(set(bad))} outside [0, {class_count})")
        self.class_count = class_count
        self.per_class_counts = np.bincount(labels, minlength=class_count).astype(np.int64) \
            if labels else np.zeros(class_count, dtype=np.int64)
        self._values: np.ndarray | None = None
        self._labels: np.ndarray | None = None
        self._by_label: dict[int, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.windows)

    def values_matrix(self) -> np.ndarray:
        if self._values is None:
            self._values = (np.stack([w.values for w in self.windows])
                            if self.windows else np.empty((0, WINDOW)))
        return self._values

    def labels_array(self) -> np.ndarray:
        if self._labels is None:
            self._labels = np.array([w.label for w in self.windows], dtype=np.intp)
        return self._labels

    def indices_by_label(self) -> dict[int, np.ndarray]:
        if self._by_label is None:
            labels = self.labels_array()
            self._by_label = {k: np.flatnonzero(labels == k)
                              for k in range(self.class_count)}
        return self._by_label

    def classes_present(self) -> list[int]:
        return [k for k in range(self.class_count) if self.per_class_counts[k] > 0]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.windows[i] for i in indices], self.class_count)


def slide_window(signal: RawSignal, window: int = WINDOW, step: int = STEP,
                 label: int = 0, domain: str = SOURCE) -> list[LabeledWindow]:
    """Overlapping windows: floor((len - window)/step) + 1 of them."""
    n = signal.samples.size
    if n < window:
        raise ValueError(f"signal length {n} is shorter than the window {window}")
    count = (n - window) // step + 1
    return [LabeledWindow(signal.samples[i * step:i * step + window].copy(), label, domain)
            for i in range(count)]


# -- manifest + signal files --------------------------------------------------


def load_signal(path: Path) -> RawSignal:
    """'.f64' raw little-endian float64, or single-column CSV, by extension."""
    path = Path(path)
    if path.suffix == ".f64":
        samples = np.fromfile(path, dtype="<f8")
    elif path.suffix == ".csv":
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
        try:
            samples = np.array([float(row[0]) for row in rows])
        except ValueError as err:
            raise ValueError(f"{path}: non-numeric CSV value ({err})") from None
    else:
        raise ValueError(f"{path}: unsupported signal extension {path.suffix!r} "
                         "(expected .f64 or .csv)")
    return RawSignal(samples, metadata={"path": str(path)})


def save_signal_f64(path, samples) -> None:
    np.asarray(samples, dtype="<f8").tofile(path)


def load_manifest(path, class_count: int | None = None) -> Dataset:
    """Manifest rows `file,label,domain`; each signal is slid into windows.

    Paths are resolved relative to the manifest.  Without an explicit
    class_count the label set must be gap-free (gaps usually mean a
    typo); with one, any subset of [0, class_count) is accepted.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} does not exist")
    windows: list[LabeledWindow] = []
    rows = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'file,label,domain', got {line!r}")
            fname, label_s, domain = parts
            try:
                label = int(label_s)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: label {label_s!r} is not an integer") from None
            if label < 0:
                raise ValueError(f"{path}:{lineno}: label must be non-negative")
            if domain not in DOMAINS:
                raise ValueError(f"{path}:{lineno}: domain must be source or target, got {domain!r}")
            signal_path = (path.parent / fname).resolve() if not Path(fname).is_absolute() else Path(fname)
            if not signal_path.exists():
                raise FileNotFoundError(f"{path}:{lineno}: signal file {fname!r} not found")
            try:
                signal = load_signal(signal_path)
                windows.extend(slide_window(signal, label=label, domain=domain))
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: {err}") from None
            rows += 1
    if rows == 0:
        raise ValueError(f"manifest {path} has no entries")
    return Dataset(windows, class_count)


def write_manifest(path, rows) -> None:
    """rows: iterable of (file, label, domain)."""
    with open(path, "w") as fh:
        for fname, label, domain in rows:
            fh.write(f"{fname},{label},{domain}\n")


# -- synthetic generator -------------------------------------------------------


@dataclass
class DomainParams:
    amplitude_scale: float = 1.0
    freq_offset: float = 0.0       # additive, in cycles/sample
    noise_std: float = 0.1

    def __post_init__(self):
        if self.amplitude_scale <= 0:
            raise ValueError("amplitude_scale must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass
class SynthSpec:
    """Bearing-like signals: tone + second harmonic + periodic decaying
    bursts + Gaussian noise, with a controllable source->target shift."""

    class_count: int = 6
    base_freqs: tuple = ()         # cycles/sample per class
    impulse_periods: tuple = ()    # samples per class
    harmonic_mix: float = 0.5
    amplitude: float = 1.0
    impulse_amplitude: float = 1.5
    impulse_decay: float = 24.0    # e-folding time of a burst, samples
    source: DomainParams = field(default_factory=DomainParams)
    target: DomainParams = field(default_factory=DomainParams)
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("need at least 2 classes")
        if not self.base_freqs:
            self.base_freqs = tuple(0.012 + 0.011 * k for k in range(self.class_count))
        if not self.impulse_periods:
            self.impulse_periods = tuple(96 + 56 * k for k in range(self.class_count))
        if len(self.base_freqs) != self.class_count or len(self.impulse_periods) != self.class_count:
            raise ValueError("per-class parameter lists must have class_count entries")
        if min(self.base_freqs) <= 0 or min(self.impulse_periods) <= 0:
            raise ValueError("frequencies and impulse periods must be positive")
        if len(set(self.base_freqs)) != self.class_count:
            raise ValueError("per-class base frequencies must be distinct")

    def domain(self, name: str) -> DomainParams:
        if name not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {name!r}")
        return self.source if name == SOURCE else self.target


def synth_signal(spec: SynthSpec, class_k: int, domain: str, length: int) -> RawSignal:
    """One continuous recording for (class, domain), deterministic in spec.seed."""
    dom = spec.domain(domain)
    rng = np.random.default_rng(np.random.SeedSequence(
        [spec.seed, DOMAINS.index(domain), class_k]))
    t = np.arange(length, dtype=np.float64)
    freq = spec.base_freqs[class_k] + dom.freq_offset
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = spec.amplitude * dom.amplitude_scale
    signal = amp * (np.sin(2.0 * np.pi * freq * t + phase)
                    + spec.harmonic_mix * np.sin(4.0 * np.pi * freq * t + 2.0 * phase))
    period = spec.impulse_periods[class_k]
    offset = rng.uniform(0.0, period)
    bursts = np.zeros(length)
    start = offset
    while start < length:
        tail = t[int(np.ceil(start)):] - start
        bursts[int(np.ceil(start)):] += np.exp(-tail / spec.impulse_decay)
        start += period
    signal += amp * spec.impulse_amplitude * bursts
    if dom.noise_std > 0:
        signal += rng.normal(0.0, dom.noise_std, length)
    return RawSignal(signal, metadata={"class": class_k, "domain": domain})


def synth_generate(spec: SynthSpec, per_class: int, domain: str) -> Dataset:
    """per_class windows for every class, slid off one long signal each."""
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    length = WINDOW + (per_class - 1) * STEP
    windows: list[LabeledWindow] = []
    for k in range(spec.class_count):
        signal = synth_signal(spec, k, domain, length)
        windows.extend(slide_window(signal, label=k, domain=domain))
    return Dataset(windows, spec.class_count)


# -- sampling -------------------------------------------------------------------


def select_few_shot(target: Dataset, n: int, seed: int) -> tuple[Dataset, Dataset]:
    """Partition: exactly n uniformly chosen windows per class, rest is test.

    Selection draws one priority per window (in window order) and keeps
    each class's n smallest, so the choice depends only on window
    identities, never on label values.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    priorities = np.random.default_rng(seed).random(len(target.windows))
    chosen: list[int] = []
    for k in range(target.class_count):
        members = target.indices_by_label()[k]
        if len(members) < n:
            raise ValueError(f"class {k} has {len(members)} windows, fewer than n={n}")
        order = members[np.argsort(priorities[members], kind="stable")]
        chosen.extend(order[:n].tolist())
    mask = np.zeros(len(target.windows), dtype=bool)
    mask[chosen] = True
    few = target.subset(np.flatnonzero(mask))
    rest = target.subset(np.flatnonzero(~mask))
    return few, rest


def empty_like(dataset: Dataset) -> Dataset:
    return Dataset([], dataset.class_count)


def sample_pairs(source: Dataset, target_few: Dataset, batch: int,
                 positive_fraction: float, rng: np.random.Generator) -> PairBatch:
    """A batch of (source window, target window) pairs with y_d flags.

    Positives pick a target window uniformly among those whose class
    also appears in the source, then a source window of that class.
    Negatives pick a source window uniformly, then a target window of a
    different class.  All picks are by window identity.
    """
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValueError(f"positive_fraction must be in [0,1], got {positive_fraction}")
    if len(source) == 0 or len(target_few) == 0:
        raise ValueError("pair sampling needs non-empty source and target datasets")
    n_pos = int(round(batch * positive_fraction))
    n_neg = batch - n_pos

    src_labels = source.labels_array()
    tgt_labels = target_few.labels_array()
    src_by_label = source.indices_by_label()
    shared_targets = np.flatnonzero(source.per_class_counts[tgt_labels] > 0)
    if n_pos > 0 and len(shared_targets) == 0:
        raise ValueError("no classes shared between source and target; "
                         "cannot sample positive pairs")
    tgt_not_label = {k: np.flatnonzero(tgt_labels != k) for k in range(source.class_count)}
    neg_sources = np.flatnonzero([len(tgt_not_label[l]) > 0 for l in src_labels])
    if n_neg > 0 and len(neg_sources) == 0:
        raise ValueError("every target window shares the single source class; "
                         "cannot sample negative pairs")

    si = np.empty(batch, dtype=np.intp)
    ti = np.empty(batch, dtype=np.intp)
    for b in range(n_pos):
        ti[b] = shared_targets[rng.integers(len(shared_targets))]
        members = src_by_label[int(tgt_labels[ti[b]])]
        si[b] = members[rng.integers(len(members))]
    for b in range(n_pos, batch):
        si[b] = neg_sources[rng.integers(len(neg_sources))]
        candidates = tgt_not_label[int(src_labels[si[b]])]
        ti[b] = candidates[rng.integers(len(candidates))]

    sl = src_labels[si]
    tl = tgt_labels[ti]
    return PairBatch(source.values_matrix()[si], target_few.values_matrix()[ti],
                     (sl == tl).astype(np.float64), sl.copy(), tl.copy())


def permute_labels(dataset: Dataset, permutation) -> Dataset:
    """Relabel every window: label k becomes permutation[k]; values untouched."""
    perm = list(permutation)
    n = dataset.class_count
    if sorted(perm) != list(range(n)):
        raise ValueError(f"permutation must be a bijection on [0,{n}), got {perm}")
    windows = [LabeledWindow(w.values, perm[w.label], w.domain) for w in dataset.windows]
    return Dataset(windows, n)
