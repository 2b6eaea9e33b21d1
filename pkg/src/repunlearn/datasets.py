"""Synthetic Gaussian-mixture data, retain/forget splits and class priors."""

import csv
import io
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import seeded_rng, spawn_streams


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if f.ndim != 2 or y.ndim != 1 or len(f) != len(y):
            raise ValueError(f"features {f.shape} and labels {y.shape} are inconsistent")
        if len(y) and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError("labels out of range")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain non-finite values")
        f.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class MixtureConfig:
    C: int = 6
    d: int = 10
    R: float = 5.0
    tau: float = 0.5
    sigma: float = 1.0
    n_per_class: int = 250
    n_test_per_class: int = 250
    seed: int = 0

    def validate(self):
        if self.C < 2 or self.d < 2:
            raise ValueError(f"need C >= 2 and d >= 2, got C={self.C}, d={self.d}")
        if not (self.R > 0 and self.tau >= 0 and self.sigma > 0):
            raise ValueError("need R > 0, tau >= 0, sigma > 0")
        if self.n_per_class < 1 or self.n_test_per_class < 1:
            raise ValueError("need at least one sample per class")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def mixture_means(config, rng):
    """Class means: first two coords on a circle of radius R, the rest N(0, tau^2)."""
    C, d = config.C, config.d
    angles = 2.0 * np.pi * np.arange(C) / C
    means = np.empty((C, d))
    means[:, 0] = config.R * np.cos(angles)
    means[:, 1] = config.R * np.sin(angles)
    means[:, 2:] = config.tau * rng.standard_normal((C, d - 2))
    return means


def _draw(means, sigma, n_per_class, rng):
    C, d = means.shape
    labels = np.repeat(np.arange(C), n_per_class)
    x = means[labels] + sigma * rng.standard_normal((C * n_per_class, d))
    return x, labels


def generate_toy_mixture(config, rng=None):
    """Balanced isotropic Gaussian mixture; returns ``(train, test)``.

    The off-circle mean coordinates are drawn first from ``rng`` and shared by
    both splits. Train and test samples then come from two independent child
    streams seeded from ``rng``. With ``rng=None`` the generator is seeded from
    ``config.seed``.
    """
    config.validate()
    if rng is None:
        rng = seeded_rng(config.seed)
    means = mixture_means(config, rng)
    child_seed = np.random.SeedSequence(rng.integers(0, 2**63, size=4))
    streams = spawn_streams(child_seed, ["train", "test"])
    xtr, ytr = _draw(means, config.sigma, config.n_per_class, streams["train"])
    xte, yte = _draw(means, config.sigma, config.n_test_per_class, streams["test"])
    return LabeledDataset(xtr, ytr, config.C), LabeledDataset(xte, yte, config.C)


@dataclass(frozen=True)
class UnlearnSplit:
    retain_indices: np.ndarray
    forget_indices: np.ndarray
    class_counts: np.ndarray
    forget_counts: np.ndarray
    mode: str
    forget_classes: tuple = field(default=())

    @property
    def N(self):
        return int(self.class_counts.sum())

    @property
    def N_f(self):
        return int(self.forget_counts.sum())

    @property
    def N_r(self):
        return self.N - self.N_f

    @property
    def retain_counts(self):
        return self.class_counts - self.forget_counts

    def to_dict(self):
        return {
            "mode": self.mode,
            "forget_classes": list(self.forget_classes),
            "forget_indices": self.forget_indices.tolist(),
        }


def _make_split(dataset, forget_mask, mode, forget_classes=()):
    forget = np.flatnonzero(forget_mask)
    retain = np.flatnonzero(~forget_mask)
    return UnlearnSplit(
        retain_indices=retain,
        forget_indices=forget,
        class_counts=dataset.class_counts,
        forget_counts=np.bincount(dataset.labels[forget], minlength=dataset.n_classes),
        mode=mode,
        forget_classes=tuple(int(c) for c in forget_classes),
    )


def split_class_unlearn(dataset, forget_classes):
    classes = sorted({int(c) for c in forget_classes})
    present = set(np.unique(dataset.labels).tolist())
    if not classes:
        raise ValueError("forget class set is empty")
    if not set(classes) <= present:
        raise ValueError(f"forget classes {classes} not all present in the dataset")
    if set(classes) >= present:
        raise ValueError("cannot forget every class: the retain set would be empty")
    mask = np.isin(dataset.labels, classes)
    return _make_split(dataset, mask, "class", classes)


def split_from_forget_indices(dataset, forget_indices, mode, forget_classes=()):
    mask = np.zeros(len(dataset), dtype=bool)
    mask[np.asarray(forget_indices, dtype=np.int64)] = True
    return _make_split(dataset, mask, mode, forget_classes)


def split_random_unlearn(dataset, fraction, rng):
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    N = len(dataset)
    n_forget = int(np.floor(fraction * N + 0.5))
    if not 0 < n_forget < N:
        raise ValueError(f"fraction {fraction} of {N} samples gives an empty side")
    chosen = rng.choice(N, size=n_forget, replace=False)
    mask = np.zeros(N, dtype=bool)
    mask[chosen] = True
    return _make_split(dataset, mask, "random")


def retain_class_prior(N, class_counts, forget_counts):
    """Retain-set class prior from global and forget-set counts.

    Evaluates ``(N p(y=c) - N_f p(y_f=c)) / (N - N_f)`` with ``p(y=c) = N^c/N``
    and ``p(y_f=c) = N_f^c/N_f``, which equals ``N_r^c / N_r``.
    """
    class_counts = np.asarray(class_counts, dtype=np.int64)
    forget_counts = np.asarray(forget_counts, dtype=np.int64)
    if np.any(forget_counts > class_counts) or np.any(forget_counts < 0):
        raise ValueError("forget counts must lie within [0, class counts]")
    if int(class_counts.sum()) != N:
        raise ValueError(f"class counts sum to {class_counts.sum()}, expected N={N}")
    N_f = int(forget_counts.sum())
    if N_f >= N:
        raise ValueError("forget set covers the whole dataset")
    # exact rationals: the float result is the correctly rounded N_r^c / N_r
    out = np.empty(len(class_counts))
    for c, (n_c, nf_c) in enumerate(zip(class_counts.tolist(), forget_counts.tolist())):
        p_global = Fraction(n_c, N)
        p_forget = Fraction(nf_c, N_f) if N_f else Fraction(0)
        out[c] = float((N * p_global - N_f * p_forget) / (N - N_f))
    return out


# ------------------------------------------------------------------- CSV I/O

def dataset_to_csv_text(dataset):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{j}" for j in range(dataset.dim)] + ["label"])
    for row, y in zip(dataset.features, dataset.labels):
        writer.writerow([format(float(v), ".17g") for v in row] + [int(y)])
    return buf.getvalue()


def write_dataset_csv(dataset, path):
    Path(path).write_bytes(dataset_to_csv_text(dataset).encode("utf-8"))


def read_dataset_csv(path, n_classes=None, access_log=None, stage=None):
    if access_log is not None:
        access_log.record(stage, path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "label" or header[:-1] != [f"f{j}" for j in range(len(header) - 1)]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [r for r in reader if r]
    if rows:
        feats = np.array([[float(v) for v in r[:-1]] for r in rows])
        labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    else:
        feats = np.empty((0, len(header) - 1))
        labels = np.empty(0, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if len(labels) else 1
    return LabeledDataset(feats, labels, n_classes)


# ------------------------------------------------------------ access control

class AccessLog:
    """Records which files were opened and which dataset rows were read."""

    def __init__(self):
        self.files = []
        self.indices = set()

    def record(self, stage, path):
        self.files.append((stage or "", str(path)))

    def files_for(self, stage):
        return [p for s, p in self.files if s == stage]


class TrackedRows:
    """Row container that logs the global index of every row handed out."""

    def __init__(self, array, global_indices, log):
        self._array = np.asarray(array, dtype=np.float64)
        self._index = np.asarray(global_indices, dtype=np.int64)
        if len(self._array) != len(self._index):
            raise ValueError("one global index per row is required")
        self.log = log

    def __len__(self):
        return len(self._array)

    @property
    def shape(self):
        return self._array.shape

    def __getitem__(self, idx):
        self.log.indices.update(np.atleast_1d(self._index[idx]).tolist())
        return self._array[idx]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self[:], dtype=dtype)
