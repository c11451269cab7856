"""Task construction: sinusoid regression and digit classification.

A task is a `TaskDataset`: a train batch the owning agent learns from and a
held-out test batch used only for evaluation. Construction is pure given the
task's seed, so the same task description always yields identical data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientSamplesError
from .mnist import MnistCorpus
from .nn import Batch
from .rng import derive_rng

SINUSOID_INPUT_RANGE = (-5.0, 5.0)
SINUSOID_TRAIN_SIZE = 1000
SINUSOID_TEST_SIZE = 100
FINETUNE_AMPLITUDE_RANGE = (0.1, 10.0)


@dataclass
class TaskDataset:
    """Train/test batches for one task plus a short human-readable descriptor."""

    train: Batch
    test: Batch
    descriptor: str
    class_set: tuple[int, ...] | None = None


@dataclass(frozen=True)
class SinusoidTask:
    """Regression task: y = amplitude * sin(x + phase) on a fixed input range."""

    amplitude: float
    phase: float = 0.0
    input_range: tuple[float, float] = SINUSOID_INPUT_RANGE
    train_size: int = SINUSOID_TRAIN_SIZE
    test_size: int = SINUSOID_TEST_SIZE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        lo, hi = self.input_range
        if not lo < hi:
            raise ValueError("input_range must be a non-empty interval")
        if self.train_size < 1 or self.test_size < 1:
            raise ValueError("train_size and test_size must be positive")


def sample_sinusoid(task: SinusoidTask) -> TaskDataset:
    """Draw a sinusoid task's data: inputs i.i.d. uniform, targets exact."""
    rng = derive_rng(task.seed)
    lo, hi = task.input_range

    def make(n: int) -> Batch:
        x = rng.uniform(lo, hi, (n, 1))
        y = task.amplitude * np.sin(x + task.phase)
        return Batch(x, y)

    return TaskDataset(
        train=make(task.train_size),
        test=make(task.test_size),
        descriptor=f"amp={task.amplitude:.6g}",
    )


def split_counts(total: int, k: int) -> tuple[int, ...]:
    """Split `total` as evenly as possible over k classes, extras to the first."""
    base, rem = divmod(total, k)
    return tuple(base + (1 if i < rem else 0) for i in range(k))


def _as_counts(value: int | Sequence[int], k: int) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * k
    counts = tuple(int(v) for v in value)
    if len(counts) != k:
        raise ValueError(f"expected {k} per-class counts, got {len(counts)}")
    return counts


@dataclass(frozen=True)
class ClassificationTask:
    """N-way digit classification over a fixed 10-way output head.

    Original digit identities are kept as target class indices; only the
    subset of digits present varies between tasks. Per-class counts may be a
    single integer (uniform) or one count per class.
    """

    class_set: tuple[int, ...]
    train_per_class: int | tuple[int, ...]
    test_per_class: int | tuple[int, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        classes = tuple(int(c) for c in self.class_set)
        object.__setattr__(self, "class_set", classes)
        if len(set(classes)) != len(classes):
            raise ValueError(f"duplicate digits in class_set {classes}")
        if any(c < 0 or c > 9 for c in classes):
            raise ValueError("class labels must be digits 0..9")
        train = _as_counts(self.train_per_class, len(classes))
        test = _as_counts(self.test_per_class, len(classes))
        object.__setattr__(self, "train_per_class", train)
        object.__setattr__(self, "test_per_class", test)
        if any(c < 1 for c in train + test):
            raise ValueError("per-class counts must be positive")

    @classmethod
    def from_totals(
        cls, class_set: Sequence[int], train_total: int, test_total: int, seed: int = 0
    ) -> "ClassificationTask":
        k = len(class_set)
        return cls(
            class_set=tuple(class_set),
            train_per_class=split_counts(train_total, k),
            test_per_class=split_counts(test_total, k),
            seed=seed,
        )


def _image_batch(corpus: MnistCorpus, idx: np.ndarray) -> Batch:
    # Pixels normalized to [0, 1] and flattened on extraction.
    x = corpus.images[idx].reshape(len(idx), -1).astype(np.float64) / 255.0
    y = corpus.labels[idx].astype(np.intp)
    return Batch(x, y)


def build_classification_task(corpus: MnistCorpus, task: ClassificationTask) -> TaskDataset:
    """Materialize a classification task with exact, disjoint per-class splits."""
    rng = derive_rng(task.seed)
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for digit, n_train, n_test in zip(task.class_set, task.train_per_class, task.test_per_class):
        pool = corpus.class_indices(digit)
        if len(pool) < n_train + n_test:
            raise InsufficientSamplesError(
                f"class {digit}: need {n_train + n_test} samples, corpus has {len(pool)}"
            )
        order = rng.permutation(len(pool))
        train_idx.append(pool[order[:n_train]])
        test_idx.append(pool[order[n_train : n_train + n_test]])
    classes = "|".join(str(c) for c in task.class_set)
    return TaskDataset(
        train=_image_batch(corpus, np.concatenate(train_idx)),
        test=_image_batch(corpus, np.concatenate(test_idx)),
        descriptor=f"classes={classes}",
        class_set=task.class_set,
    )


def sample_finetune_task(
    rng: np.random.Generator,
    kind: str,
    shots: int,
    corpus: MnistCorpus | None = None,
    *,
    input_range: tuple[float, float] = SINUSOID_INPUT_RANGE,
    phase_mode: str = "fixed",
    test_size: int = SINUSOID_TEST_SIZE,
    n_way: int = 5,
    test_per_class: int = 20,
) -> TaskDataset:
    """Draw a fresh evaluation task from the task distribution.

    Sinusoid: amplitude uniform over [0.1, 10], `shots` training samples.
    Classification: `n_way` distinct digits drawn without replacement, `shots`
    training samples per class plus a held-out test split.
    """
    if shots < 1:
        raise ValueError("shots must be positive")
    if kind == "sinusoid":
        amplitude = float(rng.uniform(*FINETUNE_AMPLITUDE_RANGE))
        phase = float(rng.uniform(0.0, np.pi)) if phase_mode == "random" else 0.0
        task = SinusoidTask(
            amplitude=amplitude,
            phase=phase,
            input_range=input_range,
            train_size=shots,
            test_size=test_size,
            seed=int(rng.integers(0, 2**63)),
        )
        return sample_sinusoid(task)
    if kind == "classification":
        if corpus is None:
            raise ValueError("classification tasks need a corpus")
        classes = tuple(sorted(int(c) for c in rng.choice(10, size=n_way, replace=False)))
        task = ClassificationTask(
            class_set=classes,
            train_per_class=shots,
            test_per_class=test_per_class,
            seed=int(rng.integers(0, 2**63)),
        )
        return build_classification_task(corpus, task)
    raise ValueError(f"unknown task kind {kind!r}")
