"""End-to-end experiments: meta-training, fine-tune evaluation, and reports.

Two experiment families are built in. The sinusoid family meta-trains on
three regression tasks (amplitudes 2, 6, 10) and evaluates by fine-tuning on
freshly drawn amplitudes; the digit family meta-trains on two 3-class tasks
(digits 0-2 and 7-9) and evaluates on fresh 5-way 10-shot tasks.

Every evaluation trial's task is a pure function of (master seed, trial
index), so algorithms compared under one seed see identical trial tasks and
re-runs reproduce output files byte for byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .config import ALGORITHMS, EXPERIMENTS
from .costs import ChannelConfig, CostLedger, EnergyConfig
from .engine import (
    AgentState,
    BackwardConfig,
    BackwardRunResult,
    LocalFitResult,
    LocalSolverConfig,
    average_params,
    run_meta_backward,
    train_local_optimum,
)
from .errors import EmptyInputError, InvalidConfigError
from .imaml import ImamlConfig, run_imaml
from .mnist import MnistCorpus, load_or_fallback
from .rng import (
    STREAM_INIT,
    STREAM_LOCAL,
    STREAM_RANDOM_INIT,
    STREAM_TASK,
    STREAM_TRIAL,
    derive_rng,
    derive_seed,
)
from .svgplot import Series, emit_svg_plot
from .tasks import (
    ClassificationTask,
    SinusoidTask,
    TaskDataset,
    build_classification_task,
    sample_finetune_task,
    sample_sinusoid,
    split_counts,
)

SINUSOID_META_AMPLITUDES = (2.0, 6.0, 10.0)
MNIST_META_CLASS_SETS = ((0, 1, 2), (7, 8, 9))
MNIST_META_TRAIN_TOTAL = 400
MNIST_META_TEST_TOTAL = 100
FINETUNE_TEST_PER_CLASS = 20

_EXPERIMENT_DEFAULTS = {
    # experiment -> (trials, shots, finetune steps, finetune lr, local lr)
    "sinusoid": (500, 40, 32, 0.01, 0.01),
    "mnist": (100, 10, 100, 0.1, 0.5),
}


@dataclass(frozen=True)
class FinetuneConfig:
    shots: int
    steps: int
    lr: float

    def __post_init__(self) -> None:
        if self.shots < 1 or self.steps < 0 or self.lr <= 0:
            raise ValueError("shots must be >= 1, steps >= 0, lr > 0")


@dataclass
class ExperimentConfig:
    experiment: str = "sinusoid"
    algorithm: str = "meta_backward"
    trials: int = 500
    seed: int = 0
    output_dir: str = "out"
    data_dir: str | None = None
    finetune: FinetuneConfig = field(default_factory=lambda: FinetuneConfig(40, 32, 0.01))
    sinusoid_input_range: tuple[float, float] = (-5.0, 5.0)
    sinusoid_phase_mode: str = "fixed"
    sinusoid_train_size: int = 1000
    backward: BackwardConfig = field(default_factory=BackwardConfig)
    imaml: ImamlConfig = field(default_factory=ImamlConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise InvalidConfigError(f"unknown experiment {self.experiment!r}")
        if self.algorithm not in ALGORITHMS:
            raise InvalidConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.trials < 1:
            raise InvalidConfigError("trials must be >= 1")

    @classmethod
    def from_options(cls, options: Mapping[str, object]) -> "ExperimentConfig":
        """Build a config from flat schema keys, applying per-experiment defaults."""
        opts = dict(options)

        def take(key, default):
            return opts.pop(key) if key in opts else default

        experiment = take("experiment", "sinusoid")
        if experiment not in _EXPERIMENT_DEFAULTS:
            raise InvalidConfigError(f"unknown experiment {experiment!r}")
        d_trials, d_shots, d_steps, d_lr, d_local_lr = _EXPERIMENT_DEFAULTS[experiment]

        local = LocalSolverConfig(
            steps=take("local.steps", 2000),
            lr=take("local.lr", d_local_lr),
            grad_tol=take("local.grad_tol", 1e-3),
            batch_size=take("local.batch_size", 100),
        )
        backward = BackwardConfig(
            rounds=take("backward.rounds", 50),
            alpha=take("backward.alpha", 0.01),
            batch_size=take("backward.batch_size", 100),
            gamma=take("backward.gamma", 0.85),
            delta_max=take("backward.delta_max", None),
            local=local,
        )
        imaml = ImamlConfig(
            outer_steps=take("imaml.X", 50),
            inner_steps=take("imaml.Y", 50),
            cg_steps=take("imaml.cg_steps", 5),
            lam=take("imaml.lambda", 2.0),
            inner_lr=take("imaml.inner_lr", 0.01),
            outer_lr=take("imaml.outer_lr", 0.01),
            batch_size=take("imaml.batch_size", 100),
        )
        channel = ChannelConfig(
            bandwidth_hz=take("channel.bandwidth_hz", 5000.0),
            tx_power_w=take("channel.tx_power_w", 2.0),
            noise_psd=take("channel.noise_psd", 1e-4),
            bits_per_element=take("channel.bits_per_element", 32),
            per_agent_broadcast=take("channel.per_agent_broadcast", True),
        )
        energy = EnergyConfig(
            device_watts=take("energy.device_watts", 15.0),
            seconds_per_grad_eval=take("energy.seconds_per_grad_eval", 1e-3),
            timing=take("energy.timing", "analytic"),
        )
        cfg = cls(
            experiment=experiment,
            algorithm=take("algorithm", "meta_backward"),
            trials=take("trials", d_trials),
            seed=take("seed", 0),
            output_dir=take("output_dir", "out"),
            data_dir=take("data_dir", None),
            finetune=FinetuneConfig(
                shots=take("finetune.shots", d_shots),
                steps=take("finetune.steps", d_steps),
                lr=take("finetune.lr", d_lr),
            ),
            sinusoid_input_range=take("sinusoid.input_range", (-5.0, 5.0)),
            sinusoid_phase_mode=take("sinusoid.phase_mode", "fixed"),
            sinusoid_train_size=take("sinusoid.train_size", 1000),
            backward=backward,
            imaml=imaml,
            channel=channel,
            energy=energy,
        )
        if opts:
            raise InvalidConfigError(f"unknown option(s): {sorted(opts)}")
        return cfg


@dataclass
class EvalRecord:
    trial: int
    task: str
    loss: float
    accuracy: float | None = None


def experiment_spec(cfg: ExperimentConfig) -> nn.MlpSpec:
    if cfg.experiment == "sinusoid":
        return nn.MlpSpec((1, 40, 40, 1), head="mse")
    return nn.MlpSpec((784, 8, 8, 10), head="softmax_ce")


def _fitted_class_totals(
    corpus: MnistCorpus, class_set: Sequence[int], train_total: int, test_total: int
) -> tuple[int, int]:
    """Scale requested totals down so every class fits in the corpus."""
    k = len(class_set)
    avail = min(len(corpus.class_indices(c)) for c in class_set)

    def max_per_class(tr: int, te: int) -> int:
        return max(a + b for a, b in zip(split_counts(tr, k), split_counts(te, k)))

    if max_per_class(train_total, test_total) <= avail:
        return train_total, test_total
    f = avail / max_per_class(train_total, test_total)
    train_total = max(k, int(train_total * f))
    test_total = max(k, int(test_total * f))
    while max_per_class(train_total, test_total) > avail and train_total > k:
        train_total -= k
    return train_total, test_total


def meta_training_tasks(cfg: ExperimentConfig) -> list[TaskDataset]:
    """The fixed task roster the agents own during meta-training."""
    if cfg.experiment == "sinusoid":
        return [
            sample_sinusoid(
                SinusoidTask(
                    amplitude=amp,
                    input_range=cfg.sinusoid_input_range,
                    train_size=cfg.sinusoid_train_size,
                    seed=derive_seed(cfg.seed, STREAM_TASK, i),
                )
            )
            for i, amp in enumerate(SINUSOID_META_AMPLITUDES)
        ]
    corpus = load_or_fallback(cfg.data_dir, "train")
    tasks = []
    for i, class_set in enumerate(MNIST_META_CLASS_SETS):
        train_total, test_total = _fitted_class_totals(
            corpus, class_set, MNIST_META_TRAIN_TOTAL, MNIST_META_TEST_TOTAL
        )
        task = ClassificationTask.from_totals(
            class_set, train_total, test_total, seed=derive_seed(cfg.seed, STREAM_TASK, i)
        )
        tasks.append(build_classification_task(corpus, task))
    return tasks


@dataclass
class PreparedExperiment:
    """Everything the algorithm branches share: tasks, the common initial
    model, and the offline per-task fits (computed once, reused everywhere)."""

    cfg: ExperimentConfig
    spec: nn.MlpSpec
    tasks: list[TaskDataset]
    test_corpus: MnistCorpus | None
    init: np.ndarray
    fits: list[LocalFitResult]

    @property
    def local_average(self) -> np.ndarray:
        return average_params([f.phi for f in self.fits])


def prepare_experiment(cfg: ExperimentConfig) -> PreparedExperiment:
    spec = experiment_spec(cfg)
    tasks = meta_training_tasks(cfg)
    test_corpus = None
    if cfg.experiment == "mnist":
        test_corpus = load_or_fallback(cfg.data_dir, "test")
    init = nn.init_params(spec, derive_rng(cfg.seed, STREAM_INIT))
    # Same agent construction as the engine, so injected fits match exactly
    # what a standalone engine run would compute.
    fits = []
    for i, task in enumerate(tasks):
        agent = AgentState(
            task_id=i,
            spec=spec,
            dataset=task,
            phi=np.array(init, copy=True),
            rng=derive_rng(cfg.seed, STREAM_LOCAL, i),
        )
        fits.append(train_local_optimum(agent, cfg.backward.local))
    return PreparedExperiment(cfg, spec, tasks, test_corpus, init, fits)


@dataclass
class MetaModel:
    algorithm: str
    theta: np.ndarray
    ledger: CostLedger
    backward: BackwardRunResult | None = None


def train_meta_model(prep: PreparedExperiment, algorithm: str | None = None) -> MetaModel:
    cfg = prep.cfg
    algorithm = algorithm or cfg.algorithm
    if algorithm == "meta_backward":
        result = run_meta_backward(
            prep.tasks,
            prep.spec,
            cfg.backward,
            cfg.seed,
            channel=cfg.channel,
            energy=cfg.energy,
            init=prep.init,
            local_fits=prep.fits,
        )
        return MetaModel(algorithm, result.theta, result.ledger, backward=result)
    if algorithm == "imaml":
        result = run_imaml(
            prep.tasks,
            prep.spec,
            cfg.imaml,
            prep.local_average,
            cfg.seed,
            channel=cfg.channel,
            energy=cfg.energy,
        )
        return MetaModel(algorithm, result.theta, result.ledger)
    if algorithm == "avg_init":
        ledger = CostLedger(channel=cfg.channel)
        evals = sum(f.grad_evals for f in prep.fits)
        ledger.record_round(
            0,
            uplinks=len(prep.tasks),
            downlinks=0,
            d=prep.spec.param_count,
            grad_evals=evals,
            wall_time_s=cfg.energy.wall_time(evals, 0.0),
            device_watts=cfg.energy.device_watts,
        )
        return MetaModel(algorithm, prep.local_average, ledger)
    if algorithm == "random_init":
        theta = nn.init_params(prep.spec, derive_rng(cfg.seed, STREAM_RANDOM_INIT))
        return MetaModel(algorithm, theta, CostLedger(channel=cfg.channel))
    raise InvalidConfigError(f"unknown algorithm {algorithm!r}")


def masked_accuracy(
    spec: nn.MlpSpec, params: np.ndarray, batch: nn.Batch, class_set: Sequence[int]
) -> float:
    """Accuracy with the prediction restricted to the task's own classes."""
    probs = nn.forward(spec, params, batch.inputs)
    cols = np.asarray(class_set, dtype=np.intp)
    pred = cols[np.argmax(probs[:, cols], axis=1)]
    return float(np.mean(pred == batch.targets))


def finetune_and_eval(
    spec: nn.MlpSpec,
    theta: np.ndarray,
    task: TaskDataset,
    ft: FinetuneConfig,
    trial: int = 0,
) -> EvalRecord:
    """Adapt theta on the task's few-shot train split and score the test split.

    steps=0 evaluates theta as-is (zero-shot). Fine-tuning is full-batch SGD,
    so results depend only on theta and the task.
    """
    if len(task.train) < 1 or len(task.test) < 1:
        raise EmptyInputError("task needs non-empty train and test splits")
    params = theta
    if ft.steps > 0:
        # Full batch: the rng is never consumed.
        params = nn.sgd(
            spec, theta, task.train, ft.steps, ft.lr, None, np.random.default_rng(0)
        )
    test_loss = nn.loss(spec, params, task.test)
    accuracy = None
    if spec.head == "softmax_ce":
        accuracy = masked_accuracy(spec, params, task.test, task.class_set)
    return EvalRecord(trial=trial, task=task.descriptor, loss=test_loss, accuracy=accuracy)


def trial_task(cfg: ExperimentConfig, trial: int, test_corpus: MnistCorpus | None) -> TaskDataset:
    """The fine-tune task for one trial; a pure function of (seed, trial)."""
    rng = derive_rng(cfg.seed, STREAM_TRIAL, trial)
    if cfg.experiment == "sinusoid":
        return sample_finetune_task(
            rng,
            "sinusoid",
            cfg.finetune.shots,
            input_range=cfg.sinusoid_input_range,
            phase_mode=cfg.sinusoid_phase_mode,
        )
    return sample_finetune_task(
        rng,
        "classification",
        cfg.finetune.shots,
        test_corpus,
        test_per_class=FINETUNE_TEST_PER_CLASS,
    )


def evaluation_trials(
    prep: PreparedExperiment, theta: np.ndarray, trials: int | None = None
) -> list[EvalRecord]:
    cfg = prep.cfg
    n = cfg.trials if trials is None else trials
    records = []
    for t in range(n):
        task = trial_task(cfg, t, prep.test_corpus)
        records.append(finetune_and_eval(prep.spec, theta, task, cfg.finetune, trial=t))
    return records


def emit_cdf(records: Sequence[EvalRecord], metric: str = "loss") -> list[tuple[float, float]]:
    """Empirical CDF points (sorted value, cumulative fraction i/n)."""
    if len(records) == 0:
        raise EmptyInputError("no records")
    if metric == "loss":
        values = [r.loss for r in records]
    elif metric == "accuracy":
        if any(r.accuracy is None for r in records):
            raise ValueError("records carry no accuracy")
        values = [r.accuracy for r in records]
    else:
        raise ValueError(f"unknown metric {metric!r}")
    values = sorted(values)
    n = len(values)
    return [(v, (i + 1) / n) for i, v in enumerate(values)]


def median_loss(records: Sequence[EvalRecord]) -> float:
    return float(np.median([r.loss for r in records]))


def write_eval_csv(records: Sequence[EvalRecord], path: str | Path) -> None:
    with_acc = any(r.accuracy is not None for r in records)
    header = "trial,task,loss,accuracy" if with_acc else "trial,task,loss"
    lines = [header]
    for r in records:
        row = f"{r.trial},{r.task},{r.loss!r}"
        if with_acc:
            row += f",{r.accuracy!r}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def write_cdf_csv(
    by_algorithm: Mapping[str, Sequence[EvalRecord]], path: str | Path, metric: str = "loss"
) -> None:
    lines = ["value,fraction,algorithm"]
    for algorithm, records in by_algorithm.items():
        for value, fraction in emit_cdf(records, metric):
            lines.append(f"{value!r},{fraction!r},{algorithm}")
    Path(path).write_text("\n".join(lines) + "\n")


def _cdf_series(name: str, records: Sequence[EvalRecord], metric: str) -> Series:
    pts = emit_cdf(records, metric)
    return Series(name, tuple(p[0] for p in pts), tuple(p[1] for p in pts))


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    model: MetaModel
    records: list[EvalRecord]
    output_dir: Path


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Train (or build) one algorithm's meta-model, evaluate it over
    cfg.trials fine-tune trials, and write eval.csv / cdf.csv / costs.csv
    plus SVG plots under cfg.output_dir."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)

    prep = prepare_experiment(cfg)
    model = train_meta_model(prep)
    records = evaluation_trials(prep, model.theta)

    write_eval_csv(records, out / "eval.csv")
    write_cdf_csv({model.algorithm: records}, out / "cdf.csv", "loss")
    model.ledger.write_csv(out / "costs.csv")
    emit_svg_plot(
        [_cdf_series(model.algorithm, records, "loss")],
        "cdf_lines",
        plots / "cdf_loss.svg",
        title=f"{cfg.experiment}: test-loss CDF",
        xlabel="test loss",
        ylabel="fraction of trials",
    )
    if cfg.experiment == "mnist":
        write_cdf_csv({model.algorithm: records}, out / "cdf_accuracy.csv", "accuracy")
        emit_svg_plot(
            [_cdf_series(model.algorithm, records, "accuracy")],
            "cdf_lines",
            plots / "cdf_accuracy.svg",
            title=f"{cfg.experiment}: accuracy CDF",
            xlabel="test accuracy",
            ylabel="fraction of trials",
        )
    if model.backward is not None:
        model.backward.write_trajectory_csv(out / "trajectory.csv")
    return ExperimentResult(cfg, model, records, out)


@dataclass
class ComparisonResult:
    cfg: ExperimentConfig
    models: dict[str, MetaModel]
    records: dict[str, list[EvalRecord]]
    output_dir: Path


def run_comparison(
    cfg: ExperimentConfig, algorithms: Sequence[str] | None = None
) -> ComparisonResult:
    """Run several algorithms against identical trial tasks and emit combined
    CDF tables, per-algorithm cost tables, and comparison plots."""
    if algorithms is None:
        algorithms = ALGORITHMS
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)

    prep = prepare_experiment(cfg)
    models: dict[str, MetaModel] = {}
    records: dict[str, list[EvalRecord]] = {}
    for algorithm in algorithms:
        model = train_meta_model(prep, algorithm)
        models[algorithm] = model
        records[algorithm] = evaluation_trials(prep, model.theta)
        write_eval_csv(records[algorithm], out / f"eval_{algorithm}.csv")
        model.ledger.write_csv(out / f"costs_{algorithm}.csv")

    write_cdf_csv(records, out / "cdf.csv", "loss")
    emit_svg_plot(
        [_cdf_series(a, records[a], "loss") for a in algorithms],
        "cdf_lines",
        plots / "cdf_loss.svg",
        title=f"{cfg.experiment}: test-loss CDF",
        xlabel="test loss",
        ylabel="fraction of trials",
    )
    if cfg.experiment == "mnist":
        write_cdf_csv(records, out / "cdf_accuracy.csv", "accuracy")
        emit_svg_plot(
            [_cdf_series(a, records[a], "accuracy") for a in algorithms],
            "cdf_lines",
            plots / "cdf_accuracy.svg",
            title=f"{cfg.experiment}: accuracy CDF",
            xlabel="test accuracy",
            ylabel="fraction of trials",
        )

    emit_svg_plot(
        [
            Series(
                a,
                (0.0, 1.0),
                (models[a].ledger.total_comm_energy_j, models[a].ledger.total_compute_energy_j),
            )
            for a in algorithms
        ],
        "grouped_bars",
        plots / "energy.svg",
        title="communication vs compute energy",
        ylabel="energy (J)",
        categories=("comm energy", "compute energy"),
    )
    emit_svg_plot(
        [
            Series(
                a,
                (0.0, 1.0),
                (models[a].ledger.total_comm_time_s, models[a].ledger.total_wall_time_s),
            )
            for a in algorithms
        ],
        "grouped_bars",
        plots / "time.svg",
        title="communication vs compute time",
        ylabel="time (s)",
        categories=("comm time", "compute time"),
    )
    return ComparisonResult(cfg, models, records, out)
