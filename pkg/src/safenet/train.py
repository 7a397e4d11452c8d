"""
Training protocol and evaluation: contiguous per-recording splits, Adam,
early stopping with best-checkpoint restore, and the RMSE / MAE / PCC / R²
metric suite in degrees.
"""

import json
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
import structlog
from scipy import stats as scipy_stats

from safenet import metrics
from safenet.custom_exceptions import EmptyDatasetError, NonFiniteLossError, PreconditionError, SplitError
from safenet.diffcore import FloatArray, IntArray, Tape, Tensor, backward
from safenet.dsp import WindowedDataset, ZScoreStats, fit_zscore, inverse_zscore, zscore
from safenet.model import Network, compute_loss
from safenet.schemas import AblationReport, JointMetrics, LossWeights, MetricReport, SplitSpec, TrainConfig

logger: structlog.stdlib.BoundLogger = structlog.get_logger()


def split(dataset: WindowedDataset, spec: SplitSpec) -> tuple[WindowedDataset, WindowedDataset, WindowedDataset]:
    """
    Contiguous train / val / test blocks of every recording stream, in time order.

    With the default 3:1:1 ratio a 100-window stream splits 60 / 20 / 20;
    rounding leftovers go to the test block.
    """
    parts: tuple[list[IntArray], list[IntArray], list[IntArray]] = ([], [], [])
    for stream in np.unique(dataset.streams):
        index = np.flatnonzero(dataset.streams == stream)
        n = index.size
        if n < spec.parts:
            logger.error("Stream too short to split", stream=int(stream), windows=n, tag="split_error")
            raise SplitError(f"recording stream {stream} has {n} windows, at least {spec.parts} are needed")
        n_train = n * spec.train // spec.parts
        n_val = n * spec.val // spec.parts
        parts[0].append(index[:n_train])
        parts[1].append(index[n_train : n_train + n_val])
        parts[2].append(index[n_train + n_val :])

    train, val, test = (dataset.subset(np.concatenate(p)) for p in parts)
    return train, val, test


@dataclass
class PreparedSplits:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    emg_stats: ZScoreStats
    angle_stats: ZScoreStats

    def by_name(self, name: str) -> WindowedDataset:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def standardize(dataset: WindowedDataset, emg_stats: ZScoreStats, angle_stats: ZScoreStats) -> WindowedDataset:
    return WindowedDataset(
        zscore(dataset.windows, emg_stats),
        zscore(dataset.targets, angle_stats),
        dataset.labels,
        dataset.streams,
        dataset.conditions,
        dataset.L,
        dataset.step,
    )


def prepare_splits(dataset: WindowedDataset, spec: SplitSpec) -> PreparedSplits:
    """Split, then standardize every part with statistics of the training part only."""
    train, val, test = split(dataset, spec)
    emg_stats = fit_zscore(train.windows)
    angle_stats = fit_zscore(train.targets)
    return PreparedSplits(
        *(standardize(part, emg_stats, angle_stats) for part in (train, val, test)),
        emg_stats=emg_stats,
        angle_stats=angle_stats,
    )


@dataclass
class AdamState:
    m: list[FloatArray]
    v: list[FloatArray]
    t: int = 0

    @classmethod
    def zeros(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.values) for p in params], [np.zeros_like(p.values) for p in params])


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[FloatArray]],
    moments: AdamState,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Sequence[Tensor]:
    """Bias-corrected Adam update of `params` in place; a missing gradient counts as zero."""
    if t < 1:
        raise PreconditionError(f"Adam step counter starts at 1, got {t}")
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for i, (param, grad) in enumerate(zip(params, grads)):
        g = np.zeros_like(param.values) if grad is None else grad
        moments.m[i] = beta1 * moments.m[i] + (1.0 - beta1) * g
        moments.v[i] = beta2 * moments.v[i] + (1.0 - beta2) * g * g
        m_hat = moments.m[i] / correction1
        v_hat = moments.v[i] / correction2
        param.values = param.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    moments.t = t
    return params


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class History:
    rows: list[HistoryRow] = field(default_factory=lambda: [])
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.rows)

    def write_csv(self, path: Path, config: Optional[dict[str, Any]] = None) -> None:
        frame = pd.DataFrame([vars(row) for row in self.rows], columns=["epoch", "train_loss", "val_loss", "lr"])
        with path.open("w", newline="") as handle:
            handle.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
            frame.to_csv(handle, index=False, float_format="%.10g")


def _batches(n: int, batch_size: int, order: Optional[IntArray] = None) -> Iterator[IntArray]:
    index = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield index[start : start + batch_size]


def evaluate_loss(model: Network, data: WindowedDataset, weights: LossWeights, batch_size: int) -> float:
    model.eval()
    total = 0.0
    for index in _batches(len(data), batch_size):
        out = model(Tensor(data.windows[index]))
        total += compute_loss(out, Tensor(data.targets[index]), data.labels[index], weights).total.item() * len(index)
    return total / len(data)


def fit(
    model: Network,
    train: WindowedDataset,
    val: WindowedDataset,
    cfg: TrainConfig,
    weights: Optional[LossWeights] = None,
) -> tuple[Network, History]:
    """
    Seeded mini-batch training.

    Validation loss is measured after every epoch; `early_stop_patience`
    epochs without improvement stop training and the best-validation weights
    are restored. The learning rate is multiplied by `lr_decay_factor` after
    every epoch whose training loss did not improve on the previous one.
    """
    if not len(train) or not len(val):
        raise EmptyDatasetError(f"training needs non-empty splits, got {len(train)} train and {len(val)} val windows")
    weights = weights or model.cfg.loss
    log = logger.bind(train_windows=len(train), val_windows=len(val), batch_size=cfg.batch_size)

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    moments = AdamState.zeros(params)
    lr = cfg.lr_init
    step = 0
    history = History()
    best_val = math.inf
    best_state = model.state_dict()
    stale = 0
    previous_train = math.inf

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        running = 0.0
        for batch_index, index in enumerate(_batches(len(train), cfg.batch_size, rng.permutation(len(train)))):
            with Tape() as tape:
                out = model(Tensor(train.windows[index]))
                loss = compute_loss(out, Tensor(train.targets[index]), train.labels[index], weights)
            value = loss.total.item()
            if not math.isfinite(value):
                log.error("Non-finite loss", epoch=epoch, batch_index=batch_index, value=value, tag="non_finite_loss")
                raise NonFiniteLossError(batch_index, epoch, value)

            backward(tape, loss.total, params)
            step += 1
            adam_step(params, [p.grad for p in params], moments, step, lr)
            running += value * len(index)
            metrics.batches_run.inc()

        train_loss = running / len(train)
        val_loss = evaluate_loss(model, val, weights, cfg.batch_size)
        history.rows.append(HistoryRow(epoch, train_loss, val_loss, lr))
        log.info("Epoch finished", epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr, tag="epoch")
        metrics.epochs_run.inc()
        metrics.train_loss.set(train_loss)
        metrics.val_loss.set(val_loss)
        metrics.learning_rate.set(lr)

        if val_loss < best_val:
            best_val = val_loss
            best_state = model.state_dict()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                history.stopped_early = True
                metrics.early_stops.inc()
                log.info("Early stop", epoch=epoch, best_epoch=history.best_epoch, tag="early_stop")
                break

        if train_loss >= previous_train:
            lr *= cfg.lr_decay_factor
        previous_train = train_loss

    model.load_state_dict(best_state)
    model.eval()
    return model, history


def predict(model: Network, data: WindowedDataset, batch_size: int = 50) -> tuple[FloatArray, Optional[FloatArray]]:
    """Standardized angle predictions and identity logits (None for a regression-only network)."""
    model.eval()
    angles: list[FloatArray] = []
    logits: list[FloatArray] = []
    for index in _batches(len(data), batch_size):
        out = model(Tensor(data.windows[index]))
        angles.append(out.angles.values)
        if out.logits is not None:
            logits.append(out.logits.values)
    return np.concatenate(angles), np.concatenate(logits) if logits else None


def joint_metrics(pred: FloatArray, target: FloatArray) -> JointMetrics:
    """RMSE and MAE in the units given; PCC and R² are None where a variance vanishes."""
    error = pred - target
    rmse = float(np.sqrt(np.mean(error**2)))
    mae = float(np.mean(np.abs(error)))

    pcc: Optional[float] = None
    if pred.std() > 0 and target.std() > 0:
        pcc = float(np.clip(np.corrcoef(pred, target)[0, 1], -1.0, 1.0))
    sst = float(np.sum((target - target.mean()) ** 2))
    r2 = 1.0 - float(np.sum(error**2)) / sst if sst > 0 else None
    return JointMetrics(rmse=rmse, mae=mae, pcc=pcc, r2=r2)


def _mean_of(values: list[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def _joint_table(pred: FloatArray, target: FloatArray, names: list[str]) -> tuple[dict[str, JointMetrics], JointMetrics]:
    joints = {name: joint_metrics(pred[:, j], target[:, j]) for j, name in enumerate(names)}
    values = list(joints.values())
    mean = JointMetrics(
        rmse=float(np.mean([m.rmse for m in values])),
        mae=float(np.mean([m.mae for m in values])),
        pcc=_mean_of([m.pcc for m in values]),
        r2=_mean_of([m.r2 for m in values]),
    )
    return joints, mean


def evaluate(
    model: Network,
    test: WindowedDataset,
    angle_stats: ZScoreStats,
    *,
    joint_names: Optional[list[str]] = None,
    condition_names: Optional[list[str]] = None,
    batch_size: int = 50,
    config: Optional[dict[str, Any]] = None,
) -> MetricReport:
    """
    Metrics over the concatenated test predictions, per joint, in degrees.

    Undefined PCC / R² values are reported as missing and listed in `flags`.
    """
    if not len(test):
        raise EmptyDatasetError("cannot evaluate an empty dataset")
    names = joint_names or [f"joint_{j}" for j in range(test.n_joints)]
    conditions = condition_names or [f"condition_{c}" for c in range(int(test.conditions.max()) + 1)]

    pred_z, logits = predict(model, test, batch_size)
    pred = inverse_zscore(pred_z, angle_stats)
    target = inverse_zscore(test.targets, angle_stats)

    joints, mean = _joint_table(pred, target, names)
    flags = [f"pcc undefined for {name}" for name, m in joints.items() if m.pcc is None]
    flags += [f"r2 undefined for {name}" for name, m in joints.items() if m.r2 is None]

    per_condition: dict[str, dict[str, JointMetrics]] = {}
    for c in np.unique(test.conditions):
        mask = test.conditions == c
        table, cond_mean = _joint_table(pred[mask], target[mask], names)
        per_condition[conditions[int(c)]] = {**table, "mean": cond_mean}

    per_subject: dict[str, dict[str, float]] = {}
    for s in np.unique(test.labels):
        mask = test.labels == s
        table, subject_mean = _joint_table(pred[mask], target[mask], names)
        per_subject[f"subject_{int(s):02d}"] = {name: m.rmse for name, m in table.items()} | {"mean": subject_mean.rmse}

    accuracy = float(np.mean(np.argmax(logits, axis=1) == test.labels)) if logits is not None else None
    report = MetricReport(
        n_windows=len(test),
        joints=joints,
        mean=mean,
        identity_accuracy=accuracy,
        per_condition=per_condition,
        per_subject_rmse=per_subject,
        flags=flags,
        config=config,
    )
    logger.info("Evaluated", windows=len(test), rmse=mean.rmse, r2=mean.r2, accuracy=accuracy, tag="evaluated")
    return report


def compare_ablation(with_safd: Sequence[MetricReport], without_safd: Sequence[MetricReport]) -> AblationReport:
    """
    Pair per-subject mean RMSEs of runs with and without the decomposition
    stage and test the difference with a one-way ANOVA.

    Run i of each list is paired with run i of the other.
    """
    if len(with_safd) != len(without_safd) or not with_safd:
        raise PreconditionError("compare_ablation needs equally many runs on both sides, at least one")

    subjects: list[str] = []
    rmse_with: list[float] = []
    rmse_without: list[float] = []
    for run, (a, b) in enumerate(zip(with_safd, without_safd)):
        for subject in sorted(set(a.per_subject_rmse) & set(b.per_subject_rmse)):
            subjects.append(subject if len(with_safd) == 1 else f"run_{run}/{subject}")
            rmse_with.append(a.per_subject_rmse[subject]["mean"])
            rmse_without.append(b.per_subject_rmse[subject]["mean"])

    f_statistic: Optional[float] = None
    p_value: Optional[float] = None
    if len(subjects) >= 2 and np.ptp(rmse_with + rmse_without) > 0:
        result = scipy_stats.f_oneway(rmse_with, rmse_without)
        f_statistic, p_value = float(result.statistic), float(result.pvalue)

    return AblationReport(
        subjects=subjects,
        rmse_with=rmse_with,
        rmse_without=rmse_without,
        median_with=float(np.median(rmse_with)) if rmse_with else math.nan,
        median_without=float(np.median(rmse_without)) if rmse_without else math.nan,
        f_statistic=f_statistic,
        p_value=p_value,
    )
