"""Mini-batch training loop with patience-based learning-rate decay.

One schedule drives every model: validation BCE is checked once per epoch,
a strictly lower value is an improvement (ties are not), and when the best
value is `patience` epochs old the learning rate is divided by `lr_factor`.
After `max_reductions` such cuts, one further exhausted patience window
stops training, and the weights from the best epoch are restored.

The loop itself is written against a small task protocol so it can be
exercised with scripted validation curves; the two concrete tasks wrap the
slice models (LR, MLP) and the sequence model (LSTM).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .nn import (
    Model,
    MLPModel,
    LSTMModel,
    RMSPropState,
    bce_loss,
    clamp_probs,
    rmsprop_step,
    sequence_dropout,
    snapshot_params,
)
from .pivot import MatrixState, PatientMatrix

HISTORY_HEADER = "epoch,train_loss,val_bce,lr,reduced"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    patience: int = 15
    lr_factor: float = 5.0
    max_reductions: int = 2
    max_epochs: int = 500
    dropout_rate: float = 0.2
    per_timestep_dropout: bool = False
    positive_weight: float | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr_factor <= 1:
            raise ValueError("lr_factor must be > 1")
        if self.max_reductions < 0:
            raise ValueError("max_reductions must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.positive_weight is not None and self.positive_weight <= 0:
            raise ValueError("positive_weight must be > 0 when set")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float
    reduced: bool


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stop_reason: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    @property
    def reduction_epochs(self) -> list[int]:
        return [r.epoch for r in self.records if r.reduced]

    def to_csv(self, path: str | Path) -> None:
        lines = [HISTORY_HEADER]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.train_loss!r},{r.val_loss!r},"
                f"{r.learning_rate!r},{int(r.reduced)}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class TrainableTask(Protocol):
    def run_epoch(self, epoch: int) -> float:
        """Run one pass over the training data; return the mean train loss."""

    def validation_loss(self) -> float: ...

    def snapshot(self) -> object: ...

    def restore(self, state: object) -> None: ...

    def reduce_learning_rate(self, factor: float) -> None: ...

    @property
    def learning_rate(self) -> float: ...


def run_schedule(task: TrainableTask, cfg: TrainConfig) -> TrainHistory:
    """Drive a task through the patience/decay schedule.

    With a constant validation curve the best epoch is 1, reductions land
    at epochs 1 + patience and 1 + 2*patience, and training stops at
    1 + 3*patience (for the default two reductions).
    """
    history = TrainHistory()
    best_state = task.snapshot()
    since_best = 0
    reductions = 0
    for epoch in range(1, cfg.max_epochs + 1):
        train_loss = float(task.run_epoch(epoch))
        val_loss = float(task.validation_loss())
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_state = task.snapshot()
            since_best = 0
        else:
            since_best += 1
        reduced = False
        stop = False
        if since_best >= cfg.patience:
            if reductions >= cfg.max_reductions:
                stop = True
            else:
                task.reduce_learning_rate(cfg.lr_factor)
                reductions += 1
                since_best = 0
                reduced = True
        history.records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=val_loss,
                learning_rate=task.learning_rate,
                reduced=reduced,
            )
        )
        if stop:
            history.stop_reason = "patience"
            break
    else:
        history.stop_reason = "max_epochs"
    task.restore(best_state)
    return history


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, epoch])


def init_rng(seed: int) -> np.random.Generator:
    """Generator used for weight initialization under a run seed."""
    return np.random.default_rng([seed, 0])


def _check_finite(loss: float, params: Mapping[str, np.ndarray],
                  epoch: int, batch: int) -> None:
    if np.isfinite(loss):
        return
    norms = {name: float(np.abs(value).max()) for name, value in params.items()}
    raise RuntimeError(
        f"non-finite training loss at epoch {epoch}, batch {batch}; "
        f"max |param| by name: {norms}"
    )


def _sample_weights(y: np.ndarray, positive_weight: float | None) -> np.ndarray | None:
    if positive_weight is None:
        return None
    return np.where(y > 0.5, positive_weight, 1.0)


class SliceTask:
    """Training task for models scored one time-slice at a time."""

    def __init__(
        self,
        model: MLPModel,
        train_X: np.ndarray,
        train_y: np.ndarray,
        val_X: np.ndarray,
        val_y: np.ndarray,
        cfg: TrainConfig,
        seed: int,
    ):
        self.model = model
        self.train_X = np.asarray(train_X, dtype=float)
        self.train_y = np.asarray(train_y, dtype=float)
        self.val_X = np.asarray(val_X, dtype=float)
        self.val_y = np.asarray(val_y, dtype=float)
        self.cfg = cfg
        self.seed = seed
        self.opt = RMSPropState.for_params(
            model.params, learning_rate=cfg.learning_rate, rho=cfg.rho, eps=cfg.eps
        )

    def run_epoch(self, epoch: int) -> float:
        rng = _epoch_rng(self.seed, epoch)
        order = rng.permutation(self.train_X.shape[0])
        total = 0.0
        for bi, start in enumerate(range(0, order.size, self.cfg.batch_size)):
            idx = order[start : start + self.cfg.batch_size]
            X = sequence_dropout(self.train_X[idx], self.cfg.dropout_rate, rng)
            y = self.train_y[idx]
            loss, grads = self.model.loss_and_grads(
                X, y, sample_weights=_sample_weights(y, self.cfg.positive_weight)
            )
            _check_finite(loss, self.model.params, epoch, bi)
            rmsprop_step(self.model.params, grads, self.opt)
            total += loss * idx.size
        return total / order.size

    def validation_loss(self) -> float:
        probs = predict_slices(self.model, self.val_X)
        return bce_loss(probs, self.val_y)

    def snapshot(self) -> dict[str, np.ndarray]:
        return snapshot_params(self.model.params)

    def restore(self, state: dict[str, np.ndarray]) -> None:
        self.model.params = snapshot_params(state)

    def reduce_learning_rate(self, factor: float) -> None:
        self.opt.learning_rate /= factor

    @property
    def learning_rate(self) -> float:
        return self.opt.learning_rate


def predict_slices(
    model: MLPModel, X: np.ndarray, chunk: int = 8192
) -> np.ndarray:
    """Forward a slice matrix in bounded-memory chunks; raw probabilities."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] <= chunk:
        return model.forward(X)
    parts = [model.forward(X[s : s + chunk]) for s in range(0, X.shape[0], chunk)]
    return np.concatenate(parts)


def pad_sequences(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length (time, features) arrays; mask marks real rows."""
    if not seqs:
        raise ValueError("cannot pad an empty batch")
    width = seqs[0].shape[1]
    t_max = max(s.shape[0] for s in seqs)
    X = np.zeros((len(seqs), t_max, width))
    mask = np.zeros((len(seqs), t_max))
    for i, s in enumerate(seqs):
        if s.shape[1] != width:
            raise ValueError("all sequences in a batch must share a width")
        X[i, : s.shape[0]] = s
        mask[i, : s.shape[0]] = 1.0
    return X, mask


def _masked_sequence_bce(
    probs: np.ndarray, y: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Per-sequence mean BCE over unmasked timesteps."""
    p = clamp_probs(probs)
    y_rep = y[:, None]
    terms = -(y_rep * np.log(p) + (1.0 - y_rep) * np.log1p(-p)) * mask
    return terms.sum(axis=1) / mask.sum(axis=1)


class SequenceTask:
    """Training task for the per-timestep sequence model."""

    def __init__(
        self,
        model: LSTMModel,
        train_seqs: Sequence[np.ndarray],
        train_y: np.ndarray,
        val_seqs: Sequence[np.ndarray],
        val_y: np.ndarray,
        cfg: TrainConfig,
        seed: int,
    ):
        self.model = model
        self.train_seqs = [np.asarray(s, dtype=float) for s in train_seqs]
        self.train_y = np.asarray(train_y, dtype=float)
        self.val_seqs = [np.asarray(s, dtype=float) for s in val_seqs]
        self.val_y = np.asarray(val_y, dtype=float)
        self.cfg = cfg
        self.seed = seed
        self.opt = RMSPropState.for_params(
            model.params, learning_rate=cfg.learning_rate, rho=cfg.rho, eps=cfg.eps
        )

    def run_epoch(self, epoch: int) -> float:
        rng = _epoch_rng(self.seed, epoch)
        order = rng.permutation(len(self.train_seqs))
        total = 0.0
        for bi, start in enumerate(range(0, order.size, self.cfg.batch_size)):
            idx = order[start : start + self.cfg.batch_size]
            X, mask = pad_sequences([self.train_seqs[i] for i in idx])
            X = sequence_dropout(
                X, self.cfg.dropout_rate, rng,
                per_timestep=self.cfg.per_timestep_dropout,
            )
            y = self.train_y[idx]
            loss, grads = self.model.loss_and_grads(
                X, y, mask=mask,
                sample_weights=_sample_weights(y, self.cfg.positive_weight),
            )
            _check_finite(loss, self.model.params, epoch, bi)
            rmsprop_step(self.model.params, grads, self.opt)
            total += loss * idx.size
        return total / order.size

    def validation_loss(self) -> float:
        total = 0.0
        n = len(self.val_seqs)
        for start in range(0, n, self.cfg.batch_size):
            seqs = self.val_seqs[start : start + self.cfg.batch_size]
            X, mask = pad_sequences(seqs)
            probs = self.model.forward(X)
            per_seq = _masked_sequence_bce(
                probs, self.val_y[start : start + len(seqs)], mask
            )
            total += per_seq.sum()
        return total / n

    def snapshot(self) -> dict[str, np.ndarray]:
        return snapshot_params(self.model.params)

    def restore(self, state: dict[str, np.ndarray]) -> None:
        self.model.params = snapshot_params(state)

    def reduce_learning_rate(self, factor: float) -> None:
        self.opt.learning_rate /= factor

    @property
    def learning_rate(self) -> float:
        return self.opt.learning_rate


def slices_from_matrices(
    matrices: Iterable[PatientMatrix], labels: Mapping[str, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Stack every charted row of every matrix; each row inherits the
    encounter's disposition label."""
    blocks = []
    ys = []
    for m in matrices:
        if m.state is not MatrixState.IMPUTED:
            raise ValueError(f"{m.encounter_id}: expected an imputed matrix")
        blocks.append(m.values)
        ys.append(np.full(m.n_rows, float(labels[m.encounter_id])))
    if not blocks:
        raise ValueError("no matrices given")
    return np.vstack(blocks), np.concatenate(ys)


def sequences_from_matrices(
    matrices: Iterable[PatientMatrix], labels: Mapping[str, int]
) -> tuple[list[np.ndarray], np.ndarray]:
    """Whole (time, features) matrices plus one label per encounter."""
    seqs = []
    ys = []
    for m in matrices:
        if m.state is not MatrixState.IMPUTED:
            raise ValueError(f"{m.encounter_id}: expected an imputed matrix")
        seqs.append(m.values)
        ys.append(float(labels[m.encounter_id]))
    if not seqs:
        raise ValueError("no matrices given")
    return seqs, np.array(ys)


def train_model(
    model: Model,
    train_matrices: Sequence[PatientMatrix],
    val_matrices: Sequence[PatientMatrix],
    labels: Mapping[str, int],
    cfg: TrainConfig,
    seed: int,
) -> TrainHistory:
    """Fit a model in place on imputed matrices; returns the epoch history.

    Training labels must include both classes; a single-class training set
    cannot produce a meaningful ranking model, so it is rejected outright.
    """
    if isinstance(model, LSTMModel):
        train_seqs, train_y = sequences_from_matrices(train_matrices, labels)
        val_seqs, val_y = sequences_from_matrices(val_matrices, labels)
        _require_both_classes(train_y)
        task: TrainableTask = SequenceTask(
            model, train_seqs, train_y, val_seqs, val_y, cfg, seed
        )
    else:
        train_X, train_y = slices_from_matrices(train_matrices, labels)
        val_X, val_y = slices_from_matrices(val_matrices, labels)
        _require_both_classes(train_y)
        task = SliceTask(model, train_X, train_y, val_X, val_y, cfg, seed)
    return run_schedule(task, cfg)


def _require_both_classes(y: np.ndarray) -> None:
    if np.all(y > 0.5) or np.all(y < 0.5):
        raise ValueError(
            "training labels are single-class; need both survivors and deaths"
        )
