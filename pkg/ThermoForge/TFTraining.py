"""Training and evaluation of the window surrogate, plus the checkpoint file.

The network sees normalised windows: temperatures mapped by (T - T_inf)/(T_act - T_inf)
and boundary distances divided by the half window width in mm. The loss and every
reported metric are computed on de-normalised temperatures in Celsius over the
activated voxels of each window.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from neuralOp.adamOpt import adam_step, init_train_state
from neuralOp.fitMetrics import AggregateReport, WindowScore, aggregate, score_window
from neuralOp.operatorModel import (
    FnoHyperParams,
    FnoModel,
    backward,
    flatten_params,
    forward,
    forward_with_cache,
    parameter_count,
    unflatten_params,
)

from .TFErrors import FormatError, TrainingError
from .TFWindows import Channel, WindowDataset

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FNOCKPT1"
DEFAULT_EPOCHS = 50
DEFAULT_BATCH = 64
TEST_FRACTION = 0.1
WORST_K = 7


@dataclass(frozen=True)
class Normalization:
    ambient_T: float = 25.0
    activation_T: float = 1750.0
    distance_scale: float = 11.0

    @property
    def span(self) -> float:
        return self.activation_T - self.ambient_T

    @classmethod
    def from_mapping(cls, values: Dict) -> Normalization:
        try:
            norm = cls(
                ambient_T=float(values["ambient_T"]),
                activation_T=float(values["activation_T"]),
                distance_scale=float(values["distance_scale"]),
            )
        except KeyError as err:
            raise TrainingError(f"normalisation constants missing {err}") from None
        if not norm.span > 0 or not norm.distance_scale > 0:
            raise TrainingError(f"degenerate normalisation constants {norm}")
        return norm

    def to_mapping(self) -> Dict:
        return asdict(self)

    def encode_inputs(self, inputs: np.ndarray) -> np.ndarray:
        x = np.array(inputs, dtype=np.float64)
        x[:, Channel.T_in] = (x[:, Channel.T_in] - self.ambient_T) / self.span
        x[:, Channel.d_conv] /= self.distance_scale
        x[:, Channel.d_dirichlet] /= self.distance_scale
        return x

    def decode_temperature(self, y: np.ndarray) -> np.ndarray:
        return self.ambient_T + self.span * y


@dataclass(frozen=True)
class EpochMetrics:
    """One row of the training curves; the metrics are window means."""

    epoch: int
    loss: float
    train_mse: float
    test_mse: float
    train_nl2: float
    test_nl2: float
    train_r2: float
    test_r2: float


@dataclass(eq=False)
class TrainResult:
    model: FnoModel
    history: List[EpochMetrics]
    train_indices: np.ndarray
    test_indices: np.ndarray
    normalization: Normalization
    settings: Dict = field(default_factory=dict)


@dataclass(eq=False)
class Evaluation:
    predictions: np.ndarray
    scores: List[WindowScore]
    report: AggregateReport


def _normalization_for(dataset: WindowDataset, normalization: Optional[Normalization]):
    if normalization is not None:
        return normalization
    if not dataset.normalization:
        raise TrainingError("dataset carries no normalisation constants")
    return Normalization.from_mapping(dataset.normalization)


def split_indices(
    n_windows: int, test_fraction: float = TEST_FRACTION, seed: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded unstratified shuffle split into (train, test) window indices."""
    if not 0.0 < test_fraction < 1.0:
        raise TrainingError(f"test fraction must lie in (0, 1), got {test_fraction}")
    order = np.random.default_rng(seed).permutation(n_windows)
    n_test = int(round(test_fraction * n_windows))
    train, test = np.sort(order[n_test:]), np.sort(order[:n_test])
    if len(train) == 0 or len(test) == 0:
        raise TrainingError(
            f"{n_windows} windows give an empty split at test fraction {test_fraction}"
        )
    return train, test


def nl2_loss_grad(
    pred_T: np.ndarray, truth_T: np.ndarray, masks: np.ndarray, span: float
) -> Tuple[float, np.ndarray]:
    """Batch-mean masked NL2 and its gradient with respect to the normalised output.

    pred_T, truth_T, masks: (batch, e, e, e); temperatures in Celsius.
    """
    if np.any(masks & (truth_T == 0)):
        raise TrainingError("zero ground-truth temperature inside a window mask")
    batch = pred_T.shape[0]
    safe = np.where(masks, np.abs(truth_T), 1.0)
    ratio = np.where(masks, np.abs(pred_T - truth_T) / safe, 0.0)
    loss = float(ratio.reshape(batch, -1).sum(axis=1).mean())
    grad = np.where(masks, np.sign(pred_T - truth_T) / safe, 0.0) * (span / batch)
    return loss, grad[:, None]


def predict(
    model: FnoModel,
    dataset: WindowDataset,
    normalization: Optional[Normalization] = None,
    batch_size: int = DEFAULT_BATCH,
) -> np.ndarray:
    """De-normalised temperature predictions (S, e, e, e) in Celsius."""
    norm = _normalization_for(dataset, normalization)
    out = np.empty(dataset.targets.shape, dtype=np.float64)
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        x = norm.encode_inputs(dataset.inputs[start:stop])
        out[start:stop] = norm.decode_temperature(forward(model, x)[:, 0])
    return out


def _score_all(pred: np.ndarray, truth: np.ndarray, masks: np.ndarray) -> List[WindowScore]:
    return [score_window(p, t, m) for p, t, m in zip(pred, truth, masks)]


def _summary(scores: Sequence[WindowScore]) -> Tuple[float, float, float]:
    report = aggregate(scores, k=0)
    if report.n_degenerate:
        logger.warning("%d windows without temperature variance", report.n_degenerate)
    return report.mean_mse, report.mean_nl2, report.mean_r2


def train(
    model: FnoModel,
    dataset: WindowDataset,
    epochs: int = DEFAULT_EPOCHS,
    batch_size: int = DEFAULT_BATCH,
    split_seed: int = 0,
    lr: float = 1e-3,
    weight_decay: float = 1e-4,
    test_fraction: float = TEST_FRACTION,
    shuffle_seed: Optional[int] = None,
    normalization: Optional[Normalization] = None,
) -> TrainResult:
    """Minimise the masked NL2 loss with AdamW over shuffled mini-batches.

    Train metrics of an epoch are taken from the predictions made while stepping
    through it; test metrics from a full pass after the epoch.
    """
    if len(dataset) == 0:
        raise TrainingError("cannot train on an empty dataset")
    if epochs < 1 or batch_size < 1:
        raise TrainingError(f"epochs and batch size must be positive: {epochs}, {batch_size}")
    norm = _normalization_for(dataset, normalization)
    train_idx, test_idx = split_indices(len(dataset), test_fraction, split_seed)
    test_set = dataset.subset(test_idx)
    truth = dataset.targets.astype(np.float64)
    shuffler = np.random.default_rng(split_seed + 1 if shuffle_seed is None else shuffle_seed)
    state = init_train_state(model.params, lr=lr, weight_decay=weight_decay)

    history: List[EpochMetrics] = []
    for epoch in range(1, epochs + 1):
        order = shuffler.permutation(train_idx)
        epoch_pred = np.empty((len(order),) + dataset.targets.shape[1:])
        losses = []
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            x = norm.encode_inputs(dataset.inputs[batch])
            y, cache = forward_with_cache(model, x)
            pred_T = norm.decode_temperature(y[:, 0])
            loss, grad = nl2_loss_grad(pred_T, truth[batch], dataset.masks[batch], norm.span)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}")
            grads, _ = backward(model, cache, grad)
            model = model.with_params(adam_step(model.params, grads, state))
            epoch_pred[start : start + len(batch)] = pred_T
            losses.append(loss * len(batch))
            logger.debug("epoch %d batch at %d loss %.5g", epoch, start, loss)

        train_scores = _score_all(epoch_pred, truth[order], dataset.masks[order])
        test_pred = predict(model, test_set, norm, batch_size)
        test_scores = _score_all(test_pred, test_set.targets, test_set.masks)
        tr_mse, tr_nl2, tr_r2 = _summary(train_scores)
        te_mse, te_nl2, te_r2 = _summary(test_scores)
        row = EpochMetrics(
            epoch=epoch,
            loss=float(sum(losses) / len(order)),
            train_mse=tr_mse,
            test_mse=te_mse,
            train_nl2=tr_nl2,
            test_nl2=te_nl2,
            train_r2=tr_r2,
            test_r2=te_r2,
        )
        history.append(row)
        logger.info(
            "epoch %d/%d loss %.4g test mse %.4g nl2 %.4g r2 %.5f",
            epoch,
            epochs,
            row.loss,
            te_mse,
            te_nl2,
            te_r2,
        )

    settings = {
        "epochs": epochs,
        "batch_size": batch_size,
        "lr": lr,
        "weight_decay": weight_decay,
        "test_fraction": test_fraction,
        "split_seed": split_seed,
        "train_windows": int(len(train_idx)),
        "test_windows": int(len(test_idx)),
    }
    return TrainResult(
        model=model,
        history=history,
        train_indices=train_idx,
        test_indices=test_idx,
        normalization=norm,
        settings=settings,
    )


def evaluate(
    model: FnoModel,
    dataset: WindowDataset,
    normalization: Optional[Normalization] = None,
    batch_size: int = DEFAULT_BATCH,
    k: int = WORST_K,
) -> Evaluation:
    """Score every window of `dataset`, returning predictions, per-window scores and
    the aggregate report with the k worst windows."""
    if len(dataset) == 0:
        raise TrainingError("cannot evaluate on an empty dataset")
    pred = predict(model, dataset, normalization, batch_size)
    scores = _score_all(pred, dataset.targets, dataset.masks)
    report = aggregate(scores, k=k, ids=dataset.window_ids())
    logger.info(
        "evaluated %d windows: mse %.4g r2 %.5f (%d degenerate)",
        report.n_windows,
        report.mean_mse,
        report.mean_r2,
        report.n_degenerate,
    )
    return Evaluation(predictions=pred, scores=scores, report=report)


# Checkpoint: magic, u32 d_a, d_v, d_u, depth, 3 x modes, then every parameter in
# canonical order as little-endian f64, complex entries as (real, imag) pairs.
_CHECKPOINT_HEADER = struct.Struct("<8s7I")


@dataclass(eq=False)
class Checkpoint:
    model: FnoModel
    normalization: Normalization
    training: Dict = field(default_factory=dict)


def checkpoint_sidecar(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.meta.json")


def save_checkpoint(
    model: FnoModel,
    path: Union[str, Path],
    normalization: Normalization,
    training: Optional[Dict] = None,
) -> Path:
    path = Path(path)
    hp = model.hyper
    with path.open("wb") as fh:
        fh.write(
            _CHECKPOINT_HEADER.pack(
                CHECKPOINT_MAGIC, hp.d_a, hp.d_v, hp.d_u, hp.depth, *hp.modes
            )
        )
        fh.write(flatten_params(model.params).astype("<f8").tobytes())
    meta = {
        "activation": hp.activation,
        "normalization": normalization.to_mapping(),
        "training": training or {},
    }
    checkpoint_sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _CHECKPOINT_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, d_a, d_v, d_u, depth, m1, m2, m3 = _CHECKPOINT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")

    sidecar = checkpoint_sidecar(path)
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    hp = FnoHyperParams(
        d_a=d_a,
        d_v=d_v,
        d_u=d_u,
        depth=depth,
        modes=(m1, m2, m3),
        activation=meta.get("activation", "gelu"),
    )
    if len(raw) != _CHECKPOINT_HEADER.size + 8 * parameter_count(hp):
        raise FormatError(f"{path}: payload does not match the stored hyperparameters")

    values = np.frombuffer(raw, dtype="<f8", offset=_CHECKPOINT_HEADER.size)
    params = unflatten_params(values.astype(np.float64), hp)

    normalization = (
        Normalization.from_mapping(meta["normalization"])
        if "normalization" in meta
        else Normalization()
    )
    return Checkpoint(
        model=FnoModel(hyper=hp, params=params),
        normalization=normalization,
        training=meta.get("training", {}),
    )
