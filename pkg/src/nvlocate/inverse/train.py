"""Dataset container, Adam optimiser, and the training loop.

Training minimises mean squared error on normalised targets with Adam
(lr 0.005, batch 128) and retains the weights of the best validation
epoch.  The 0.90/0.07/0.03 train/validation/test split and the batch
order are drawn from the config seed, so a (dataset, config) pair fully
determines the trained weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import TrainingError
from .nn import FeatureScaler, LocalizationModel, mse_loss


@dataclass(frozen=True)
class LabelledDataset:
    """Feature tensors (N, n_sensors, 3) with pose labels (N, out_dim).

    Labels are planar positions in metres; a 4-column layout appends the
    orientation as a (cos, sin) pair.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64)
        if feats.ndim != 3 or feats.shape[2] != 3:
            raise ValueError("features must have shape (N, n_sensors, 3)")
        if labels.ndim != 2 or labels.shape[0] != feats.shape[0]:
            raise ValueError("labels must have shape (N, out_dim)")
        if labels.shape[1] not in (2, 4):
            raise ValueError("labels must have 2 or 4 columns")
        if not (np.all(np.isfinite(feats)) and np.all(np.isfinite(labels))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.features.shape[1]

    @property
    def out_dim(self) -> int:
        return self.labels.shape[1]

    def scaler(self) -> FeatureScaler:
        """Normalisation statistics of this dataset.

        Raises:
            ValueError: If any feature entry is constant or any label
                column has zero span (the transforms would not invert).
        """
        std = self.features.std(axis=0)
        if np.any(std == 0.0):
            raise ValueError("a feature entry is constant across the dataset")
        lo = self.labels.min(axis=0)
        hi = self.labels.max(axis=0)
        if np.any(hi <= lo):
            raise ValueError("a label column has zero span")
        return FeatureScaler(
            feature_mean=self.features.mean(axis=0),
            feature_std=std,
            label_min=lo,
            label_max=hi,
        )

    def subset(self, indices: np.ndarray) -> "LabelledDataset":
        return LabelledDataset(self.features[indices], self.labels[indices])

    def with_sensors(self, sensor_indices) -> "LabelledDataset":
        """Dataset restricted to a subset of sensor rows."""
        return LabelledDataset(self.features[:, sensor_indices, :], self.labels)

    def save_csv(self, path: str | Path) -> None:
        label_names = ["x_m", "y_m"] if self.out_dim == 2 else [
            "x_m", "y_m", "cos_theta", "sin_theta"
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["sample", "sensor", "ln_splitting", "ln_sigma1", "ln_sigma2"]
                + label_names
            )
            for i in range(self.n_samples):
                for s in range(self.n_sensors):
                    writer.writerow(
                        [i, s]
                        + [repr(v) for v in self.features[i, s]]
                        + [repr(v) for v in self.labels[i]]
                    )

    @classmethod
    def load_csv(cls, path: str | Path) -> "LabelledDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            out_dim = len(header) - 5
            rows = list(reader)
        n_sensors = max(int(r[1]) for r in rows) + 1
        n_samples = max(int(r[0]) for r in rows) + 1
        features = np.zeros((n_samples, n_sensors, 3))
        labels = np.zeros((n_samples, out_dim))
        for r in rows:
            i, s = int(r[0]), int(r[1])
            features[i, s] = [float(v) for v in r[2:5]]
            labels[i] = [float(v) for v in r[5:]]
        return cls(features, labels)


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and split settings for one training run."""

    learning_rate: float = 0.005
    epochs: int = 3000
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    split: tuple[float, float, float] = (0.90, 0.07, 0.03)
    seed: int = 0
    patience: int | None = None
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if min(self.split) < 0:
            raise ValueError("split fractions must be non-negative")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hyperparameters must be positive")


class Adam:
    """Adam with bias correction, one state pair per parameter array."""

    def __init__(self, params, lr: float, beta1: float, beta2: float, eps: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p, _ in params]
        self.v = [np.zeros_like(p) for p, _ in params]

    def step(self, params) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for (param, grad), m, v in zip(params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class TrainResult:
    """Trained model plus everything needed to audit the run."""

    model: LocalizationModel
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    train_indices: np.ndarray = field(repr=False, default=None)
    val_indices: np.ndarray = field(repr=False, default=None)
    test_indices: np.ndarray = field(repr=False, default=None)

    def history_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
                writer.writerow([e, repr(tr), repr(va)])


def split_indices(
    n_samples: int, split: tuple[float, float, float], seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle split into train/validation/test index arrays."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_samples)
    n_train = int(n_samples * split[0])
    n_val = int(n_samples * split[1])
    return (
        perm[:n_train],
        perm[n_train : n_train + n_val],
        perm[n_train + n_val :],
    )


def train(
    model: LocalizationModel,
    dataset: LabelledDataset,
    config: TrainConfig,
) -> TrainResult:
    """Train a model, returning it with the best-validation-loss weights.

    Raises:
        TrainingError: On a non-finite training or validation loss.
    """
    if dataset.n_sensors != model.n_sensors:
        raise ValueError(
            f"dataset has {dataset.n_sensors} sensors but the model expects "
            f"{model.n_sensors}"
        )
    if dataset.out_dim != model.out_dim:
        raise ValueError("dataset and model output dimensions differ")

    dtype = np.dtype(config.dtype)
    scaler = dataset.scaler()
    model.scaler = scaler
    if model.dtype != dtype:
        _cast_model(model, dtype)

    train_idx, val_idx, test_idx = split_indices(
        dataset.n_samples, config.split, config.seed
    )
    if len(train_idx) < 1:
        raise ValueError("training split is empty")

    x_train = scaler.normalise_features(dataset.features[train_idx]).astype(dtype)
    y_train = scaler.normalise_labels(dataset.labels[train_idx]).astype(dtype)
    x_val = scaler.normalise_features(dataset.features[val_idx]).astype(dtype)
    y_val = scaler.normalise_labels(dataset.labels[val_idx]).astype(dtype)
    use_validation = len(val_idx) > 0

    params = model.parameters()
    optimiser = Adam(
        params, config.learning_rate, config.beta1, config.beta2, config.epsilon
    )
    batch_rng = np.random.default_rng(config.seed + 1)

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val = np.inf
    best_epoch = -1
    best_weights = model.copy_weights()
    epochs_since_best = 0

    for epoch in range(config.epochs):
        order = batch_rng.permutation(len(train_idx))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            pred = model.forward(x_train[batch])
            loss, grad = mse_loss(pred, y_train[batch])
            model.backward(grad.astype(dtype))
            optimiser.step(params)
            epoch_loss += loss
            n_batches += 1
        epoch_loss /= n_batches
        if not np.isfinite(epoch_loss):
            raise TrainingError(
                f"training loss became non-finite at epoch {epoch}"
            )
        train_losses.append(epoch_loss)

        if use_validation:
            val_pred = model.forward(x_val)
            val_loss, _ = mse_loss(val_pred, y_val)
        else:
            val_loss = epoch_loss
        if not np.isfinite(val_loss):
            raise TrainingError(
                f"validation loss became non-finite at epoch {epoch}"
            )
        val_losses.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_weights = model.copy_weights()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if config.patience is not None and epochs_since_best >= config.patience:
                break

    model.load_weights(best_weights)
    return TrainResult(
        model=model,
        train_loss=train_losses,
        val_loss=val_losses,
        best_epoch=best_epoch,
        train_indices=train_idx,
        val_indices=val_idx,
        test_indices=test_idx,
    )


def _cast_model(model: LocalizationModel, dtype: np.dtype) -> None:
    for layer in model.layers:
        for attr in ("weight", "bias", "grad_weight", "grad_bias"):
            if hasattr(layer, attr):
                setattr(layer, attr, getattr(layer, attr).astype(dtype))
    model.dtype = dtype
