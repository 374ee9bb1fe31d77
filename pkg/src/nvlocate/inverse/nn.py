"""From-scratch 1-D convolutional regression network.

Maps a (n_sensors, 3) log-feature matrix to a source pose.  The stack is
three same-padded Conv1d layers (64, 128, 256 channels, kernel 3) with
rectified-linear activations, a flatten, and three dense layers (128,
64, out_dim), the first two rectified.  Convolution runs along the
sensor axis so neighbouring-sensor structure is seen by shared kernels.

Forward, backpropagation, and parameter updates are implemented here
directly on numpy arrays; `gradient_check` validates the backward pass
against central finite differences and is part of the test gate.

Arrays are channels-last: activations have shape (batch, length,
channels) inside the conv stack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

_FORMAT_NAME = "nvlocate-localization-model"
_FORMAT_VERSION = 1


class Conv1d:
    """Same-padded 1-D convolution over (batch, length, channels) input."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        dtype=np.float64,
    ):
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd for same padding")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        limit = 1.0 / np.sqrt(kernel_size * in_channels)
        self.weight = rng.uniform(
            -limit, limit, size=(kernel_size, in_channels, out_channels)
        ).astype(dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x_padded: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, length, _ = x.shape
        pad = self.kernel_size // 2
        x_padded = np.zeros(
            (n, length + 2 * pad, self.in_channels), dtype=x.dtype
        )
        x_padded[:, pad : pad + length, :] = x
        self._x_padded = x_padded
        out = np.broadcast_to(
            self.bias, (n, length, self.out_channels)
        ).astype(x.dtype).copy()
        for k in range(self.kernel_size):
            out += x_padded[:, k : k + length, :] @ self.weight[k]
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_padded = self._x_padded
        n, length, _ = grad_out.shape
        pad = self.kernel_size // 2
        flat_grad = grad_out.reshape(n * length, self.out_channels)
        grad_x_padded = np.zeros_like(x_padded)
        for k in range(self.kernel_size):
            window = x_padded[:, k : k + length, :].reshape(
                n * length, self.in_channels
            )
            self.grad_weight[k] = window.T @ flat_grad
            grad_x_padded[:, k : k + length, :] += grad_out @ self.weight[k].T
        self.grad_bias[...] = grad_out.sum(axis=(0, 1))
        return grad_x_padded[:, pad : pad + length, :]

    def parameters(self):
        return [(self.weight, self.grad_weight), (self.bias, self.grad_bias)]


class Dense:
    """Fully connected layer on (batch, features) input."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        dtype=np.float64,
    ):
        limit = 1.0 / np.sqrt(in_features)
        self.weight = rng.uniform(
            -limit, limit, size=(in_features, out_features)
        ).astype(dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.grad_weight[...] = self._x.T @ grad_out
        self.grad_bias[...] = grad_out.sum(axis=0)
        return grad_out @ self.weight.T

    def parameters(self):
        return [(self.weight, self.grad_weight), (self.bias, self.grad_bias)]


class ReLU:
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad_out, 0.0)

    def parameters(self):
        return []


class Flatten:
    def __init__(self):
        self._shape: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._shape)

    def parameters(self):
        return []


@dataclass
class FeatureScaler:
    """Dataset statistics used to normalise features and labels.

    Features are standardised entrywise over the (n_sensors, 3) matrix;
    labels are min-max mapped to [-1, 1].  Both transforms are stored
    with the model so inference sees the training-time scaling.
    """

    feature_mean: np.ndarray
    feature_std: np.ndarray
    label_min: np.ndarray
    label_max: np.ndarray

    def normalise_features(self, features: np.ndarray) -> np.ndarray:
        if features.shape[-2:] != self.feature_mean.shape:
            raise ValueError(
                f"feature shape {features.shape[-2:]} does not match the "
                f"stored statistics {self.feature_mean.shape}"
            )
        return (features - self.feature_mean) / self.feature_std

    def normalise_labels(self, labels: np.ndarray) -> np.ndarray:
        span = self.label_max - self.label_min
        return 2.0 * (labels - self.label_min) / span - 1.0

    def denormalise_labels(self, scaled: np.ndarray) -> np.ndarray:
        span = self.label_max - self.label_min
        return (scaled + 1.0) * span / 2.0 + self.label_min

    def to_dict(self) -> dict:
        return {
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "label_min": self.label_min.tolist(),
            "label_max": self.label_max.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureScaler":
        return cls(
            feature_mean=np.asarray(payload["feature_mean"], dtype=np.float64),
            feature_std=np.asarray(payload["feature_std"], dtype=np.float64),
            label_min=np.asarray(payload["label_min"], dtype=np.float64),
            label_max=np.asarray(payload["label_max"], dtype=np.float64),
        )


class LocalizationModel:
    """Convolutional pose regressor with its normalisation statistics.

    `out_dim` is 2 for planar position or 4 for position plus an
    in-plane orientation encoded as (cos, sin); `predict` folds the
    latter back to an angle.
    """

    def __init__(
        self,
        n_sensors: int,
        out_dim: int = 2,
        seed: int = 0,
        n_features: int = 3,
        conv_channels: Sequence[int] = (64, 128, 256),
        dense_sizes: Sequence[int] = (128, 64),
        kernel_size: int = 3,
        dtype=np.float64,
        scaler: FeatureScaler | None = None,
    ):
        if n_sensors < 1:
            raise ValueError("n_sensors must be >= 1")
        if out_dim not in (2, 4):
            raise ValueError("out_dim must be 2 (position) or 4 (pose+angle)")
        self.n_sensors = n_sensors
        self.n_features = n_features
        self.out_dim = out_dim
        self.seed = seed
        self.conv_channels = tuple(conv_channels)
        self.dense_sizes = tuple(dense_sizes)
        self.kernel_size = kernel_size
        self.dtype = np.dtype(dtype)
        self.scaler = scaler

        rng = np.random.default_rng(seed)
        layers: list = []
        channels = n_features
        for width in conv_channels:
            layers.append(Conv1d(channels, width, kernel_size, rng, dtype))
            layers.append(ReLU())
            channels = width
        layers.append(Flatten())
        features = n_sensors * channels
        for width in dense_sizes:
            layers.append(Dense(features, width, rng, dtype))
            layers.append(ReLU())
            features = width
        layers.append(Dense(features, out_dim, rng, dtype))
        self.layers = layers

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Network output for a normalised (batch, n_sensors, 3) input."""
        out = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad = grad_out
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        """All (value, gradient) array pairs, in deterministic order."""
        pairs = []
        for layer in self.layers:
            pairs.extend(layer.parameters())
        return pairs

    def parameter_count(self) -> int:
        return sum(p.size for p, _ in self.parameters())

    def copy_weights(self) -> list[np.ndarray]:
        return [p.copy() for p, _ in self.parameters()]

    def load_weights(self, weights: Sequence[np.ndarray]) -> None:
        pairs = self.parameters()
        if len(weights) != len(pairs):
            raise ValueError("weight list does not match the architecture")
        for (param, _), value in zip(pairs, weights):
            if param.shape != value.shape:
                raise ValueError("weight shapes do not match the architecture")
            param[...] = value.astype(param.dtype)

    # ------------------------------------------------------------------
    # inference
    # ------------------------------------------------------------------

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Pose estimate(s) for raw (unnormalised) feature matrices.

        Accepts (n_sensors, 3) or (batch, n_sensors, 3).  Returns
        (x, y) in metres, or (x, y, theta) with theta in radians from
        atan2 of the (cos, sin) head when out_dim is 4.
        """
        if self.scaler is None:
            raise ValueError(
                "model has no normalisation statistics; train it or attach "
                "a FeatureScaler before predicting"
            )
        feats = np.asarray(features, dtype=np.float64)
        single = feats.ndim == 2
        if single:
            feats = feats[None]
        if feats.shape[1:] != (self.n_sensors, self.n_features):
            raise ValueError(
                f"expected features of shape (*, {self.n_sensors}, "
                f"{self.n_features}), got {feats.shape}"
            )
        scaled = self.scaler.normalise_features(feats)
        raw = self.forward(scaled).astype(np.float64)
        out = self.scaler.denormalise_labels(raw)
        if self.out_dim == 4:
            theta = np.arctan2(out[:, 3], out[:, 2])
            out = np.column_stack([out[:, 0], out[:, 1], theta])
        return out[0] if single else out

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def to_json(self, path: str | Path) -> None:
        weights = []
        for index, (param, _) in enumerate(self.parameters()):
            weights.append(
                {
                    "index": index,
                    "shape": list(param.shape),
                    "data": param.astype(np.float64).ravel(order="C").tolist(),
                }
            )
        payload = {
            "format": _FORMAT_NAME,
            "version": _FORMAT_VERSION,
            "n_sensors": self.n_sensors,
            "n_features": self.n_features,
            "out_dim": self.out_dim,
            "seed": self.seed,
            "conv_channels": list(self.conv_channels),
            "dense_sizes": list(self.dense_sizes),
            "kernel_size": self.kernel_size,
            "dtype": self.dtype.name,
            "weights": weights,
            "normalisation": None if self.scaler is None else self.scaler.to_dict(),
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True))

    @classmethod
    def from_json(cls, path: str | Path) -> "LocalizationModel":
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != _FORMAT_NAME:
            raise ValueError(f"not a {_FORMAT_NAME} container")
        if payload.get("version") != _FORMAT_VERSION:
            raise ValueError(f"unsupported container version {payload.get('version')}")
        scaler = (
            FeatureScaler.from_dict(payload["normalisation"])
            if payload["normalisation"] is not None
            else None
        )
        model = cls(
            n_sensors=payload["n_sensors"],
            out_dim=payload["out_dim"],
            seed=payload["seed"],
            n_features=payload["n_features"],
            conv_channels=payload["conv_channels"],
            dense_sizes=payload["dense_sizes"],
            kernel_size=payload["kernel_size"],
            dtype=np.dtype(payload["dtype"]),
            scaler=scaler,
        )
        weights = [
            np.asarray(w["data"], dtype=np.float64).reshape(w["shape"])
            for w in sorted(payload["weights"], key=lambda w: w["index"])
        ]
        model.load_weights(weights)
        return model


def build_model(n_sensors: int, out_dim: int = 2, seed: int = 0, **kwargs) -> LocalizationModel:
    """Fresh model with seeded uniform fan-in initialisation."""
    return LocalizationModel(n_sensors=n_sensors, out_dim=out_dim, seed=seed, **kwargs)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean-squared-error loss and its gradient w.r.t. the prediction."""
    diff = pred - target
    loss = float(np.mean(diff**2))
    grad = 2.0 * diff / diff.size
    return loss, grad


def gradient_check(
    model: LocalizationModel,
    features: np.ndarray,
    target: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error of backprop vs central finite differences.

    Evaluates the MSE loss around every scalar parameter.  Intended for
    small models in float64; the relative error uses
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) so that
    jointly-zero gradients (dead rectifier paths) compare as equal.
    """
    x = np.asarray(features, dtype=model.dtype)
    if x.ndim == 2:
        x = x[None]
    y = np.asarray(target, dtype=model.dtype)
    if y.ndim == 1:
        y = y[None]

    pred = model.forward(x)
    _, grad = mse_loss(pred, y)
    model.backward(grad)
    analytic = [g.copy() for _, g in model.parameters()]

    worst = 0.0
    for (param, _), grad_param in zip(model.parameters(), analytic):
        flat = param.ravel()
        grad_flat = grad_param.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            loss_plus, _ = mse_loss(model.forward(x), y)
            flat[i] = original - step
            loss_minus, _ = mse_loss(model.forward(x), y)
            flat[i] = original
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            denom = max(abs(grad_flat[i]), abs(numeric), 1e-6)
            worst = max(worst, abs(grad_flat[i] - numeric) / denom)
    return worst
