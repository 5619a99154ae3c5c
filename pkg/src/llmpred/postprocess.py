"""Post-processing of LLM component predictions.

The low-frequency prediction is refined by a small MLP
(affine -> batch-norm -> tanh, five times, then a final affine layer) trained
with Adam on MSE. The high-frequency prediction is re-standardized to the
history's mean and standard deviation.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegeneratePrediction,
    DimensionMismatch,
    InsufficientData,
    NonFiniteLoss,
    UntrainedModel,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
SIGMA_EPS = 1e-9


@dataclass
class RefinerConfig:
    H: int
    hidden_layers: tuple = (128, 128, 128, 128, 128)
    batch_norm: tuple = (True, True, True, True, True)
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 32
    train_split: float = 0.7
    seed: int = 0
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        self.hidden_layers = tuple(int(w) for w in self.hidden_layers)
        if isinstance(self.batch_norm, bool):
            self.batch_norm = (self.batch_norm,) * len(self.hidden_layers)
        self.batch_norm = tuple(bool(b) for b in self.batch_norm)
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.train_split < 1:
            raise ValueError("train_split must lie in (0, 1)")
        if any(w < 1 for w in self.hidden_layers):
            raise ValueError("hidden widths must be >= 1")
        if len(self.batch_norm) != len(self.hidden_layers):
            raise ValueError("batch_norm needs one flag per hidden layer")

    @property
    def input_dim(self) -> int:
        return self.H

    @property
    def output_dim(self) -> int:
        return self.H

    @classmethod
    def gpt_profile(cls, H: int, **kw) -> "RefinerConfig":
        return cls(H, epochs=128, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        d["batch_norm"] = list(self.batch_norm)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RefinerConfig":
        return cls(**d)


class RefinerModel:
    """MLP with per-layer batch norm, held as plain numpy arrays.

    Parameters live in ``self.params`` (name -> array) so the optimizer and
    the gradient check can treat them uniformly. Names: ``W{k}``, ``b{k}``,
    and for normalized hidden layers ``gamma{k}``, ``beta{k}``.
    """

    def __init__(self, cfg: RefinerConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.trained = False
        self.params: dict[str, np.ndarray] = {}
        self.running_mean: dict[int, np.ndarray] = {}
        self.running_var: dict[int, np.ndarray] = {}
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        dims = [cfg.input_dim, *cfg.hidden_layers, cfg.output_dim]
        for k in range(len(dims) - 1):
            bound = 1.0 / np.sqrt(dims[k])
            self.params[f"W{k}"] = rng.uniform(-bound, bound, size=(dims[k], dims[k + 1]))
            self.params[f"b{k}"] = rng.uniform(-bound, bound, size=dims[k + 1])
            if k < len(cfg.hidden_layers) and cfg.batch_norm[k]:
                self.params[f"gamma{k}"] = np.ones(dims[k + 1])
                self.params[f"beta{k}"] = np.zeros(dims[k + 1])
                self.running_mean[k] = np.zeros(dims[k + 1])
                self.running_var[k] = np.ones(dims[k + 1])

    @property
    def n_hidden(self) -> int:
        return len(self.cfg.hidden_layers)

    def forward(self, X: np.ndarray, training: bool = False, update_stats: bool = True):
        """Return (output, cache). Batch statistics are used only when
        ``training`` and the batch holds more than one row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.cfg.input_dim:
            raise DimensionMismatch(f"expected input length {self.cfg.input_dim}, got {X.shape[1]}")
        eps = self.cfg.bn_epsilon
        mom = self.cfg.bn_momentum
        batch_stats = training and X.shape[0] > 1
        cache = []
        a = X
        for k in range(self.n_hidden):
            z = a @ self.params[f"W{k}"] + self.params[f"b{k}"]
            entry = {"a_in": a}
            if k in self.running_mean:
                if batch_stats:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    if update_stats:
                        n = z.shape[0]
                        self.running_mean[k] = (1 - mom) * self.running_mean[k] + mom * mu
                        self.running_var[k] = (1 - mom) * self.running_var[k] + mom * var * n / (n - 1)
                else:
                    mu, var = self.running_mean[k], self.running_var[k]
                inv_std = 1.0 / np.sqrt(var + eps)
                xhat = (z - mu) * inv_std
                y = self.params[f"gamma{k}"] * xhat + self.params[f"beta{k}"]
                entry.update(xhat=xhat, inv_std=inv_std, batch_stats=batch_stats)
            else:
                y = z
            a = np.tanh(y)
            entry["a_out"] = a
            cache.append(entry)
        k = self.n_hidden
        out = a @ self.params[f"W{k}"] + self.params[f"b{k}"]
        cache.append({"a_in": a})
        return out, cache

    def backward(self, dout: np.ndarray, cache) -> dict[str, np.ndarray]:
        grads = {}
        k = self.n_hidden
        a_in = cache[k]["a_in"]
        grads[f"W{k}"] = a_in.T @ dout
        grads[f"b{k}"] = dout.sum(axis=0)
        da = dout @ self.params[f"W{k}"].T
        for k in reversed(range(self.n_hidden)):
            entry = cache[k]
            dy = da * (1.0 - entry["a_out"] ** 2)
            if k in self.running_mean:
                xhat = entry["xhat"]
                grads[f"gamma{k}"] = (dy * xhat).sum(axis=0)
                grads[f"beta{k}"] = dy.sum(axis=0)
                dxhat = dy * self.params[f"gamma{k}"]
                if entry["batch_stats"]:
                    n = dxhat.shape[0]
                    dz = (entry["inv_std"] / n) * (
                        n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                    )
                else:
                    dz = dxhat * entry["inv_std"]
            else:
                dz = dy
            grads[f"W{k}"] = entry["a_in"].T @ dz
            grads[f"b{k}"] = dz.sum(axis=0)
            da = dz @ self.params[f"W{k}"].T
        return grads

    def loss_and_grads(self, X, Y, update_stats: bool = False):
        """Training-mode MSE loss and its gradient for every parameter."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        out, cache = self.forward(X, training=True, update_stats=update_stats)
        diff = out - Y
        loss = float(np.mean(diff**2))
        grads = self.backward(2.0 * diff / diff.size, cache)
        return loss, grads

    def predict(self, X) -> np.ndarray:
        out, _ = self.forward(X, training=False)
        return out

    # -- checkpoints -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "trained": self.trained,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
            "running_mean": {str(k): v.tolist() for k, v in self.running_mean.items()},
            "running_var": {str(k): v.tolist() for k, v in self.running_var.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RefinerModel":
        if d.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('format_version')}")
        model = cls(RefinerConfig.from_dict(d["config"]))
        for name, p in d["params"].items():
            model.params[name] = np.array(p["data"], dtype=float).reshape(p["shape"])
        model.running_mean = {int(k): np.array(v, dtype=float) for k, v in d["running_mean"].items()}
        model.running_var = {int(k): np.array(v, dtype=float) for k, v in d["running_var"].items()}
        model.trained = bool(d["trained"])
        return model

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "RefinerModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainingLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)  # index 0 is the untrained model
    # validation MSE of passing predictions through unchanged
    identity_val_loss: float = float("nan")
    n_train: int = 0
    n_val: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _as_matrix(rows, H: int) -> np.ndarray:
    arr = np.array([np.asarray(getattr(r, "values", r), dtype=float) for r in rows])
    if arr.ndim != 2 or arr.shape[1] != H:
        raise DimensionMismatch(f"all sequences must have length {H}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("training sequences must be finite")
    return arr


def split_pairs(n: int, train_split: float, rng: np.random.Generator):
    order = rng.permutation(n)
    n_train = min(n - 1, max(1, int(round(train_split * n))))
    return order[:n_train], order[n_train:]


def train_refiner(pairs: Sequence, cfg: RefinerConfig):
    """Fit the refiner on (predicted_low, truth_low) pairs.

    Returns ``(model, TrainingLog)``. Fully determined by ``cfg.seed``.
    """
    if len(pairs) < 2:
        raise InsufficientData(f"need at least 2 pairs, got {len(pairs)}")
    X = _as_matrix([p[0] for p in pairs], cfg.H)
    Y = _as_matrix([p[1] for p in pairs], cfg.H)

    rng = np.random.default_rng(cfg.seed)
    tr, va = split_pairs(len(X), cfg.train_split, rng)
    model = RefinerModel(cfg, rng)
    opt = Adam(model.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
    tlog = TrainingLog(n_train=len(tr), n_val=len(va))
    tlog.identity_val_loss = float(np.mean((X[va] - Y[va]) ** 2))

    def val_loss():
        return float(np.mean((model.predict(X[va]) - Y[va]) ** 2))

    tlog.val_loss.append(val_loss())
    for epoch in range(cfg.epochs):
        idx = rng.permutation(tr)
        total = 0.0
        for start in range(0, len(idx), cfg.batch_size):
            b = idx[start : start + cfg.batch_size]
            loss, grads = model.loss_and_grads(X[b], Y[b], update_stats=True)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}")
            opt.step(model.params, grads)
            total += loss * len(b)
        tlog.train_loss.append(total / len(idx))
        tlog.val_loss.append(val_loss())
        log.debug("epoch %d train %.6g val %.6g", epoch, tlog.train_loss[-1], tlog.val_loss[-1])
    model.trained = True
    return model, tlog


def refine_low(model: RefinerModel, predicted_low) -> np.ndarray:
    if not model.trained:
        raise UntrainedModel("refiner has not been trained")
    x = np.asarray(getattr(predicted_low, "values", predicted_low), dtype=float)
    if x.ndim != 1 or x.size != model.cfg.input_dim:
        raise DimensionMismatch(f"expected length {model.cfg.input_dim}, got {x.shape}")
    out = model.predict(x[None, :])[0]
    if not np.all(np.isfinite(out)):
        raise NonFiniteLoss("refiner produced non-finite output")
    return out


@dataclass(frozen=True)
class MomentPair:
    mu_h: float
    sigma_h: float
    mu_p: float
    sigma_p: float

    @classmethod
    def of(cls, predicted, history) -> "MomentPair":
        mu_p, sd_p = _moments(predicted)
        mu_h, sd_h = _moments(history)
        return cls(mu_h, sd_h, mu_p, sd_p)


def _moments(x) -> tuple[float, float]:
    """Mean and population std from correctly rounded sums, so the result does
    not depend on element order."""
    x = np.asarray(x, dtype=float).ravel()
    mu = math.fsum(x) / x.size
    return mu, math.sqrt(math.fsum((x - mu) ** 2) / x.size)


def gaussian_match(predicted_high, hist_high) -> np.ndarray:
    """Shift and scale the prediction to the history's mean and (population) std."""
    p = np.asarray(getattr(predicted_high, "values", predicted_high), dtype=float)
    h = np.asarray(getattr(hist_high, "values", hist_high), dtype=float)
    mp = MomentPair.of(p, h)
    if mp.sigma_p <= SIGMA_EPS:
        raise DegeneratePrediction(f"predicted std {mp.sigma_p} <= {SIGMA_EPS}")
    if mp.mu_p == mp.mu_h and mp.sigma_p == mp.sigma_h:
        return p.copy()
    return (p - mp.mu_p) / mp.sigma_p * mp.sigma_h + mp.mu_h


def recombine(low, high) -> np.ndarray:
    lo = np.asarray(getattr(low, "values", low), dtype=float)
    hi = np.asarray(getattr(high, "values", high), dtype=float)
    if lo.shape != hi.shape:
        raise DimensionMismatch(f"length mismatch {lo.shape} vs {hi.shape}")
    return lo + hi
