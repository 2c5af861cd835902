"""Two-layer classifier ``head(encoder(x))`` with hand-written backprop.

The encoder is an affine map followed by an elementwise activation
(``identity``, ``relu`` or ``tanh``); the head is an affine map whose number
of rows grows as new classes arrive.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ipll.errors import DimensionError, IPLLError
from ipll.mathcore import FLOAT, check_finite, softmax

LOG_FLOOR = 1e-12
PARAM_NAMES = ("W1", "b1", "W2", "b2")
ACTIVATIONS = ("identity", "relu", "tanh")


@dataclass(frozen=True)
class LossWeights:
    w_ce: float = 1.0
    w_kd: float = 1.0
    w_cr: float = 1.0


@dataclass
class LossValues:
    ce: float = 0.0
    kd: float = 0.0
    cr: float = 0.0

    @property
    def total(self) -> float:
        return self.ce + self.kd + self.cr


class Model:
    def __init__(self, input_dim: int, hidden_dim: int, num_classes: int,
                 activation: str = "relu", rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise IPLLError(f"unknown activation {activation!r}")
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "W1": _fan_in_uniform(rng, (hidden_dim, input_dim)),
            "b1": np.zeros(hidden_dim, dtype=FLOAT),
            "W2": _fan_in_uniform(rng, (num_classes, hidden_dim)),
            "b2": np.zeros(num_classes, dtype=FLOAT),
        }
        self.velocity = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def input_dim(self) -> int:
        return self.params["W1"].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def num_classes(self) -> int:
        return self.params["W2"].shape[0]

    def grow_head(self, num_classes: int, rng: np.random.Generator) -> None:
        """Append head rows for new classes; existing rows are left untouched."""
        extra = num_classes - self.num_classes
        if extra < 0:
            raise IPLLError("the head can only grow")
        if extra == 0:
            return
        new_w = _fan_in_uniform(rng, (extra, self.hidden_dim))
        self.params["W2"] = np.vstack([self.params["W2"], new_w])
        self.params["b2"] = np.concatenate([self.params["b2"], np.zeros(extra)])
        self.velocity["W2"] = np.vstack([self.velocity["W2"], np.zeros_like(new_w)])
        self.velocity["b2"] = np.concatenate([self.velocity["b2"], np.zeros(extra)])

    def copy(self) -> "Model":
        return copy.deepcopy(self)


def _fan_in_uniform(rng, shape):
    bound = 1.0 / np.sqrt(shape[1])
    return rng.uniform(-bound, bound, size=shape)


def _activate(kind: str, pre: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "tanh":
        return np.tanh(pre)
    return pre


def _activate_grad(kind: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (pre > 0).astype(FLOAT)
    if kind == "tanh":
        return 1.0 - out * out
    return np.ones_like(pre)


def forward(model: Model, x):
    """Return ``(features, logits, probs)``; a 1-D ``x`` gives 1-D outputs."""
    x = np.asarray(x, dtype=FLOAT)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.input_dim:
        raise DimensionError(f"expected input dim {model.input_dim}, got {X.shape[1]}")
    p = model.params
    H = _activate(model.activation, X @ p["W1"].T + p["b1"])
    Z = H @ p["W2"].T + p["b2"]
    check_finite(Z, "logits")
    P = softmax(Z)
    if single:
        return H[0], Z[0], P[0]
    return H, Z, P


def features(model: Model, x) -> np.ndarray:
    return forward(model, x)[0]


def _backward(model: Model, X: np.ndarray, dZ: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given the gradient of the loss w.r.t. the logits."""
    p = model.params
    pre = X @ p["W1"].T + p["b1"]
    H = _activate(model.activation, pre)
    dH = dZ @ p["W2"]
    dpre = dH * _activate_grad(model.activation, pre, H)
    return {
        "W1": dpre.T @ X,
        "b1": dpre.sum(axis=0),
        "W2": dZ.T @ H,
        "b2": dZ.sum(axis=0),
    }


def _soft_ce(probs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean soft cross-entropy and its gradient w.r.t. the logits behind ``probs``.

    Entries with ``probs < LOG_FLOOR`` sit on the flat part of the clamped
    log and contribute no gradient.
    """
    probs = np.atleast_2d(probs)
    targets = np.atleast_2d(targets)
    if probs.shape != targets.shape:
        raise DimensionError(f"shape mismatch: {probs.shape} vs {targets.shape}")
    n = probs.shape[0]
    value = -np.sum(targets * np.log(np.maximum(probs, LOG_FLOOR))) / n
    active = targets * (probs >= LOG_FLOOR)
    dZ = (probs * active.sum(axis=1, keepdims=True) - active) / n
    return float(value), dZ


def loss_ce(probs, targets) -> float:
    """Mean over the batch of ``-sum_j p_ij log f_j(x_i)``."""
    return _soft_ce(probs, targets)[0]


def loss_kd(current_old_probs, snapshot_old_probs) -> float:
    """Distillation cross-entropy; both inputs are distributions over the old classes."""
    return _soft_ce(current_old_probs, snapshot_old_probs)[0]


def loss_cr(pseudo, strong_probs) -> float:
    """Consistency loss: weak-view pseudo-labels against strong-view predictions."""
    return _soft_ce(strong_probs, pseudo)[0]


def augment(x, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Isotropic Gaussian feature jitter."""
    if sigma < 0:
        raise IPLLError("sigma must be non-negative")
    x = np.asarray(x, dtype=FLOAT)
    if sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=x.shape)


def loss_and_grad(
    model: Model,
    x_weak: np.ndarray,
    x_strong: np.ndarray,
    pseudo: np.ndarray,
    old_model: Model | None = None,
    weights: LossWeights = LossWeights(),
    temperature: float = 1.0,
) -> tuple[dict[str, np.ndarray], LossValues]:
    """Gradient of ``w_ce*L_ce + w_kd*L_kd + w_cr*L_cr`` on fixed views.

    ``L_ce`` and ``L_kd`` use the weak view; ``L_cr`` uses the strong view.
    ``L_kd`` is skipped without an old model or when it has no classes.
    """
    Xw = np.atleast_2d(np.asarray(x_weak, dtype=FLOAT))
    pseudo = np.atleast_2d(pseudo)
    if pseudo.shape != (Xw.shape[0], model.num_classes):
        raise DimensionError(
            f"pseudo-labels of shape {pseudo.shape} for batch {Xw.shape[0]} x {model.num_classes}"
        )
    _, Zw, Pw = forward(model, Xw)
    values = LossValues()
    dZw = np.zeros_like(Zw)

    if weights.w_ce:
        values.ce, d = _soft_ce(Pw, pseudo)
        dZw += weights.w_ce * d

    if weights.w_kd and old_model is not None and old_model.num_classes > 0:
        n_old = old_model.num_classes
        _, Z_old, _ = forward(old_model, Xw)
        target = softmax(Z_old[:, :n_old] / temperature)
        cur = softmax(Zw[:, :n_old] / temperature)
        values.kd, d = _soft_ce(cur, target)
        dZw[:, :n_old] += weights.w_kd * d / temperature

    grads = _backward(model, Xw, dZw)

    if weights.w_cr:
        Xs = np.atleast_2d(np.asarray(x_strong, dtype=FLOAT))
        _, _, Ps = forward(model, Xs)
        values.cr, d = _soft_ce(Ps, pseudo)
        for k, g in _backward(model, Xs, weights.w_cr * d).items():
            grads[k] += g

    return grads, values


def total_grad(
    model: Model,
    x: np.ndarray,
    pseudo: np.ndarray,
    old_model: Model | None,
    weights: LossWeights,
    rng: np.random.Generator,
    sigma_weak: float = 0.0,
    sigma_strong: float = 0.0,
    temperature: float = 1.0,
):
    """Draw weak and strong views of ``x`` and return :func:`loss_and_grad` on them."""
    xw = augment(x, sigma_weak, rng)
    xs = augment(x, sigma_strong, rng)
    return loss_and_grad(model, xw, xs, pseudo, old_model, weights, temperature)


def sgd_step(model: Model, grads: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    """Heavy-ball SGD: ``v = momentum*v + g``; ``theta -= lr*v``."""
    for name in PARAM_NAMES:
        g = grads[name]
        if g.shape != model.params[name].shape:
            raise DimensionError(f"gradient {name} has shape {g.shape}, expected {model.params[name].shape}")
        check_finite(g, f"gradient {name}")
    for name in PARAM_NAMES:
        v = model.velocity[name]
        v *= momentum
        v += grads[name]
        model.params[name] -= lr * v
