"""Dataset split, Adam optimizer, and the seeded training loop."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import losses
from .autodiff import Tape, Variable
from .data import FeatureStack, MaskMap
from .errors import ConfigError, ShapeError
from .network import BayesianUNet, DOWNSAMPLE_FACTOR
from .seeding import split_seed


@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 60
    batch_size: int = 2
    learning_rate: float = 0.0005
    # None means "resolve to 1/num_batches when training starts".
    kl_scale: float | None = None
    clamp_epsilon: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")
        if self.kl_scale is not None and self.kl_scale < 0:
            raise ConfigError("kl_scale must be >= 0")
        if self.clamp_epsilon <= 0:
            raise ConfigError("clamp_epsilon must be > 0")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_total: float
    mean_ce: float
    mean_dice: float
    mean_kld: float
    mean_weight_kl: float
    seconds: float
    steps: int

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "mean_total": self.mean_total,
            "mean_ce": self.mean_ce,
            "mean_dice": self.mean_dice,
            "mean_kld": self.mean_kld,
            "mean_weight_kl": self.mean_weight_kl,
            "seconds": self.seconds,
            "steps": self.steps,
        }


TrainHistory = list[EpochStats]


def history_to_jsonl(history: TrainHistory) -> str:
    return "\n".join(json.dumps(e.to_json_dict(), sort_keys=True) for e in history) + "\n"


class Adam:
    """Adam with float64 moment buffers; updates in a fixed parameter order."""

    def __init__(self, params: list[tuple[str, Variable]], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.t = 0
        self._m = {name: np.zeros(v.value.shape, dtype=np.float64) for name, v in params}
        self._v = {name: np.zeros(v.value.shape, dtype=np.float64) for name, v in params}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, var in self.params:
            if var.grad is None:
                continue
            g = var.grad.astype(np.float64)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.learning_rate * (m / bc1)
                      / (np.sqrt(v / bc2) + self.epsilon))
            var.value = (var.value.astype(np.float64) - update).astype(var.value.dtype)

    def zero_grads(self) -> None:
        for _, var in self.params:
            var.zero_grad()


def split_dataset(items: list, fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then the first ceil(fraction*n) items become train."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must lie in [0, 1], got {fraction}")
    order = np.random.default_rng(seed & (2 ** 64 - 1)).permutation(len(items))
    n_train = math.ceil(fraction * len(items))
    train = [items[i] for i in order[:n_train]]
    test = [items[i] for i in order[n_train:]]
    return train, test


def _validate_dataset(dataset: list[tuple[FeatureStack, MaskMap]]) -> None:
    if not dataset:
        raise ConfigError("training dataset is empty")
    shapes = {stack.shape[1:] for stack, _ in dataset}
    if len(shapes) != 1:
        raise ShapeError(f"feature stacks disagree on H x W: {sorted(shapes)}")
    (h, w) = next(iter(shapes))
    if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
        raise ShapeError(f"H and W must be divisible by {DOWNSAMPLE_FACTOR}, got {h}x{w}")
    for stack, mask in dataset:
        if mask.shape != (h, w):
            raise ShapeError(f"mask {mask.shape} does not match features {(h, w)}")


def train(net: BayesianUNet, dataset: list[tuple[FeatureStack, MaskMap]],
          hp: Hyperparams) -> tuple[BayesianUNet, TrainHistory]:
    """Train in place; deterministic given (net, dataset order, hp.seed).

    One flipout sample per forward pass; batches are re-shuffled per epoch
    from seeds derived off hp.seed, so reruns are bit-identical.
    """
    _validate_dataset(dataset)
    n = len(dataset)
    num_batches = math.ceil(n / hp.batch_size)
    if hp.kl_scale is None:
        hp = replace(hp, kl_scale=1.0 / num_batches)

    features = np.stack([stack.channels for stack, _ in dataset])
    labels = np.stack([mask.values.astype(np.float32) for _, mask in dataset])[:, None]

    optimizer = Adam([(name, var) for name, var in net.parameters()],
                     hp.learning_rate)
    history: TrainHistory = []
    for epoch in range(hp.epochs):
        started = time.perf_counter()
        order = np.random.default_rng(split_seed(hp.seed, epoch)).permutation(n)
        sums = {"total": 0.0, "ce": 0.0, "dice": 0.0, "kld": 0.0, "weight_kl": 0.0}
        steps = 0
        for step in range(num_batches):
            idx = order[step * hp.batch_size:(step + 1) * hp.batch_size]
            x = features[idx]
            y = labels[idx]
            rng = np.random.default_rng(split_seed(hp.seed, epoch, step))
            optimizer.zero_grads()
            with Tape() as tape:
                pred = net.forward_flipout(x, mode="train", rng=rng)
                terms = losses.loss_terms(y, pred, net, hp)
                tape.backward(terms["total"])
            optimizer.step()
            sums["total"] += float(terms["total"].value)
            for key in ("ce", "dice", "kld", "weight_kl"):
                sums[key] += terms[key]
            steps += 1
        history.append(EpochStats(
            epoch=epoch,
            mean_total=sums["total"] / steps,
            mean_ce=sums["ce"] / steps,
            mean_dice=sums["dice"] / steps,
            mean_kld=sums["kld"] / steps,
            mean_weight_kl=sums["weight_kl"] / steps,
            seconds=time.perf_counter() - started,
            steps=steps,
        ))
    return net, history
