"""Monte Carlo ensemble prediction and uncertainty estimation.

The probability map is the per-pixel mean over n stochastic forward
passes; the epistemic uncertainty map is the per-pixel population
variance. Pass i always uses the child seed split_seed(seed, i), so the
result does not depend on execution order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureStack, ImageMap, MaskMap
from .errors import ConfigError
from .network import BayesianUNet
from .seeding import split_seed

DEFAULT_SAMPLES = 40


@dataclass(frozen=True)
class InferenceResult:
    probability: ImageMap
    uncertainty: ImageMap
    n_samples: int
    seed: int

    def mean_uncertainty(self) -> float:
        return float(self.uncertainty.values.mean(dtype=np.float64))


def mc_ensemble(net: BayesianUNet, stack: FeatureStack,
                n: int = DEFAULT_SAMPLES, seed: int = 0) -> InferenceResult:
    """Run n flipout passes in eval mode and reduce to mean/variance maps."""
    if n < 1:
        raise ConfigError(f"ensemble size must be >= 1, got {n}")
    x = stack.channels[None]
    samples = np.empty((n,) + stack.shape[1:], dtype=np.float32)
    for i in range(n):
        rng = np.random.default_rng(split_seed(seed, i))
        out = net.forward_flipout(x, mode="eval", rng=rng)
        samples[i] = out.value[0, 0]
    mean = samples.mean(axis=0, dtype=np.float64)
    var = np.mean((samples.astype(np.float64) - mean) ** 2, axis=0)
    return InferenceResult(
        probability=ImageMap(mean.astype(np.float32)),
        uncertainty=ImageMap(var.astype(np.float32)),
        n_samples=n,
        seed=seed,
    )


def binarize(prob: ImageMap, threshold: float = 0.5) -> MaskMap:
    """Foreground wherever probability strictly exceeds the threshold."""
    return MaskMap((prob.values > threshold).astype(np.uint8))
