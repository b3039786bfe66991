"""Deterministic synthetic calcium-imaging blocks with known activity masks.

Each block is a sum of Gaussian-profile neuron footprints driven by
first-order calcium transients (instant rise, exponential decay) on a flat
baseline, plus i.i.d. Gaussian pixel noise. Footprints are truncated at the
mask cutoff so that, with zero noise, background pixels are exactly
constant over time.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import Block, MaskMap
from .errors import ConfigError, PlacementError
from .seeding import split_seed

# A footprint pixel belongs to the mask iff its Gaussian weight exceeds this.
FOOTPRINT_CUTOFF = 0.2

_PLACEMENT_ATTEMPTS = 2000


@dataclass(frozen=True)
class SimConfig:
    height: int = 64
    width: int = 64
    n_frames: int = 60
    n_neurons: int = 4
    neuron_radius_px: float = 3.0          # Gaussian sigma of the footprint
    spike_rate_per_frame: float = 0.15
    decay_tau_frames: float = 8.0
    amplitude: float = 4.0
    baseline: float = 10.0
    noise_sigma: float = 0.3
    min_center_separation_px: float = 12.0
    # Optional inclusive [lo, hi] ranges; when set, each block draws its own
    # value and the scalar field is ignored. Count varies density, amplitude
    # varies difficulty (dim blocks sit closer to the noise floor).
    n_neurons_range: tuple[int, int] | None = None
    amplitude_range: tuple[float, float] | None = None
    noise_sigma_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError("height and width must be positive")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be >= 2")
        if self.n_neurons < 0:
            raise ConfigError("n_neurons must be >= 0")
        if self.neuron_radius_px <= 0:
            raise ConfigError("neuron_radius_px must be > 0")
        if not 0.0 <= self.spike_rate_per_frame <= 1.0:
            raise ConfigError("spike_rate_per_frame must lie in [0, 1]")
        if self.decay_tau_frames <= 0:
            raise ConfigError("decay_tau_frames must be > 0")
        if self.amplitude <= 0:
            raise ConfigError("amplitude must be > 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.min_center_separation_px < 0:
            raise ConfigError("min_center_separation_px must be >= 0")
        if self.n_neurons_range is not None:
            lo, hi = self.n_neurons_range
            if lo < 0 or hi < lo:
                raise ConfigError(f"bad n_neurons_range {self.n_neurons_range}")
            object.__setattr__(self, "n_neurons_range", (int(lo), int(hi)))
        if self.amplitude_range is not None:
            lo, hi = self.amplitude_range
            if lo <= 0 or hi < lo:
                raise ConfigError(f"bad amplitude_range {self.amplitude_range}")
            object.__setattr__(self, "amplitude_range", (float(lo), float(hi)))
        if self.noise_sigma_range is not None:
            lo, hi = self.noise_sigma_range
            if lo < 0 or hi < lo:
                raise ConfigError(f"bad noise_sigma_range {self.noise_sigma_range}")
            object.__setattr__(self, "noise_sigma_range", (float(lo), float(hi)))

    def mask_radius_px(self) -> float:
        """Radius at which the footprint weight crosses FOOTPRINT_CUTOFF."""
        return self.neuron_radius_px * math.sqrt(2.0 * math.log(1.0 / FOOTPRINT_CUTOFF))

    def to_json_dict(self) -> dict:
        d = asdict(self)
        for key in ("n_neurons_range", "amplitude_range", "noise_sigma_range"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for key in ("n_neurons_range", "amplitude_range", "noise_sigma_range"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad sim config: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


@dataclass(frozen=True)
class SimBlock:
    block: Block
    truth_mask: MaskMap
    neuron_centers: tuple[tuple[float, float], ...]


def _place_centers(config: SimConfig, n_neurons: int,
                   rng: np.random.Generator) -> list[tuple[float, float]]:
    """Rejection-sample neuron centers with the required pairwise separation."""
    margin = min(config.mask_radius_px(),
                 (min(config.height, config.width) - 1) / 2.0)
    lo_r, hi_r = margin, config.height - 1 - margin
    lo_c, hi_c = margin, config.width - 1 - margin
    if hi_r < lo_r or hi_c < lo_c:
        raise PlacementError("image too small for the footprint margin")
    centers: list[tuple[float, float]] = []
    min_sep2 = config.min_center_separation_px ** 2
    for _ in range(_PLACEMENT_ATTEMPTS * max(1, n_neurons)):
        if len(centers) == n_neurons:
            break
        r = rng.uniform(lo_r, hi_r)
        c = rng.uniform(lo_c, hi_c)
        if all((r - cr) ** 2 + (c - cc) ** 2 >= min_sep2 for cr, cc in centers):
            centers.append((r, c))
    if len(centers) != n_neurons:
        raise PlacementError(
            f"placed {len(centers)}/{n_neurons} neurons with separation "
            f"{config.min_center_separation_px}px in "
            f"{config.height}x{config.width}; relax the config"
        )
    return centers


def _calcium_trace(n_frames: int, spike_rate: float, tau: float,
                   rng: np.random.Generator) -> np.ndarray:
    """First-order transient: a[t] = a[t-1]*exp(-1/tau) + spike[t]."""
    spikes = (rng.random(n_frames) < spike_rate).astype(np.float64)
    decay = math.exp(-1.0 / tau)
    trace = np.empty(n_frames, dtype=np.float64)
    level = 0.0
    for t in range(n_frames):
        level = level * decay + spikes[t]
        trace[t] = level
    return trace


def _footprint(config: SimConfig, center: tuple[float, float]) -> np.ndarray:
    """Unit-peak Gaussian blob, truncated to 0 below FOOTPRINT_CUTOFF."""
    rows = np.arange(config.height, dtype=np.float64)[:, None]
    cols = np.arange(config.width, dtype=np.float64)[None, :]
    d2 = (rows - center[0]) ** 2 + (cols - center[1]) ** 2
    g = np.exp(-d2 / (2.0 * config.neuron_radius_px ** 2))
    g[g <= FOOTPRINT_CUTOFF] = 0.0
    return g


def generate_block(config: SimConfig, seed: int, block_id: int = 0) -> SimBlock:
    """Generate one block; a pure function of (config, seed, block_id)."""
    rng = np.random.default_rng(seed & (2 ** 64 - 1))
    if config.n_neurons_range is not None:
        lo, hi = config.n_neurons_range
        n_neurons = int(rng.integers(lo, hi + 1))
    else:
        n_neurons = config.n_neurons
    if config.amplitude_range is not None:
        amplitude = float(rng.uniform(*config.amplitude_range))
    else:
        amplitude = config.amplitude
    if config.noise_sigma_range is not None:
        noise_sigma = float(rng.uniform(*config.noise_sigma_range))
    else:
        noise_sigma = config.noise_sigma

    centers = _place_centers(config, n_neurons, rng)
    frames = np.full((config.n_frames, config.height, config.width),
                     config.baseline, dtype=np.float64)
    mask = np.zeros((config.height, config.width), dtype=np.uint8)
    for center in centers:
        g = _footprint(config, center)
        trace = _calcium_trace(config.n_frames, config.spike_rate_per_frame,
                               config.decay_tau_frames, rng)
        frames += amplitude * trace[:, None, None] * g[None, :, :]
        mask |= g > FOOTPRINT_CUTOFF
    if noise_sigma > 0:
        frames += rng.normal(0.0, noise_sigma, size=frames.shape)

    block = Block(block_id=block_id, frames=frames.astype(np.float32))
    return SimBlock(block=block, truth_mask=MaskMap(mask),
                    neuron_centers=tuple((float(r), float(c)) for r, c in centers))


def generate_dataset(config: SimConfig, n_blocks: int, seed: int) -> list[SimBlock]:
    """Generate blocks 0..n_blocks-1 under independently derived child seeds."""
    if n_blocks < 1:
        raise ConfigError(f"n_blocks must be >= 1, got {n_blocks}")
    return [generate_block(config, split_seed(seed, i), block_id=i)
            for i in range(n_blocks)]
