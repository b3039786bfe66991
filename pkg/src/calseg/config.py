"""Pipeline configuration: defaults, JSON loading, schema validation.

A config file may override any subset of the sections; everything else
falls back to the desk-scale defaults below. The merged document is
validated against the published JSON schema before any command runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError, IoError
from .network import NetConfig
from .simulate import SimConfig
from .training import Hyperparams

DEFAULTS: dict = {
    # Desk scale: 3-6 neurons per 64x64 block; the per-block noise level is
    # drawn from noise_sigma_range so the test set spans easy to hard blocks
    # (that spread is what makes uncertainty track difficulty).
    "sim": {
        "height": 64,
        "width": 64,
        "n_frames": 60,
        "n_neurons": 4,
        "neuron_radius_px": 3.0,
        "spike_rate_per_frame": 0.15,
        "decay_tau_frames": 8.0,
        "amplitude": 4.5,
        "baseline": 10.0,
        "noise_sigma": 0.3,
        "min_center_separation_px": 12.0,
        "n_neurons_range": [3, 6],
        "amplitude_range": None,
        "noise_sigma_range": [0.25, 2.0],
    },
    "train": {
        "epochs": 60,
        "batch_size": 2,
        "learning_rate": 0.0005,
        "kl_scale": None,
        "clamp_epsilon": 1e-7,
        "seed": 12345,
        "train_fraction": 0.8,
    },
    "infer": {
        "n_samples": 40,
        "threshold": 0.5,
        "seed": 777,
    },
    "net": {
        "in_channels": 13,
        "encoder_widths": [8, 16, 32, 64, 128],
        "leaky_alpha": 0.01,
        "prior_std": 1.0,
    },
    "paths": {
        "workspace": ".",
    },
}


def schema() -> dict:
    text = resources.files("calseg").joinpath("pipeline.schema.json").read_text("utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class PipelineConfig:
    sim: SimConfig
    hyperparams: Hyperparams
    train_fraction: float
    n_samples: int
    threshold: float
    infer_seed: int
    net: NetConfig
    workspace: str
    raw: dict

    @classmethod
    def from_dict(cls, document: dict) -> "PipelineConfig":
        merged = _merge_over_defaults(document)
        try:
            jsonschema.validate(merged, schema(),
                                cls=jsonschema.Draft202012Validator)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config does not match schema: {exc.message} "
                              f"(at {'/'.join(str(p) for p in exc.absolute_path)})") \
                from exc
        train = dict(merged["train"])
        train_fraction = train.pop("train_fraction")
        try:
            return cls(
                sim=SimConfig.from_json_dict(merged["sim"]),
                hyperparams=Hyperparams(**train),
                train_fraction=train_fraction,
                n_samples=merged["infer"]["n_samples"],
                threshold=merged["infer"]["threshold"],
                infer_seed=merged["infer"]["seed"],
                net=NetConfig.from_json_dict(merged["net"]),
                workspace=merged["paths"]["workspace"],
                raw=merged,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _merge_over_defaults(document: dict) -> dict:
    if not isinstance(document, dict):
        raise ConfigError(f"config root must be a JSON object, got {type(document).__name__}")
    merged = {section: dict(values) for section, values in DEFAULTS.items()}
    for section, values in document.items():
        if section not in merged:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        merged[section].update(values)
    return merged


def load_config(path=None) -> PipelineConfig:
    """Load and validate a config file; None gives the built-in defaults."""
    if path is None:
        return PipelineConfig.from_dict({})
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(document)
