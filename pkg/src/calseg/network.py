"""Bayesian segmentation U-Net: deterministic encoder, flipout decoder.

Encoder: 5 blocks of two conv+BN+leakyReLU stages; blocks 2-5 downsample
with a 2x2 stride-2 first conv, halving H and W exactly. Decoder: 4 blocks
of stride-2 2x2 transposed conv, skip concatenation, then a flipout 3x3
conv (the variational part) with BN+leakyReLU. A 1x1 conv + sigmoid head
emits per-pixel foreground probabilities.

Flipout layers keep a Gaussian posterior per kernel/bias entry,
parameterized as (mu, rho) with sigma = softplus(rho). A sampled pass
shares one kernel perturbation across the batch and decorrelates examples
with random sign flips, which keeps the perturbation zero-mean.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Variable
from .errors import FormatError, IoError, ShapeError

DOWNSAMPLE_FACTOR = 16  # four stride-2 stages
CHECKPOINT_MAGIC = b"BUC1"
SIGMA_INIT_SCALE = 0.3  # posterior width at init, as a fraction of He std


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 13
    encoder_widths: tuple[int, ...] = (8, 16, 32, 64, 128)
    leaky_alpha: float = 0.01
    prior_std: float = 1.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.encoder_widths)
        if len(widths) != 5 or any(w < 1 for w in widths):
            raise ValueError(f"need exactly 5 positive encoder widths, got {widths}")
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.prior_std <= 0:
            raise ValueError("prior_std must be > 0")
        object.__setattr__(self, "encoder_widths", widths)

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        return tuple(reversed(self.encoder_widths[:4]))

    def to_json_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "encoder_widths": list(self.encoder_widths),
            "leaky_alpha": self.leaky_alpha,
            "prior_std": self.prior_std,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NetConfig":
        return cls(
            in_channels=int(d["in_channels"]),
            encoder_widths=tuple(d["encoder_widths"]),
            leaky_alpha=float(d["leaky_alpha"]),
            prior_std=float(d["prior_std"]),
        )


class Conv2DLayer:
    def __init__(self, weight: np.ndarray, bias: np.ndarray,
                 stride: int = 1, padding: int = 0):
        self.weight = Variable(weight, requires_grad=True)
        self.bias = Variable(bias, requires_grad=True)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Variable) -> Variable:
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class ConvTranspose2DLayer:
    def __init__(self, weight: np.ndarray, bias: np.ndarray, stride: int = 2):
        self.weight = Variable(weight, requires_grad=True)
        self.bias = Variable(bias, requires_grad=True)
        self.stride = stride

    def forward(self, x: Variable) -> Variable:
        return ad.conv_transpose2d(x, self.weight, self.bias, self.stride, padding=0)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class BatchNorm2DLayer:
    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5,
                 dtype=np.float32):
        self.gamma = Variable(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Variable(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running = RunningStats(channels, dtype=dtype)
        self.momentum = momentum
        self.epsilon = epsilon

    def forward(self, x: Variable, mode: str) -> Variable:
        return ad.batch_norm2d(x, self.gamma, self.beta, mode, self.running,
                               self.momentum, self.epsilon)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state(self):
        return [("running_mean", self.running.mean), ("running_var", self.running.var)]


class FlipoutConv2D:
    """Variational conv layer sampled with the flipout trick."""

    def __init__(self, mu_kernel: np.ndarray, rho_kernel: np.ndarray,
                 mu_bias: np.ndarray, rho_bias: np.ndarray,
                 prior_std: float = 1.0, stride: int = 1, padding: int = 0):
        self.mu_kernel = Variable(mu_kernel, requires_grad=True)
        self.rho_kernel = Variable(rho_kernel, requires_grad=True)
        self.mu_bias = Variable(mu_bias, requires_grad=True)
        self.rho_bias = Variable(rho_bias, requires_grad=True)
        self.prior_std = prior_std
        self.stride = stride
        self.padding = padding

    def forward_mean(self, x: Variable) -> Variable:
        """Evaluate at the posterior means (no sampling)."""
        return ad.conv2d(x, self.mu_kernel, self.mu_bias, self.stride, self.padding)

    def forward_sampled(self, x: Variable, rng: np.random.Generator) -> Variable:
        """One stochastic pass: shared kernel noise, per-example sign flips."""
        dtype = x.dtype
        cout, cin = self.mu_kernel.value.shape[:2]
        n = x.value.shape[0]
        eps_kernel = rng.standard_normal(self.mu_kernel.value.shape).astype(dtype)
        eps_bias = rng.standard_normal(self.mu_bias.value.shape).astype(dtype)
        sign_in = (rng.integers(0, 2, size=(n, cin)) * 2 - 1).astype(dtype)
        sign_out = (rng.integers(0, 2, size=(n, cout)) * 2 - 1).astype(dtype)

        bias = ad.add(self.mu_bias, ad.mul(ad.softplus(self.rho_bias), eps_bias))
        base = ad.conv2d(x, self.mu_kernel, bias, self.stride, self.padding)
        delta = ad.mul(ad.softplus(self.rho_kernel), eps_kernel)
        perturbed = ad.conv2d(ad.mul(x, sign_in[:, :, None, None]), delta,
                              None, self.stride, self.padding)
        return ad.add(base, ad.mul(perturbed, sign_out[:, :, None, None]))

    def kl(self) -> Variable:
        """Closed-form KL(q || N(0, prior_std^2)) summed over kernel and bias."""
        total = None
        for mu, rho in ((self.mu_kernel, self.rho_kernel),
                        (self.mu_bias, self.rho_bias)):
            sigma = ad.softplus(rho)
            log_prior = math.log(self.prior_std)
            inv_two_var = 1.0 / (2.0 * self.prior_std ** 2)
            quad = ad.mul(ad.add(ad.mul(sigma, sigma), ad.mul(mu, mu)), inv_two_var)
            per_param = ad.add(ad.sub(log_prior, ad.log(sigma)), ad.sub(quad, 0.5))
            term = ad.tensor_sum(per_param)
            total = term if total is None else ad.add(total, term)
        return total

    def parameters(self):
        return [("mu_kernel", self.mu_kernel), ("rho_kernel", self.rho_kernel),
                ("mu_bias", self.mu_bias), ("rho_bias", self.rho_bias)]


@dataclass
class EncoderBlock:
    conv1: Conv2DLayer
    bn1: BatchNorm2DLayer
    conv2: Conv2DLayer
    bn2: BatchNorm2DLayer

    def forward(self, x: Variable, mode: str, alpha: float) -> Variable:
        x = ad.leaky_relu(self.bn1.forward(self.conv1.forward(x), mode), alpha)
        x = ad.leaky_relu(self.bn2.forward(self.conv2.forward(x), mode), alpha)
        return x


@dataclass
class DecoderBlock:
    upsample: ConvTranspose2DLayer
    flipout: FlipoutConv2D
    bn: BatchNorm2DLayer

    def forward(self, x: Variable, skip: Variable, mode: str, alpha: float,
                rng) -> Variable:
        x = self.upsample.forward(x)
        x = ad.concat_channels(x, skip)
        x = self.flipout.forward_sampled(x, rng) if rng is not None \
            else self.flipout.forward_mean(x)
        return ad.leaky_relu(self.bn.forward(x, mode), alpha)


@dataclass
class BayesianUNet:
    config: NetConfig
    encoder: list[EncoderBlock] = field(default_factory=list)
    decoder: list[DecoderBlock] = field(default_factory=list)
    head: Conv2DLayer | None = None

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4:
            raise ShapeError(f"input must be N,C,H,W, got shape {x.shape}")
        n, c, h, w = x.shape
        if c != self.config.in_channels:
            raise ShapeError(f"expected {self.config.in_channels} channels, got {c}")
        if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
            raise ShapeError(
                f"H and W must be divisible by {DOWNSAMPLE_FACTOR}, got {h}x{w}"
            )

    def _forward(self, x, mode: str, rng) -> Variable:
        if not isinstance(x, Variable):
            x = Variable(x)
        self._check_input(x.value)
        alpha = self.config.leaky_alpha
        skips = []
        h = x
        for block in self.encoder:
            h = block.forward(h, mode, alpha)
            skips.append(h)
        for block, skip in zip(self.decoder, reversed(skips[:-1])):
            h = block.forward(h, skip, mode, alpha, rng)
        return ad.sigmoid(self.head.forward(h))

    def forward_deterministic(self, x, mode: str = "eval") -> Variable:
        """Mean-weight pass: flipout layers evaluated at their posterior means."""
        return self._forward(x, mode, rng=None)

    def forward_flipout(self, x, mode: str, rng: np.random.Generator) -> Variable:
        """Stochastic pass with weights sampled once per flipout layer."""
        if rng is None:
            raise ValueError("forward_flipout needs a seeded Generator")
        return self._forward(x, mode, rng=rng)

    def kl_weights(self) -> Variable:
        """Total KL between all flipout posteriors and the prior."""
        total = None
        for block in self.decoder:
            term = block.flipout.kl()
            total = term if total is None else ad.add(total, term)
        return total

    def parameters(self) -> list[tuple[str, Variable]]:
        """Trainable variables in a fixed, checkpoint-stable order."""
        out = []
        for i, block in enumerate(self.encoder):
            for layer_name, layer in (("conv1", block.conv1), ("bn1", block.bn1),
                                      ("conv2", block.conv2), ("bn2", block.bn2)):
                for pname, p in layer.parameters():
                    out.append((f"encoder.{i}.{layer_name}.{pname}", p))
        for i, block in enumerate(self.decoder):
            for layer_name, layer in (("upsample", block.upsample),
                                      ("flipout", block.flipout), ("bn", block.bn)):
                for pname, p in layer.parameters():
                    out.append((f"decoder.{i}.{layer_name}.{pname}", p))
        for pname, p in self.head.parameters():
            out.append((f"head.{pname}", p))
        return out

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Parameters plus batch-norm running stats; the checkpoint payload."""
        out = [(name, var.value) for name, var in self.parameters()]
        for i, block in enumerate(self.encoder):
            for bn_name, bn in (("bn1", block.bn1), ("bn2", block.bn2)):
                for sname, arr in bn.state():
                    out.append((f"encoder.{i}.{bn_name}.{sname}", arr))
        for i, block in enumerate(self.decoder):
            for sname, arr in block.bn.state():
                out.append((f"decoder.{i}.bn.{sname}", arr))
        return sorted(out, key=lambda kv: kv[0])

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = {name for name, _ in self.state_arrays()}
        if expected != set(arrays):
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise FormatError(f"state mismatch: missing {missing}, unexpected {extra}")
        by_name = dict(self.parameters())
        for name, arr in arrays.items():
            if name in by_name:
                target = by_name[name]
                if target.value.shape != arr.shape:
                    raise FormatError(f"{name}: shape {arr.shape} != {target.value.shape}")
                target.value = arr.astype(target.value.dtype)
            else:
                self._set_running(name, arr)

    def _set_running(self, name: str, arr: np.ndarray) -> None:
        part, idx, bn_name, sname = name.split(".")
        block = (self.encoder if part == "encoder" else self.decoder)[int(idx)]
        bn = getattr(block, bn_name) if part == "encoder" else block.bn
        setattr(bn.running, sname.removeprefix("running_"), arr.astype(np.float32))

    def param_count(self) -> int:
        return sum(v.value.size for _, v in self.parameters())

    def zero_grads(self) -> None:
        for _, v in self.parameters():
            v.zero_grad()

    def astype(self, dtype) -> "BayesianUNet":
        """Deep copy with every array cast to dtype (float64 for grad checks)."""
        clone = load_checkpoint_bytes(save_checkpoint_bytes(self))
        for _, v in clone.parameters():
            v.value = v.value.astype(dtype)
        for block in clone.encoder:
            for bn in (block.bn1, block.bn2):
                bn.running.mean = bn.running.mean.astype(dtype)
                bn.running.var = bn.running.var.astype(dtype)
        for block in clone.decoder:
            block.bn.running.mean = block.bn.running.mean.astype(dtype)
            block.bn.running.var = block.bn.running.var.astype(dtype)
        return clone


def _softplus_inverse(y: float) -> float:
    return math.log(math.expm1(y))


def init_params(config: NetConfig, seed: int,
                sigma_init_scale: float = SIGMA_INIT_SCALE) -> BayesianUNet:
    """He-style initialization, deterministic in the seed.

    Flipout rho values start at softplus_inv(sigma_init_scale * he_std):
    small enough that early training is mean-dominated, large enough that
    the posterior widths respond to data within the training budget and
    the ensemble variance reflects ambiguity rather than activation size.
    """
    rng = np.random.default_rng(seed & (2 ** 64 - 1))

    def he(cout, cin, kh, kw):
        std = math.sqrt(2.0 / (cin * kh * kw))
        w = rng.normal(0.0, std, size=(cout, cin, kh, kw)).astype(np.float32)
        return w, std

    def conv(cin, cout, k, stride, padding):
        w, _ = he(cout, cin, k, k)
        return Conv2DLayer(w, np.zeros(cout, dtype=np.float32), stride, padding)

    widths = config.encoder_widths
    encoder = []
    cin = config.in_channels
    for i, cout in enumerate(widths):
        stride = 1 if i == 0 else 2
        k1 = 3 if i == 0 else 2
        p1 = 1 if i == 0 else 0
        encoder.append(EncoderBlock(
            conv1=conv(cin, cout, k1, stride, p1),
            bn1=BatchNorm2DLayer(cout),
            conv2=conv(cout, cout, 3, 1, 1),
            bn2=BatchNorm2DLayer(cout),
        ))
        cin = cout

    decoder = []
    prev = widths[4]
    for cout in config.decoder_widths:
        # Transpose kernels are stored (in, out, kH, kW).
        up = ConvTranspose2DLayer(
            rng.normal(0.0, math.sqrt(2.0 / (prev * 4)),
                       size=(prev, cout, 2, 2)).astype(np.float32),
            np.zeros(cout, dtype=np.float32), stride=2)
        fl_in = 2 * cout
        mu, he_std = he(cout, fl_in, 3, 3)
        rho0 = _softplus_inverse(sigma_init_scale * he_std)
        flipout = FlipoutConv2D(
            mu_kernel=mu,
            rho_kernel=np.full(mu.shape, rho0, dtype=np.float32),
            mu_bias=np.zeros(cout, dtype=np.float32),
            rho_bias=np.full(cout, rho0, dtype=np.float32),
            prior_std=config.prior_std, stride=1, padding=1)
        decoder.append(DecoderBlock(upsample=up, flipout=flipout,
                                    bn=BatchNorm2DLayer(cout)))
        prev = cout

    head = conv(widths[0], 1, 1, 1, 0)
    return BayesianUNet(config=config, encoder=encoder, decoder=decoder, head=head)


def kl_weights(net: BayesianUNet) -> Variable:
    return net.kl_weights()


def save_checkpoint_bytes(net: BayesianUNet) -> bytes:
    arrays = net.state_arrays()
    header = json.dumps(
        {
            "format": "calseg-checkpoint",
            "version": 1,
            "net": net.config.to_json_dict(),
            "params": [[name, list(arr.shape)] for name, arr in arrays],
        },
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes()
                       for _, arr in arrays)
    return CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + payload


def load_checkpoint_bytes(raw: bytes) -> BayesianUNet:
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic (expected {CHECKPOINT_MAGIC!r})")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}") from exc
    if header.get("format") != "calseg-checkpoint":
        raise FormatError(f"not a checkpoint: format={header.get('format')!r}")
    config = NetConfig.from_json_dict(header["net"])
    offset = 8 + header_len
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"truncated payload at {name}")
        arrays[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes after payload")
    net = init_params(config, seed=0)
    net.load_state_arrays(arrays)
    return net


def save_checkpoint(net: BayesianUNet, path) -> None:
    try:
        Path(path).write_bytes(save_checkpoint_bytes(net))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> BayesianUNet:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return load_checkpoint_bytes(raw)
