"""Audio-conditioned U-Net.

Blocks A-D encode (each followed by 2x2 max pooling), E is the bottleneck,
and F-I decode. Every decoder block is fed by a stride-2 transposed
convolution whose output is summed element-wise with the pre-pool output of
the symmetric encoder block (A-I, B-H, C-G, D-F). A block is two 3x3
same-padded convolutions, each followed by batch norm and ELU; in blocks
listed in ``ModelConfig.film_blocks`` a FiLM layer sits between the second
batch norm and the final ELU. The FiLM coefficients are affine functions of
a 128-d embedding of the 78x40 spectrogram excerpt.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import functional as F
from .audio import EXCERPT_FRAMES, N_BANDS
from .errors import ConfigError, DimensionError
from .init import ones, orthogonal_init, zeros
from .tensor import Tensor

BLOCKS = "ABCDEFGHI"
ENCODER_BLOCKS = "ABCD"
DECODER_BLOCKS = "FGHI"
Z_DIM = 128

# (filters, kernel, stride) of the spectrogram encoder convolutions
SPEC_ENCODER_LAYERS = (
    (16, 3, 1),
    (16, 3, 1),
    (32, 3, 2),
    (32, 3, 1),
    (64, 3, 2),
    (96, 3, 2),
    (96, 1, 1),
)


def parse_film_blocks(label: str) -> frozenset[str]:
    """Parse ``"C-G"``, ``"E"``, ``"A,C,E"`` or ``"none"`` into a block set.

    ``+`` is accepted as a separator too (``"A+E"``), for contexts where commas
    already separate whole sets.
    """
    text = label.strip().upper()
    if text in ("", "NONE", "-"):
        return frozenset()
    blocks: set[str] = set()
    for part in text.replace("+", ",").split(","):
        part = part.strip()
        if "-" in part:
            lo, _, hi = part.partition("-")
            if lo not in BLOCKS or hi not in BLOCKS or len(lo) != 1 or len(hi) != 1 or lo > hi:
                raise ConfigError(f"invalid FiLM block range {part!r}")
            blocks.update(BLOCKS[BLOCKS.index(lo) : BLOCKS.index(hi) + 1])
        elif len(part) == 1 and part in BLOCKS:
            blocks.add(part)
        else:
            raise ConfigError(f"invalid FiLM block label {part!r}")
    return frozenset(blocks)


def format_film_blocks(blocks) -> str:
    """Inverse of :func:`parse_film_blocks`: a contiguous range prints as ``"C-G"``."""
    ordered = sorted(blocks)
    if not ordered:
        return "none"
    first, last = BLOCKS.index(ordered[0]), BLOCKS.index(ordered[-1])
    if len(ordered) == last - first + 1:
        return ordered[0] if len(ordered) == 1 else f"{ordered[0]}-{ordered[-1]}"
    return ",".join(ordered)


@dataclass
class ModelConfig:
    base_filters: int = 8
    depth: int = 5
    film_blocks: frozenset[str] = field(default_factory=lambda: parse_film_blocks("C-G"))
    bn_momentum: float = F.BN_MOMENTUM
    bn_epsilon: float = F.BN_EPSILON
    pad_multiple: int = 16
    film_init: str = "orthogonal"  # or "identity"

    def __post_init__(self) -> None:
        if isinstance(self.film_blocks, str):
            self.film_blocks = parse_film_blocks(self.film_blocks)
        self.film_blocks = frozenset(self.film_blocks)
        bad = self.film_blocks - set(BLOCKS)
        if bad:
            raise ConfigError(f"unknown FiLM blocks {sorted(bad)}; valid labels are A-I")
        if self.depth != 5:
            raise ConfigError("the U-Net has exactly five levels (blocks A-E)")
        if self.base_filters < 1:
            raise ConfigError("base_filters must be positive")
        if self.pad_multiple % 2 ** (self.depth - 1):
            raise ConfigError(f"pad_multiple must be a multiple of {2 ** (self.depth - 1)}")
        if self.film_init not in ("orthogonal", "identity"):
            raise ConfigError(f"film_init must be 'orthogonal' or 'identity', got {self.film_init!r}")

    def filters(self, block: str) -> int:
        level = BLOCKS.index(block)
        level = min(level, len(BLOCKS) - 1 - level)
        return self.base_filters * 2**level

    def to_dict(self) -> dict:
        d = asdict(self)
        d["film_blocks"] = format_film_blocks(self.film_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Module:
    """Parameter container; parameters are discovered in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, dict):
                for key, sub in value.items():
                    if isinstance(sub, Module):
                        yield from sub.named_parameters(f"{prefix}{name}.{key}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, dict):
                for key, sub in value.items():
                    if isinstance(sub, Module):
                        yield from sub.named_buffers(f"{prefix}{name}.{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng, stride: int = 1):
        self.weight = orthogonal_init((c_out, c_in, kernel, kernel), rng)
        self.bias = zeros((c_out,))
        self.stride = stride
        self.padding = kernel // 2

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class UpConv(Module):
    def __init__(self, c_in: int, c_out: int, rng):
        self.weight = orthogonal_init((c_in, c_out, 2, 2), rng)
        self.bias = zeros((c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng):
        self.weight = orthogonal_init((n_out, n_in), rng)
        self.bias = zeros((n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float, eps: float):
        self.scale = ones((channels,))
        self.shift = zeros((channels,))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return F.batch_norm(
            x, self.scale, self.shift, self.running_mean, self.running_var, training, self.momentum, self.eps
        )


class FiLMGenerator(Module):
    """Per-block affine maps from the audio embedding to (gamma, beta)."""

    def __init__(self, channels: int, rng, mode: str = "orthogonal"):
        self.gamma_map = Linear(Z_DIM, channels, rng)
        self.beta_map = Linear(Z_DIM, channels, rng)
        if mode == "identity":
            self.gamma_map.weight.data[:] = 0.0
            self.gamma_map.bias.data[:] = 1.0
            self.beta_map.weight.data[:] = 0.0

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor]:
        return self.gamma_map(z), self.beta_map(z)


class ConvBlock(Module):
    def __init__(self, c_in: int, c_out: int, cfg: ModelConfig, rng):
        self.conv1 = Conv(c_in, c_out, 3, rng)
        self.bn1 = BatchNorm(c_out, cfg.bn_momentum, cfg.bn_epsilon)
        self.conv2 = Conv(c_out, c_out, 3, rng)
        self.bn2 = BatchNorm(c_out, cfg.bn_momentum, cfg.bn_epsilon)

    def __call__(self, x: Tensor, training: bool, film: tuple[Tensor, Tensor] | None = None) -> Tensor:
        x = F.elu(self.bn1(self.conv1(x), training))
        x = self.bn2(self.conv2(x), training)
        if film is not None:
            x = F.film(x, *film)
        return F.elu(x)


class SpectrogramEncoder(Module):
    """Conv stack over a (B, 78, 40) excerpt producing a (B, 128) embedding."""

    def __init__(self, cfg: ModelConfig, rng):
        self.convs = {}
        self.norms = {}
        c_in = 1
        h, w = N_BANDS, EXCERPT_FRAMES
        for i, (c_out, k, s) in enumerate(SPEC_ENCODER_LAYERS):
            self.convs[str(i)] = Conv(c_in, c_out, k, rng, stride=s)
            self.norms[str(i)] = BatchNorm(c_out, cfg.bn_momentum, cfg.bn_epsilon)
            c_in = c_out
            h, w = (h + 2 * (k // 2) - k) // s + 1, (w + 2 * (k // 2) - k) // s + 1
        self.flat_size = c_in * h * w
        self.fc = Linear(self.flat_size, Z_DIM, rng)
        self.fc_norm = BatchNorm(Z_DIM, cfg.bn_momentum, cfg.bn_epsilon)
        self.trace: list[tuple[int, int]] = []

    def __call__(self, excerpt: Tensor, training: bool) -> Tensor:
        if excerpt.ndim != 3 or excerpt.shape[1:] != (N_BANDS, EXCERPT_FRAMES):
            raise DimensionError(
                f"excerpt batch must have shape (B, {N_BANDS}, {EXCERPT_FRAMES}), got {excerpt.shape}"
            )
        x = excerpt.reshape(excerpt.shape[0], 1, N_BANDS, EXCERPT_FRAMES)
        self.trace = [x.shape[2:]]
        for key, conv in self.convs.items():
            x = F.elu(self.norms[key](conv(x), training))
            self.trace.append(x.shape[2:])
        return F.elu(self.fc_norm(self.fc(F.flatten(x)), training))


class ConditionedUNet(Module):
    """The full network: ``model(pages, excerpts) -> (B, 1, H, W)`` probabilities."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = SpectrogramEncoder(config, rng)
        self.blocks = {}
        c_in = 1
        for b in "ABCDE":
            self.blocks[b] = ConvBlock(c_in, config.filters(b), config, rng)
            c_in = config.filters(b)
        self.up = {}
        for b in DECODER_BLOCKS:
            self.up[b] = UpConv(c_in, config.filters(b), rng)
            self.blocks[b] = ConvBlock(config.filters(b), config.filters(b), config, rng)
            c_in = config.filters(b)
        self.head = Conv(c_in, 1, 1, rng)
        self.film = {
            b: FiLMGenerator(config.filters(b), rng, config.film_init)
            for b in BLOCKS
            if b in config.film_blocks
        }

    def embed(self, excerpts, training: bool = False) -> Tensor:
        return self.encoder(_as_input(excerpts), training)

    def __call__(self, pages, excerpts, training: bool = False) -> Tensor:
        pages = np.asarray(pages.data if isinstance(pages, Tensor) else pages, dtype=np.float64)
        if pages.ndim != 3:
            raise DimensionError(f"page batch must have shape (B, H, W), got {pages.shape}")
        excerpts = _as_input(excerpts)
        if excerpts.shape[0] != pages.shape[0]:
            raise DimensionError(
                f"batch axis (0): {pages.shape[0]} pages but {excerpts.shape[0]} excerpts"
            )
        b, h, w = pages.shape
        x = Tensor(F.pad_to_multiple(pages, self.config.pad_multiple)[:, None])

        z = self.encoder(excerpts, training) if self.film else None
        film = {k: gen(z) for k, gen in self.film.items()}

        skips = {}
        for blk in ENCODER_BLOCKS:
            skips[blk] = self.blocks[blk](x, training, film.get(blk))
            x = F.max_pool2d(skips[blk])
        x = self.blocks["E"](x, training, film.get("E"))
        for blk, skip in zip(DECODER_BLOCKS, reversed(ENCODER_BLOCKS)):
            x = self.up[blk](x) + skips[skip]
            x = self.blocks[blk](x, training, film.get(blk))
        out = F.sigmoid(self.head(x))
        if out.shape[2:] != (h, w):
            out = out[:, :, :h, :w]
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(own) | set(buffers)
        missing = expected - set(state)
        if missing:
            raise DimensionError(f"state is missing parameter {sorted(missing)[0]!r}")
        extra = set(state) - expected
        if extra:
            raise DimensionError(f"state has unexpected parameter {sorted(extra)[0]!r}")
        for name in sorted(expected):
            target = own[name].data if name in own else buffers[name]
            value = np.asarray(state[name])
            if value.shape != target.shape:
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {value.shape} != model shape {target.shape}"
                )
        for name in expected:
            target = own[name].data if name in own else buffers[name]
            target[...] = state[name]


def _as_input(excerpts) -> Tensor:
    if isinstance(excerpts, Tensor):
        return excerpts
    return Tensor(np.asarray(excerpts, dtype=np.float64))


def build_model(config: ModelConfig | None = None, seed: int = 0) -> ConditionedUNet:
    """Instantiate the network with orthogonal weights and zero biases."""
    return ConditionedUNet(config or ModelConfig(), seed)


def block_filters(config: ModelConfig) -> dict[str, int]:
    return {b: config.filters(b) for b in BLOCKS}


def film(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    return F.film(x, gamma, beta)


def count_parameters(model: Module) -> int:
    return sum(p.size for p in model.parameters())
