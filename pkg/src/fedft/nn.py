"""Fixed-architecture Conv1D + MLP binary classifier with manual backprop.

Three conv blocks (conv, ReLU, max-pool) feed a three-layer fully connected
head ending in a sigmoid. Forward/backward are hand-written numpy; training
supports freezing everything before a configurable tail of FC layers, which
is the client-side fine-tuning mode. All parameters are float32; gradient
checking upcasts to float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ContainerError, InputError

PROB_CLAMP = 1e-7

PARAM_MAGIC = b"FFTP"
PARAM_VERSION = 1


@dataclass(frozen=True)
class ConvBlock:
    in_channels: int
    out_channels: int
    kernel_size: int
    pool_size: int


@dataclass(frozen=True)
class FcLayer:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Architecture:
    """Layer plan: conv blocks then FC layers, sigmoid on the final scalar."""

    input_dim: int
    conv_blocks: tuple[ConvBlock, ...]
    fc_layers: tuple[FcLayer, ...]

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise InputError("input_dim must be >= 1")
        if not self.conv_blocks or not self.fc_layers:
            raise InputError("architecture needs at least one conv block and one FC layer")
        in_ch = 1
        length = self.input_dim
        for i, blk in enumerate(self.conv_blocks):
            if blk.in_channels != in_ch:
                raise InputError(f"conv{i + 1} expects in_channels={in_ch}, got {blk.in_channels}")
            if blk.kernel_size < 1 or blk.pool_size < 1:
                raise InputError(f"conv{i + 1} kernel/pool sizes must be >= 1")
            length = length // blk.pool_size
            if length < 1:
                raise InputError(f"conv{i + 1} pooling collapses the sequence to zero length")
            in_ch = blk.out_channels
        flat = in_ch * length
        if self.fc_layers[0].in_features != flat:
            raise InputError(f"fc1 expects in_features={flat} (flatten size), got {self.fc_layers[0].in_features}")
        prev = flat
        for i, fc in enumerate(self.fc_layers):
            if fc.in_features != prev:
                raise InputError(f"fc{i + 1} expects in_features={prev}, got {fc.in_features}")
            prev = fc.out_features
        if self.fc_layers[-1].out_features != 1:
            raise InputError("final FC layer must emit a single logit")

    @classmethod
    def build(
        cls,
        input_dim: int = 20,
        conv_channels: Iterable[int] = (16, 32, 64),
        kernel_size: int = 3,
        pool_size: int = 2,
        fc_hidden: Iterable[int] = (64, 32),
    ) -> "Architecture":
        """Construct the standard shape: channel chain + FC head sized off the flatten."""
        conv_channels = tuple(conv_channels)
        fc_hidden = tuple(fc_hidden)
        blocks = []
        in_ch = 1
        length = input_dim
        for out_ch in conv_channels:
            blocks.append(ConvBlock(in_ch, out_ch, kernel_size, pool_size))
            in_ch = out_ch
            length //= pool_size
        dims = [in_ch * length, *fc_hidden, 1]
        fcs = tuple(FcLayer(dims[i], dims[i + 1]) for i in range(len(dims) - 1))
        return cls(input_dim=input_dim, conv_blocks=tuple(blocks), fc_layers=fcs)

    @classmethod
    def default(cls, input_dim: int = 20) -> "Architecture":
        return cls.build(input_dim=input_dim)

    @property
    def n_fc(self) -> int:
        return len(self.fc_layers)

    @property
    def conv_output_lengths(self) -> tuple[int, ...]:
        """Post-pool sequence length after each conv block."""
        lengths = []
        length = self.input_dim
        for blk in self.conv_blocks:
            length //= blk.pool_size
            lengths.append(length)
        return tuple(lengths)

    @property
    def flatten_size(self) -> int:
        return self.conv_blocks[-1].out_channels * self.conv_output_lengths[-1]

    def param_specs(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Ordered (name, shape) pairs; the canonical tensor order everywhere."""
        specs: list[tuple[str, tuple[int, ...]]] = []
        for i, blk in enumerate(self.conv_blocks, start=1):
            specs.append((f"conv{i}.weight", (blk.out_channels, blk.in_channels, blk.kernel_size)))
            specs.append((f"conv{i}.bias", (blk.out_channels,)))
        for i, fc in enumerate(self.fc_layers, start=1):
            specs.append((f"fc{i}.weight", (fc.out_features, fc.in_features)))
            specs.append((f"fc{i}.bias", (fc.out_features,)))
        return tuple(specs)

    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.param_specs())


@dataclass(frozen=True)
class FineTuneConfig:
    """Which tail of the network trains, plus the optimizer hyperparameters.

    ``trainable_fc_tail`` counts trailing FC layers; conv blocks only train
    when ``train_conv`` is set (server pre-training / full-model baselines),
    in which case the whole FC stack must be trainable too.
    """

    trainable_fc_tail: int
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    local_epochs: int = 5
    train_conv: bool = False

    def __post_init__(self) -> None:
        if self.trainable_fc_tail < 1:
            raise InputError("trainable_fc_tail must be >= 1")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.local_epochs < 0:
            raise InputError("local_epochs must be >= 0")

    def validate_for(self, arch: Architecture) -> None:
        if self.trainable_fc_tail > arch.n_fc:
            raise InputError(f"trainable_fc_tail={self.trainable_fc_tail} exceeds {arch.n_fc} FC layers")
        if self.train_conv and self.trainable_fc_tail != arch.n_fc:
            raise InputError("train_conv requires the full FC stack to be trainable")

    @classmethod
    def full(cls, arch: Architecture, learning_rate: float = 0.01, momentum: float = 0.9,
             batch_size: int = 32, local_epochs: int = 5) -> "FineTuneConfig":
        return cls(trainable_fc_tail=arch.n_fc, learning_rate=learning_rate, momentum=momentum,
                   batch_size=batch_size, local_epochs=local_epochs, train_conv=True)


class ModelParams:
    """Ordered, named parameter tensors. Treat received instances as snapshots;
    training code mutates only its own copies."""

    __slots__ = ("tensors",)

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = tensors

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.names() == other.names() and all(
            np.array_equal(self.tensors[n], other.tensors[n]) for n in self.tensors
        )

    def names(self) -> list[str]:
        return list(self.tensors.keys())

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype: np.dtype | type) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.tensors.items()})

    def same_bytes(self, other: "ModelParams", names: Iterable[str] | None = None) -> bool:
        names = list(names) if names is not None else self.names()
        return all(self.tensors[n].tobytes() == other.tensors[n].tobytes() for n in names)


def trainable_tensor_names(arch: Architecture, cfg: FineTuneConfig) -> list[str]:
    """Names of the tensors cfg trains, in canonical order."""
    cfg.validate_for(arch)
    names = []
    if cfg.train_conv:
        for i in range(1, len(arch.conv_blocks) + 1):
            names += [f"conv{i}.weight", f"conv{i}.bias"]
    first = arch.n_fc - cfg.trainable_fc_tail
    for i in range(first + 1, arch.n_fc + 1):
        names += [f"fc{i}.weight", f"fc{i}.bias"]
    return names


def init_params(arch: Architecture, seed: int) -> ModelParams:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in arch.param_specs():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return ModelParams(tensors)


# ---------------------------------------------------------------------------
# Layer primitives (dtype follows the input; float32 in training, float64 in
# gradient checks).


def _conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1 'same' zero-padded 1-D convolution. x: (B,C,L) -> (B,O,L)."""
    k = w.shape[2]
    pl = (k - 1) // 2
    xpad = np.pad(x, ((0, 0), (0, 0), (pl, k - 1 - pl)))
    win = np.lib.stride_tricks.sliding_window_view(xpad, k, axis=2)  # (B,C,L,K)
    y = np.tensordot(win, w, axes=([1, 3], [1, 2]))  # (B,L,O)
    return np.ascontiguousarray(y.transpose(0, 2, 1)) + b[None, :, None]


def _conv1d_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients for _conv1d_forward: returns (dx, dw, db)."""
    B, C, L = x.shape
    k = w.shape[2]
    pl = (k - 1) // 2
    xpad = np.pad(x, ((0, 0), (0, 0), (pl, k - 1 - pl)))
    win = np.lib.stride_tricks.sliding_window_view(xpad, k, axis=2)
    dw = np.tensordot(g, win, axes=([0, 2], [0, 2]))  # (O,C,K)
    db = g.sum(axis=(0, 2))
    dxpad = np.zeros_like(xpad)
    for kk in range(k):
        # y[:, o, i] pulls xpad[:, c, i+kk]; scatter the transpose back
        dxpad[:, :, kk:kk + L] += np.tensordot(g, w[:, :, kk], axes=(1, 0)).transpose(0, 2, 1)
    return dxpad[:, :, pl:pl + L], dw, db


def _maxpool_forward(a: np.ndarray, pool: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pool with floor semantics; first max wins ties."""
    B, C, L = a.shape
    lo = L // pool
    windows = a[:, :, : lo * pool].reshape(B, C, lo, pool)
    return windows.max(axis=3), windows.argmax(axis=3)


def _maxpool_backward(g: np.ndarray, argmax: np.ndarray, input_len: int, pool: int) -> np.ndarray:
    B, C, lo = g.shape
    da = np.zeros((B, C, input_len), dtype=g.dtype)
    positions = argmax + pool * np.arange(lo)[None, None, :]
    bi = np.arange(B)[:, None, None]
    ci = np.arange(C)[None, :, None]
    da[bi, ci, positions] = g  # windows are disjoint, one target per output
    return da


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class _ConvCache:
    x_in: np.ndarray  # input to the conv (B, C_in, L)
    relu_mask: np.ndarray  # conv pre-activation > 0 (B, C_out, L)
    pool_argmax: np.ndarray  # (B, C_out, L//pool)
    prepool_len: int
    pool_size: int


@dataclass
class ActivationCache:
    """What backward() needs, bounded by the trainable region.

    The frozen prefix contributes only ``boundary`` (its final output, which
    is the input of the first trainable FC layer, or the raw conv input when
    the conv stack itself trains).
    """

    cfg: FineTuneConfig
    batch_size: int
    boundary: np.ndarray
    fc_inputs: list[np.ndarray] = field(default_factory=list)
    fc_relu_masks: list[np.ndarray] = field(default_factory=list)
    conv: list[_ConvCache] | None = None
    conv_input: np.ndarray | None = None


def frozen_forward(params: ModelParams, arch: Architecture, X: np.ndarray, cfg: FineTuneConfig) -> np.ndarray:
    """Run the frozen prefix (conv stack + leading FC layers) to the trainable boundary.

    With ``train_conv`` the boundary is the input itself reshaped to (B,1,d).
    """
    cfg.validate_for(arch)
    if X.shape[1] != arch.input_dim:
        raise InputError(f"model expects {arch.input_dim} input columns, batch has {X.shape[1]}")
    a3 = X.reshape(X.shape[0], 1, arch.input_dim)
    if cfg.train_conv:
        return a3
    t = params.tensors
    for i, blk in enumerate(arch.conv_blocks, start=1):
        z = _conv1d_forward(a3, t[f"conv{i}.weight"], t[f"conv{i}.bias"])
        a3, _ = _maxpool_forward(np.maximum(z, 0), blk.pool_size)
    a = a3.reshape(X.shape[0], -1)
    n_frozen_fc = arch.n_fc - cfg.trainable_fc_tail
    for i in range(1, n_frozen_fc + 1):
        a = np.maximum(a @ t[f"fc{i}.weight"].T + t[f"fc{i}.bias"], 0)
    return a


def head_forward(
    params: ModelParams,
    arch: Architecture,
    boundary: np.ndarray,
    cfg: FineTuneConfig,
    want_cache: bool = False,
) -> tuple[np.ndarray, ActivationCache | None]:
    """Trainable tail from the boundary activation to clamped probabilities."""
    t = params.tensors
    B = boundary.shape[0]
    cache = ActivationCache(cfg=cfg, batch_size=B, boundary=boundary) if want_cache else None

    a: np.ndarray
    if cfg.train_conv:
        a3 = boundary
        if cache is not None:
            cache.conv = []
        for i, blk in enumerate(arch.conv_blocks, start=1):
            z = _conv1d_forward(a3, t[f"conv{i}.weight"], t[f"conv{i}.bias"])
            relu = np.maximum(z, 0)
            pooled, argmax = _maxpool_forward(relu, blk.pool_size)
            if cache is not None:
                cache.conv.append(_ConvCache(x_in=a3, relu_mask=z > 0, pool_argmax=argmax,
                                             prepool_len=z.shape[2], pool_size=blk.pool_size))
            a3 = pooled
        a = a3.reshape(B, -1)
    else:
        a = boundary

    first = arch.n_fc - cfg.trainable_fc_tail
    for i in range(first + 1, arch.n_fc + 1):
        if cache is not None:
            cache.fc_inputs.append(a)
        z = a @ t[f"fc{i}.weight"].T + t[f"fc{i}.bias"]
        if i < arch.n_fc:
            if cache is not None:
                cache.fc_relu_masks.append(z > 0)
            a = np.maximum(z, 0)
        else:
            a = z
    probs = np.clip(_sigmoid(a[:, 0]), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return probs, cache


def forward(
    params: ModelParams,
    arch: Architecture,
    X: np.ndarray,
    cache_cfg: FineTuneConfig | None = None,
) -> tuple[np.ndarray, ActivationCache | None]:
    """Full forward pass; with ``cache_cfg`` the cache holds what backward needs."""
    if cache_cfg is None:
        return sigmoid_probs(params, arch, X), None
    boundary = frozen_forward(params, arch, X, cache_cfg)
    return head_forward(params, arch, boundary, cache_cfg, want_cache=True)


def sigmoid_probs(params: ModelParams, arch: Architecture, X: np.ndarray) -> np.ndarray:
    """Inference-only forward returning clamped probabilities."""
    if X.shape[1] != arch.input_dim:
        raise InputError(f"model expects {arch.input_dim} input columns, batch has {X.shape[1]}")
    t = params.tensors
    a3 = X.reshape(X.shape[0], 1, arch.input_dim)
    for i, blk in enumerate(arch.conv_blocks, start=1):
        z = _conv1d_forward(a3, t[f"conv{i}.weight"], t[f"conv{i}.bias"])
        a3, _ = _maxpool_forward(np.maximum(z, 0), blk.pool_size)
    a = a3.reshape(X.shape[0], -1)
    for i in range(1, arch.n_fc + 1):
        z = a @ t[f"fc{i}.weight"].T + t[f"fc{i}.bias"]
        a = np.maximum(z, 0) if i < arch.n_fc else z
    return np.clip(_sigmoid(a[:, 0]), PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7]."""
    if probs.shape[0] != labels.shape[0]:
        raise InputError(f"probs length {probs.shape[0]} != labels length {labels.shape[0]}")
    p = np.clip(probs.astype(np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = labels.astype(np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def backward(
    cache: ActivationCache,
    params: ModelParams,
    probs: np.ndarray,
    labels: np.ndarray,
    cfg: FineTuneConfig,
) -> dict[str, np.ndarray]:
    """Gradients of mean BCE w.r.t. exactly the trainable tensors."""
    if cache.cfg != cfg:
        raise InputError("activation cache was produced under a different fine-tune config")
    if probs.shape[0] != cache.batch_size or labels.shape[0] != cache.batch_size:
        raise InputError("probs/labels length does not match the cached batch")
    t = params.tensors
    dtype = cache.boundary.dtype
    B = cache.batch_size
    grads: dict[str, np.ndarray] = {}

    n_fc = _count_fc(t)
    first_fc = n_fc - cfg.trainable_fc_tail + 1
    dz = ((probs - labels.astype(probs.dtype)) / B).astype(dtype)[:, None]  # (B,1) at the logit
    da_prev = dz  # placeholder; overwritten on the first iteration
    for pos in range(cfg.trainable_fc_tail - 1, -1, -1):
        layer = first_fc + pos
        a_in = cache.fc_inputs[pos]
        w = t[f"fc{layer}.weight"]
        if pos < cfg.trainable_fc_tail - 1:
            dz = da_prev * cache.fc_relu_masks[pos]
        grads[f"fc{layer}.weight"] = dz.T @ a_in
        grads[f"fc{layer}.bias"] = dz.sum(axis=0)
        da_prev = dz @ w

    if cfg.train_conv:
        assert cache.conv is not None
        lo = cache.conv[-1].pool_argmax.shape[2]
        g3 = da_prev.reshape(B, -1, lo)
        for i in range(len(cache.conv), 0, -1):
            cc = cache.conv[i - 1]
            g = _maxpool_backward(g3, cc.pool_argmax, cc.prepool_len, cc.pool_size)
            g = g * cc.relu_mask
            dx, dw, db = _conv1d_backward(g, cc.x_in, t[f"conv{i}.weight"])
            grads[f"conv{i}.weight"] = dw
            grads[f"conv{i}.bias"] = db
            g3 = dx

    return {name: grads[name] for name in t if name in grads}


def _count_fc(tensors: dict[str, np.ndarray]) -> int:
    return sum(1 for n in tensors if n.startswith("fc") and n.endswith(".weight"))


class OptimizerState:
    """Per-trainable-tensor velocity buffers for heavy-ball momentum."""

    __slots__ = ("velocity",)

    def __init__(self, velocity: dict[str, np.ndarray]):
        self.velocity = velocity

    @classmethod
    def zeros_like(cls, params: ModelParams, names: Iterable[str]) -> "OptimizerState":
        return cls({n: np.zeros_like(params.tensors[n]) for n in names})


def sgd_momentum_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    momentum: float,
) -> None:
    """v <- mu*v + g; w <- w - lr*v, in place on the trainable tensors only."""
    for name, g in grads.items():
        if name not in state.velocity:
            raise InputError(f"optimizer state missing velocity for {name}")
        w = params.tensors[name]
        v = state.velocity[name]
        if v.shape != g.shape or w.shape != g.shape:
            raise InputError(f"shape mismatch on {name}: w{w.shape} v{v.shape} g{g.shape}")
        v *= momentum
        v += g
        w -= lr * v


# ---------------------------------------------------------------------------
# Parameter serialization ("FFTP").


def serialize_tensors(named: Iterable[tuple[str, np.ndarray]]) -> bytes:
    """Pack named float32 tensors: magic, version u16, count u32, then per
    tensor name (u16 length + UTF-8), rank u8, dims u32 each, f32 LE data."""
    items = list(named)
    out = bytearray()
    out += PARAM_MAGIC
    out += struct.pack("<HI", PARAM_VERSION, len(items))
    for name, arr in items:
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def deserialize_tensors(data: bytes) -> list[tuple[str, np.ndarray]]:
    """Inverse of serialize_tensors; strict, no partial results."""
    view = memoryview(data)
    if len(view) < 10:
        raise ContainerError("parameter blob truncated before header")
    if bytes(view[:4]) != PARAM_MAGIC:
        raise ContainerError(f"bad parameter magic {bytes(view[:4])!r}")
    version, count = struct.unpack_from("<HI", view, 4)
    if version != PARAM_VERSION:
        raise ContainerError(f"unsupported parameter format version {version}")
    pos = 10
    out: list[tuple[str, np.ndarray]] = []
    for _ in range(count):
        if pos + 2 > len(view):
            raise ContainerError("parameter blob truncated in tensor name length")
        (name_len,) = struct.unpack_from("<H", view, pos)
        pos += 2
        if pos + name_len + 1 > len(view):
            raise ContainerError("parameter blob truncated in tensor name")
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        rank = view[pos]
        pos += 1
        if pos + 4 * rank > len(view):
            raise ContainerError(f"parameter blob truncated in dims of {name!r}")
        shape = struct.unpack_from(f"<{rank}I", view, pos) if rank else ()
        pos += 4 * rank
        n_elem = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = 4 * n_elem
        if pos + nbytes > len(view):
            raise ContainerError(f"parameter blob truncated in data of {name!r}")
        arr = np.frombuffer(view, dtype="<f4", count=n_elem, offset=pos).reshape(shape).copy()
        pos += nbytes
        out.append((name, arr))
    if pos != len(view):
        raise ContainerError(f"{len(view) - pos} trailing bytes after last tensor")
    return out


def serialize_params(params: ModelParams) -> bytes:
    return serialize_tensors(params.tensors.items())


def deserialize_params(data: bytes, arch: Architecture) -> ModelParams:
    """Parse a full model blob, validating names/order/shapes against arch."""
    items = deserialize_tensors(data)
    specs = arch.param_specs()
    if len(items) != len(specs):
        raise ContainerError(f"expected {len(specs)} tensors, blob has {len(items)}")
    tensors: dict[str, np.ndarray] = {}
    for (name, arr), (want_name, want_shape) in zip(items, specs):
        if name != want_name:
            raise ContainerError(f"tensor {name!r} out of place; expected {want_name!r}")
        if arr.shape != want_shape:
            raise ContainerError(f"tensor {name!r} has shape {arr.shape}, architecture wants {want_shape}")
        tensors[name] = arr
    return ModelParams(tensors)


# ---------------------------------------------------------------------------
# Finite-difference verification harness.


def grad_check(
    arch: Architecture,
    seed: int,
    batch_size: int,
    epsilon: float = 1e-4,
    cfg: FineTuneConfig | None = None,
) -> float:
    """Worst relative error of backward() vs central finite differences.

    Runs entirely in float64. ``cfg=None`` checks full-network training.
    Relative error uses max(|analytic|, |numeric|, 1e-12) as denominator.
    The default step keeps the oracle's own O(eps^2) truncation error well
    below the 1e-4 comparison threshold on small-magnitude entries.
    """
    if cfg is None:
        cfg = FineTuneConfig.full(arch)
    cfg.validate_for(arch)
    params = init_params(arch, seed).astype(np.float64)
    rng = np.random.default_rng(seed + 1)
    X = rng.standard_normal((batch_size, arch.input_dim))
    y = rng.integers(0, 2, size=batch_size).astype(np.uint8)

    probs, cache = forward(params, arch, X, cache_cfg=cfg)
    grads = backward(cache, params, probs, y, cfg)

    def loss_at() -> float:
        p, _ = forward(params, arch, X, cache_cfg=cfg)
        return bce_loss(p, y)

    worst = 0.0
    for name in trainable_tensor_names(arch, cfg):
        w = params.tensors[name]
        g = grads[name]
        flat = w.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = loss_at()
            flat[i] = orig - epsilon
            lm = loss_at()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * epsilon)
            denom = max(abs(gflat[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
