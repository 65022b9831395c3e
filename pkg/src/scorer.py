"""Dual-tower 1D-CNN word scorer with hand-written reverse-mode gradients.

Per stream (MFCC, deep features):

    phonetic features  relu(x W + b) + E[phone]          T x H
    block 1            conv(k=3) -> BN -> ReLU -> dropout
    block 2            conv(k=3) -> BN -> ReLU -> dropout -> maxpool(2, 2)
    block 3            conv(k=1) -> BN -> ReLU -> dropout
    mean over time                                        F

Head: p = sigmoid(fc2(fc1([h_deep; h_mfcc]))).

Variable-length words in a batch are kept as per-sample arrays; batch norm
statistics are taken over all frames of all samples in the batch.
"""

import logging
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .core import PhoneId, WordSample
from .errors import (
    ConfigError,
    GeometryError,
    NumericError,
    ShapeMismatchError,
    TraceMismatchError,
    UnknownPhoneError,
)

logger = logging.getLogger(__name__)

FEATURE_SETS = ("mfcc", "deep", "multi")
STREAM_ORDER = ("deep", "mfcc")
MODES = ("train", "eval")


@dataclass(frozen=True)
class ScorerConfig:
    """Architecture and optimization settings of the scorer."""
    d_mfcc: int = 39
    d_deep: int = 512
    d_hidden: int = 32
    n_phones: int = 40
    kernel_sizes: tuple[int, ...] = (3, 3, 1)
    paddings: tuple[int, ...] = (1, 1, 0)
    conv_stride: int = 1
    filters: int = 32
    dropout_p: float = 0.1
    pool_kernel: int = 2
    pool_stride: int = 2
    pool_after: int = 2  # 1-based conv block followed by max pooling; 0 disables it
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    pretrain_epochs: int = 20
    finetune_epochs: int = 50
    valid_fraction: float = 0.1
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    feature_set: str = "multi"
    share_towers: bool = False
    share_embedding: bool = True
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        object.__setattr__(self, "paddings", tuple(int(p) for p in self.paddings))

    def validate(self) -> "ScorerConfig":
        """Return self, or raise ConfigError naming the first bad field."""
        for name in ("d_mfcc", "d_deep", "d_hidden", "n_phones", "filters", "conv_stride",
                     "pool_kernel", "pool_stride", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("pretrain_epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not self.kernel_sizes or len(self.kernel_sizes) != len(self.paddings):
            raise ConfigError("kernel_sizes and paddings must be non-empty and of equal length")
        if any(k < 1 for k in self.kernel_sizes) or any(p < 0 for p in self.paddings):
            raise ConfigError("kernel sizes must be >= 1 and paddings >= 0")
        if not 0 <= self.pool_after <= len(self.kernel_sizes):
            raise ConfigError(f"pool_after must be in [0, {len(self.kernel_sizes)}]")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0,1), got {self.dropout_p}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0) or self.adam_eps <= 0:
            raise ConfigError("Adam betas must be in [0,1) and epsilon positive")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ConfigError(f"valid_fraction must be in [0,1), got {self.valid_fraction}")
        if not 0.0 < self.bn_momentum <= 1.0 or self.bn_eps <= 0:
            raise ConfigError("bn_momentum must be in (0,1] and bn_eps positive")
        if self.feature_set not in FEATURE_SETS:
            raise ConfigError(f"feature_set must be one of {FEATURE_SETS}, got {self.feature_set!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        min_input_length(self)
        return self

    @property
    def streams(self) -> tuple[str, ...]:
        """Active streams in head concatenation order."""
        if self.feature_set == "multi":
            return STREAM_ORDER
        return (self.feature_set,)

    @property
    def float_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["kernel_sizes"] = list(self.kernel_sizes)
        data["paddings"] = list(self.paddings)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ScorerConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown scorer config field(s): {', '.join(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# Geometry

def conv_output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    """L_out = (L_in + 2*padding - kernel) // stride + 1."""
    return (length + 2 * padding - kernel) // stride + 1


def layer_lengths(length: int, cfg: ScorerConfig) -> list[int]:
    """Time length after every conv layer and the pooling layer, in order.

    With the default configuration this is [L1, L2, L3 (pooled), L4].
    """
    lengths = []
    for i, (kernel, padding) in enumerate(zip(cfg.kernel_sizes, cfg.paddings), 1):
        length = conv_output_length(length, kernel, cfg.conv_stride, padding)
        if length < 1:
            raise GeometryError(f"Input too short: conv layer {i} output length {length}")
        lengths.append(length)
        if i == cfg.pool_after:
            length = conv_output_length(length, cfg.pool_kernel, cfg.pool_stride)
            if length < 1:
                raise GeometryError(f"Input too short: pooling output length {length}")
            lengths.append(length)
    return lengths


@lru_cache(maxsize=64)
def min_input_length(cfg: ScorerConfig) -> int:
    """Shortest word (frames) the layer stack accepts."""
    for length in range(1, 4097):
        try:
            layer_lengths(length, cfg)
        except GeometryError:
            continue
        return length
    raise ConfigError("Layer geometry rejects every input length up to 4096 frames")


# ---------------------------------------------------------------------------
# Parameters

def tower_name(cfg: ScorerConfig, stream: str) -> str:
    return "tower" if cfg.share_towers else f"{stream}.tower"


def embedding_name(cfg: ScorerConfig, stream: str) -> str:
    return "embedding.weight" if cfg.share_embedding else f"{stream}.embedding.weight"


def stream_dim(cfg: ScorerConfig, stream: str) -> int:
    return cfg.d_mfcc if stream == "mfcc" else cfg.d_deep


def parameter_shapes(cfg: ScorerConfig) -> dict[str, tuple[int, ...]]:
    """Learnable tensors in their fixed (checkpoint) order."""
    shapes: dict[str, tuple[int, ...]] = {}
    for stream in cfg.streams:
        shapes[f"{stream}.proj.weight"] = (stream_dim(cfg, stream), cfg.d_hidden)
        shapes[f"{stream}.proj.bias"] = (cfg.d_hidden,)
    for stream in cfg.streams:
        shapes.setdefault(embedding_name(cfg, stream), (cfg.n_phones, cfg.d_hidden))
    for stream in cfg.streams:
        tower = tower_name(cfg, stream)
        if f"{tower}.conv1.weight" in shapes:
            continue
        channels = cfg.d_hidden
        for i, kernel in enumerate(cfg.kernel_sizes, 1):
            shapes[f"{tower}.conv{i}.weight"] = (kernel, channels, cfg.filters)
            shapes[f"{tower}.bn{i}.gamma"] = (cfg.filters,)
            shapes[f"{tower}.bn{i}.beta"] = (cfg.filters,)
            channels = cfg.filters
    shapes["head.fc1.weight"] = (cfg.filters * len(cfg.streams), cfg.d_hidden)
    shapes["head.fc1.bias"] = (cfg.d_hidden,)
    shapes["head.fc2.weight"] = (cfg.d_hidden, 1)
    shapes["head.fc2.bias"] = (1,)
    return shapes


def buffer_shapes(cfg: ScorerConfig) -> dict[str, tuple[int, ...]]:
    """Batch-norm running statistics."""
    shapes: dict[str, tuple[int, ...]] = {}
    for stream in cfg.streams:
        tower = tower_name(cfg, stream)
        for i in range(1, len(cfg.kernel_sizes) + 1):
            shapes.setdefault(f"{tower}.bn{i}.running_mean", (cfg.filters,))
            shapes.setdefault(f"{tower}.bn{i}.running_var", (cfg.filters,))
    return shapes


@dataclass
class ScorerModel:
    """All learnable parameters and batch-norm running statistics."""
    config: ScorerConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]

    def tensors(self) -> dict[str, np.ndarray]:
        """Parameters then buffers, in checkpoint order."""
        ordered = {name: self.params[name] for name in parameter_shapes(self.config)}
        ordered.update({name: self.buffers[name] for name in buffer_shapes(self.config)})
        return ordered

    @classmethod
    def from_tensors(cls, config: ScorerConfig, tensors: dict[str, np.ndarray]) -> "ScorerModel":
        config.validate()
        params, buffers = {}, {}
        for target, shapes in ((params, parameter_shapes(config)), (buffers, buffer_shapes(config))):
            for name, shape in shapes.items():
                if name not in tensors:
                    raise ShapeMismatchError(f"Missing tensor {name}")
                if tuple(tensors[name].shape) != shape:
                    raise ShapeMismatchError(
                        f"Tensor {name} has shape {tuple(tensors[name].shape)}, expected {shape}"
                    )
                target[name] = tensors[name]
        extra = set(tensors) - set(params) - set(buffers)
        if extra:
            raise ShapeMismatchError(f"Unexpected tensor(s): {', '.join(sorted(extra))}")
        return cls(config, params, buffers)

    def copy(self) -> "ScorerModel":
        return ScorerModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def _fan_in(name: str, shapes: dict[str, tuple[int, ...]]) -> int:
    if name.endswith(".bias"):
        return shapes[name[:-len(".bias")] + ".weight"][0]
    shape = shapes[name]
    if ".conv" in name:
        return shape[0] * shape[1]
    if "embedding" in name:
        return shape[1]
    return shape[0]


def init_model(cfg: ScorerConfig, rng: np.random.Generator) -> ScorerModel:
    """Fresh model: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights,
    batch-norm scale 1 and shift 0, running mean 0 and variance 1."""
    cfg.validate()
    dtype = cfg.float_dtype
    shapes = parameter_shapes(cfg)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".beta"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(_fan_in(name, shapes))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    buffers = {
        name: (np.zeros(shape, dtype=dtype) if name.endswith("mean") else np.ones(shape, dtype=dtype))
        for name, shape in buffer_shapes(cfg).items()
    }
    return ScorerModel(cfg, params, buffers)


# ---------------------------------------------------------------------------
# Forward pass

@dataclass
class _BlockCache:
    windows: list[np.ndarray]
    in_lengths: list[int]
    out_lengths: list[int]
    xhat: np.ndarray
    inv_std: np.ndarray
    relu_mask: np.ndarray
    drop_mask: Optional[np.ndarray]
    pool_argmax: Optional[list[np.ndarray]]
    pool_in_lengths: Optional[list[int]]


@dataclass
class _TowerCache:
    blocks: list[_BlockCache]
    out_lengths: list[int]


@dataclass
class _StreamCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    phones: list[np.ndarray]
    tower: _TowerCache


@dataclass
class ForwardTrace:
    """Activations of one train-mode forward pass, enough for exact gradients."""
    config: ScorerConfig
    batch_size: int
    streams: dict[str, _StreamCache]
    features: np.ndarray
    hidden: np.ndarray
    preds: np.ndarray
    padded: np.ndarray

    def activation_signature(self) -> bytes:
        """ReLU masks and max-pool choices, packed; equal signatures mean the
        same piecewise-linear region."""
        parts = []
        for stream in self.config.streams:
            cache = self.streams[stream]
            parts.extend(np.packbits(z > 0).tobytes() for z in cache.pre)
            for block in cache.tower.blocks:
                parts.append(np.packbits(block.relu_mask).tobytes())
                if block.pool_argmax is not None:
                    parts.extend(a.astype(np.int8).tobytes() for a in block.pool_argmax)
        return b"".join(parts)


def _check_mode(mode: str) -> bool:
    if mode not in MODES:
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


def _phone_indices(phones_per_frame, n_phones: int) -> np.ndarray:
    if isinstance(phones_per_frame, np.ndarray):
        idx = phones_per_frame.astype(np.int64, copy=False)
    else:
        idx = np.array([p.index if isinstance(p, PhoneId) else int(p) for p in phones_per_frame],
                       dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_phones):
        bad = int(idx[(idx < 0) | (idx >= n_phones)][0])
        raise UnknownPhoneError(f"Phone index {bad} outside embedding table of {n_phones} rows")
    return idx


def prepare_sample(sample: WordSample, cfg: ScorerConfig) -> tuple[dict[str, np.ndarray], np.ndarray, bool]:
    """Cast a sample's streams to the model dtype, edge-padding short words.

    Returns:
        (stream arrays, phone indices, padded flag)
    """
    dtype = cfg.float_dtype
    arrays = {"mfcc": sample.mfcc, "deep": sample.deep}
    for stream in cfg.streams:
        if arrays[stream].shape[1] != stream_dim(cfg, stream):
            raise ShapeMismatchError(
                f"{sample.utt_id}:{sample.word}: {stream} has {arrays[stream].shape[1]} dims, "
                f"model expects {stream_dim(cfg, stream)}"
            )
    phones = _phone_indices(sample.phone_indices, cfg.n_phones)
    padded = False
    missing = min_input_length(cfg) - sample.n_frames
    if missing > 0:
        arrays = {k: np.concatenate([v, np.repeat(v[-1:], missing, axis=0)]) for k, v in arrays.items()}
        phones = np.concatenate([phones, np.repeat(phones[-1:], missing)])
        padded = True
    return ({s: np.asarray(arrays[s], dtype=dtype) for s in cfg.streams}, phones, padded)


def phonetic_features(stream: np.ndarray, phones_per_frame, model: ScorerModel,
                      stream_id: str) -> np.ndarray:
    """relu(x W + b) plus the embedding row of each frame's canonical phone."""
    cfg = model.config
    x = np.asarray(stream, dtype=cfg.float_dtype)
    idx = _phone_indices(phones_per_frame, cfg.n_phones)
    if x.shape[0] != idx.shape[0]:
        raise ShapeMismatchError(f"{x.shape[0]} frames but {idx.shape[0]} phone labels")
    _, features = _phonetic(x, idx, model, stream_id)
    return features


def _phonetic(x: np.ndarray, idx: np.ndarray, model: ScorerModel, stream: str):
    cfg = model.config
    pre = x @ model.params[f"{stream}.proj.weight"] + model.params[f"{stream}.proj.bias"]
    features = np.maximum(pre, 0) + model.params[embedding_name(cfg, stream)][idx]
    return pre, features


def _windows(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Sliding windows of shape (L_out, C, kernel) over the zero-padded input."""
    if padding:
        x = np.pad(x, ((padding, padding), (0, 0)))
    if x.shape[0] < kernel:
        raise GeometryError(f"Input of {x.shape[0]} padded frames shorter than kernel {kernel}")
    return sliding_window_view(x, kernel, axis=0)[::stride]


def _max_pool(x: np.ndarray, kernel: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    if x.shape[0] < kernel:
        raise GeometryError(f"Input of {x.shape[0]} frames shorter than pooling kernel {kernel}")
    windows = sliding_window_view(x, kernel, axis=0)[::stride]
    argmax = windows.argmax(axis=2)
    return np.take_along_axis(windows, argmax[..., None], axis=2)[..., 0], argmax


def _batch_norm(y: np.ndarray, model: ScorerModel, prefix: str, train: bool):
    cfg = model.config
    gamma = model.params[f"{prefix}.gamma"]
    beta = model.params[f"{prefix}.beta"]
    if train:
        mean = y.mean(axis=0)
        var = y.var(axis=0)
        m = cfg.bn_momentum
        running_mean = model.buffers[f"{prefix}.running_mean"]
        running_var = model.buffers[f"{prefix}.running_var"]
        model.buffers[f"{prefix}.running_mean"] = ((1 - m) * running_mean + m * mean).astype(running_mean.dtype)
        model.buffers[f"{prefix}.running_var"] = ((1 - m) * running_var + m * var).astype(running_var.dtype)
    else:
        mean = model.buffers[f"{prefix}.running_mean"]
        var = model.buffers[f"{prefix}.running_var"]
    inv_std = 1.0 / np.sqrt(var + cfg.bn_eps)
    xhat = (y - mean) * inv_std
    return gamma * xhat + beta, xhat, inv_std


def _split(stacked: np.ndarray, lengths: list[int]) -> list[np.ndarray]:
    return np.split(stacked, np.cumsum(lengths)[:-1])


def _tower_forward(xs: list[np.ndarray], model: ScorerModel, tower: str, train: bool,
                   rng: Optional[np.random.Generator]) -> tuple[np.ndarray, Optional[_TowerCache]]:
    cfg = model.config
    blocks: list[_BlockCache] = []
    hs = xs
    for i, (kernel, padding) in enumerate(zip(cfg.kernel_sizes, cfg.paddings), 1):
        weight = model.params[f"{tower}.conv{i}.weight"]
        windows = [_windows(h, kernel, cfg.conv_stride, padding) for h in hs]
        ys = [np.tensordot(w, weight, axes=([1, 2], [1, 0])) for w in windows]
        out_lengths = [y.shape[0] for y in ys]
        normed, xhat, inv_std = _batch_norm(np.concatenate(ys), model, f"{tower}.bn{i}", train)
        relu_mask = normed > 0
        act = np.where(relu_mask, normed, 0).astype(normed.dtype)
        drop_mask = None
        if train and cfg.dropout_p > 0:
            drop_mask = ((rng.random(act.shape) >= cfg.dropout_p) / (1.0 - cfg.dropout_p)).astype(act.dtype)
            act = act * drop_mask
        in_lengths = [h.shape[0] for h in hs]
        hs = _split(act, out_lengths)
        argmax = pool_in = None
        if i == cfg.pool_after:
            pool_in = [h.shape[0] for h in hs]
            pooled = [_max_pool(h, cfg.pool_kernel, cfg.pool_stride) for h in hs]
            hs = [p for p, _ in pooled]
            argmax = [a for _, a in pooled]
        if train:
            blocks.append(_BlockCache(windows, in_lengths, out_lengths, xhat, inv_std,
                                      relu_mask, drop_mask, argmax, pool_in))
    pooled_time = np.stack([h.mean(axis=0) for h in hs])
    cache = _TowerCache(blocks, [h.shape[0] for h in hs]) if train else None
    return pooled_time, cache


def conv_tower_forward(x: np.ndarray, model: ScorerModel, stream_id: str, mode: str = "eval",
                       rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Run one T x H phonetic-feature matrix through a stream's tower.

    Returns:
        The time-averaged F-dim word representation.
    """
    train = _check_mode(mode)
    if train and model.config.dropout_p > 0 and rng is None:
        raise ConfigError("train mode with dropout needs a random stream")
    x = np.asarray(x, dtype=model.config.float_dtype)
    layer_lengths(x.shape[0], model.config)
    vec, _ = _tower_forward([x], model, tower_name(model.config, stream_id), train, rng)
    return vec[0]


def forward_batch(model: ScorerModel, samples: Sequence[WordSample], mode: str = "eval",
                  rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, Optional[ForwardTrace]]:
    """Score a batch.

    Args:
        model: The scorer.
        samples: Word samples.
        mode: ``train`` (batch statistics, dropout, trace) or ``eval``
            (running statistics, no dropout).
        rng: Dropout stream, required in train mode when dropout_p > 0.

    Returns:
        (predictions in (0,1), trace or None)
    """
    cfg = model.config
    train = _check_mode(mode)
    if not samples:
        raise ShapeMismatchError("Cannot run the scorer on an empty batch")
    if train and cfg.dropout_p > 0 and rng is None:
        raise ConfigError("train mode with dropout needs a random stream")

    prepared = [prepare_sample(s, cfg) for s in samples]
    padded = np.array([p[2] for p in prepared])
    if padded.any():
        logger.debug("Edge-padded %d short word(s) to %d frames", int(padded.sum()), min_input_length(cfg))

    stream_caches: dict[str, _StreamCache] = {}
    tower_outputs = []
    for stream in cfg.streams:
        inputs = [p[0][stream] for p in prepared]
        phones = [p[1] for p in prepared]
        pres, feats = [], []
        for x, idx in zip(inputs, phones):
            pre, feat = _phonetic(x, idx, model, stream)
            pres.append(pre)
            feats.append(feat)
        vec, tower_cache = _tower_forward(feats, model, tower_name(cfg, stream), train, rng)
        tower_outputs.append(vec)
        if train:
            stream_caches[stream] = _StreamCache(inputs, pres, phones, tower_cache)

    features = np.concatenate(tower_outputs, axis=1)
    hidden = features @ model.params["head.fc1.weight"] + model.params["head.fc1.bias"]
    logits = (hidden @ model.params["head.fc2.weight"] + model.params["head.fc2.bias"])[:, 0]
    if not np.isfinite(logits).all():
        raise NumericError("Scorer produced a non-finite pre-activation")
    preds = expit(logits)

    trace = None
    if train:
        trace = ForwardTrace(cfg, len(samples), stream_caches, features, hidden, preds, padded)
    return preds, trace


def forward(model: ScorerModel, sample: WordSample, mode: str = "eval",
            rng: Optional[np.random.Generator] = None) -> tuple[float, Optional[ForwardTrace]]:
    """Score one word; the trace is None in eval mode."""
    preds, trace = forward_batch(model, [sample], mode, rng)
    return float(preds[0]), trace


def predict(model: ScorerModel, samples: Sequence[WordSample], batch_size: int = 256) -> np.ndarray:
    """Eval-mode scores of many samples (float64)."""
    out = np.empty(len(samples), dtype=np.float64)
    for start in range(0, len(samples), batch_size):
        preds, _ = forward_batch(model, samples[start:start + batch_size], "eval")
        out[start:start + len(preds)] = preds
    return out


# ---------------------------------------------------------------------------
# Backward pass

def _max_pool_backward(grad: np.ndarray, argmax: np.ndarray, in_length: int,
                       kernel: int, stride: int) -> np.ndarray:
    dx = np.zeros((in_length, grad.shape[1]), dtype=grad.dtype)
    n_out = grad.shape[0]
    for j in range(kernel):
        dx[j:j + stride * (n_out - 1) + 1:stride] += np.where(argmax == j, grad, 0)
    return dx


def _tower_backward(dvec: np.ndarray, cache: _TowerCache, model: ScorerModel, tower: str,
                    grads: dict[str, np.ndarray]) -> list[np.ndarray]:
    cfg = model.config
    ds = [np.repeat(dvec[b:b + 1] / n, n, axis=0) for b, n in enumerate(cache.out_lengths)]
    for i in range(len(cfg.kernel_sizes), 0, -1):
        block = cache.blocks[i - 1]
        if block.pool_argmax is not None:
            ds = [_max_pool_backward(d, a, n, cfg.pool_kernel, cfg.pool_stride)
                  for d, a, n in zip(ds, block.pool_argmax, block.pool_in_lengths)]
        d = np.concatenate(ds)
        if block.drop_mask is not None:
            d = d * block.drop_mask
        d = np.where(block.relu_mask, d, 0).astype(d.dtype)

        gamma = model.params[f"{tower}.bn{i}.gamma"]
        grads[f"{tower}.bn{i}.gamma"] += (d * block.xhat).sum(axis=0)
        grads[f"{tower}.bn{i}.beta"] += d.sum(axis=0)
        dxhat = d * gamma
        n = d.shape[0]
        dy = (block.inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                    - block.xhat * (dxhat * block.xhat).sum(axis=0))

        weight = model.params[f"{tower}.conv{i}.weight"]
        kernel, padding, stride = cfg.kernel_sizes[i - 1], cfg.paddings[i - 1], cfg.conv_stride
        new_ds = []
        for windows, g, n_in in zip(block.windows, _split(dy, block.out_lengths), block.in_lengths):
            grads[f"{tower}.conv{i}.weight"] += np.tensordot(windows, g, axes=([0], [0])).transpose(1, 0, 2)
            dxp = np.zeros((n_in + 2 * padding, weight.shape[1]), dtype=g.dtype)
            n_out = g.shape[0]
            for j in range(kernel):
                dxp[j:j + stride * (n_out - 1) + 1:stride] += g @ weight[j].T
            new_ds.append(dxp[padding:padding + n_in])
        ds = new_ds
    return ds


def backward(model: ScorerModel, trace: ForwardTrace, dloss_dpred) -> dict[str, np.ndarray]:
    """Exact gradients of the recorded forward pass.

    Args:
        model: The model the trace was recorded with (unchanged since).
        trace: Train-mode trace.
        dloss_dpred: dL/dp per sample.

    Returns:
        Gradient per parameter name, same shapes as ``model.params``.
    """
    cfg = model.config
    if trace is None or trace.config != cfg:
        raise TraceMismatchError("Trace was not recorded by a train-mode pass of this model")
    grad_pred = np.asarray(dloss_dpred, dtype=cfg.float_dtype).reshape(-1)
    if grad_pred.shape[0] != trace.batch_size:
        raise TraceMismatchError(
            f"Loss gradient has {grad_pred.shape[0]} entries for a batch of {trace.batch_size}"
        )
    params = model.params
    grads = {name: np.zeros_like(p) for name, p in params.items()}

    p = trace.preds
    dlogit = (grad_pred * p * (1 - p))[:, None]
    grads["head.fc2.weight"] += trace.hidden.T @ dlogit
    grads["head.fc2.bias"] += dlogit.sum(axis=0)
    dhidden = dlogit @ params["head.fc2.weight"].T
    grads["head.fc1.weight"] += trace.features.T @ dhidden
    grads["head.fc1.bias"] += dhidden.sum(axis=0)
    dfeatures = dhidden @ params["head.fc1.weight"].T

    width = cfg.filters
    for j, stream in enumerate(cfg.streams):
        cache = trace.streams[stream]
        dfeats = _tower_backward(dfeatures[:, j * width:(j + 1) * width], cache.tower, model,
                                 tower_name(cfg, stream), grads)
        embedding = embedding_name(cfg, stream)
        for x, pre, idx, df in zip(cache.inputs, cache.pre, cache.phones, dfeats):
            np.add.at(grads[embedding], idx, df)
            dpre = np.where(pre > 0, df, 0).astype(df.dtype)
            grads[f"{stream}.proj.weight"] += x.T @ dpre
            grads[f"{stream}.proj.bias"] += dpre.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Gradient check

def _batch_loss(model, samples, targets, seed):
    preds, trace = forward_batch(model, samples, "train", np.random.default_rng(seed))
    return float(np.mean((targets - preds) ** 2)), preds, trace


def gradient_check(model: ScorerModel, samples: Sequence[WordSample], seed: int = 0,
                   step: float = 1e-5) -> tuple[dict[str, float], int]:
    """Compare backward() against central finite differences of the MSE loss.

    Every evaluation reuses the same dropout stream, so masks are fixed.
    Elements whose +/- perturbation changes a ReLU sign or a max-pool choice
    straddle a kink and are skipped.

    Returns:
        (max relative error per parameter tensor, number of skipped elements)
    """
    if model.config.dtype != "float64":
        raise ConfigError("gradient_check needs a float64 model")
    targets = np.array([s.target for s in samples], dtype=np.float64)
    _, preds, trace = _batch_loss(model, samples, targets, seed)
    analytic = backward(model, trace, 2.0 * (preds - targets) / len(samples))
    signature = trace.activation_signature()

    errors: dict[str, float] = {}
    skipped = 0
    for name, param in model.params.items():
        numeric = np.zeros_like(param)
        usable = np.ones(param.shape, dtype=bool)
        flat = param.reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + step
            loss_plus, _, trace_plus = _batch_loss(model, samples, targets, seed)
            flat[k] = original - step
            loss_minus, _, trace_minus = _batch_loss(model, samples, targets, seed)
            flat[k] = original
            if trace_plus.activation_signature() != signature \
                    or trace_minus.activation_signature() != signature:
                usable.reshape(-1)[k] = False
                skipped += 1
                continue
            numeric.reshape(-1)[k] = (loss_plus - loss_minus) / (2 * step)
        a = np.where(usable, analytic[name], 0.0)
        scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), 1e-6)
        errors[name] = float(np.abs(a - numeric).max(initial=0.0)) / scale
    return errors, skipped
