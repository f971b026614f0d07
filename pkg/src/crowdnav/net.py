"""Convolutional policy network and its value twin, built from the layer
primitives with hand-assembled backpropagation.

Trunk: three (conv3x3 -> relu -> maxpool2) stages over the 4-channel map
input, a flatten FC to 512, a linear 3->3 goal projection concatenated in,
two FC-512 trunk layers, and a linear head (28 logits, 2-unit action mean,
or a scalar value).  Continuous policies carry a standalone learnable
log-std pair.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .net_ops import (
    conv3x3_backward,
    conv3x3_forward,
    fc_backward,
    fc_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
)
from .world import ACTION_TABLE, Action, V_MAX, W_MAX

CHECKPOINT_MAGIC = b"CNAV"
CHECKPOINT_VERSION = 1
LOG_STD_INIT = -0.5
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ArchConfig:
    in_channels: int = 4
    in_size: int = 48
    conv_filters: tuple[int, ...] = (32, 64, 64)
    flatten_fc: int = 512
    goal_dim: int = 3
    goal_proj: int = 3
    trunk: tuple[int, ...] = (512, 512)
    head_dim: int = 28
    with_log_std: bool = False

    def spatial_after_convs(self) -> int:
        s = self.in_size
        for _ in self.conv_filters:
            s //= 2
        return s

    def flat_dim(self) -> int:
        return self.spatial_after_convs() ** 2 * self.conv_filters[-1]

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Documented parameter order for flattening and checkpoints."""
        shapes = []
        c_in = self.in_channels
        for k, c_out in enumerate(self.conv_filters, 1):
            shapes.append((f"conv{k}_w", (3, 3, c_in, c_out)))
            shapes.append((f"conv{k}_b", (c_out,)))
            c_in = c_out
        shapes.append(("flat_w", (self.flat_dim(), self.flatten_fc)))
        shapes.append(("flat_b", (self.flatten_fc,)))
        shapes.append(("goal_w", (self.goal_dim, self.goal_proj)))
        shapes.append(("goal_b", (self.goal_proj,)))
        d = self.flatten_fc + self.goal_proj
        for k, width in enumerate(self.trunk, 1):
            shapes.append((f"fc{k}_w", (d, width)))
            shapes.append((f"fc{k}_b", (width,)))
            d = width
        shapes.append(("head_w", (d, self.head_dim)))
        shapes.append(("head_b", (self.head_dim,)))
        if self.with_log_std:
            shapes.append(("log_std", (self.head_dim,)))
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())

    def describe(self) -> str:
        return (
            f"in={self.in_channels}x{self.in_size} conv={self.conv_filters} "
            f"flat={self.flatten_fc} goal={self.goal_dim}->{self.goal_proj} "
            f"trunk={self.trunk} head={self.head_dim} log_std={self.with_log_std}"
        )


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float, dtype) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).astype(dtype)


def init_params(arch: ArchConfig, rng: np.random.Generator, head_gain: float = 0.01, dtype=np.float32):
    """Orthogonal weights (gain sqrt(2) on hidden layers), zero biases,
    log-std initialized to -0.5."""
    params: dict[str, np.ndarray] = {}
    for name, shape in arch.param_shapes():
        if name == "log_std":
            params[name] = np.full(shape, LOG_STD_INIT, dtype=dtype)
        elif name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif name.startswith("conv"):
            c_out = shape[3]
            fan_in = shape[0] * shape[1] * shape[2]
            params[name] = _orthogonal(rng, (fan_in, c_out), math.sqrt(2.0), dtype).reshape(shape)
        else:
            gain = head_gain if name == "head_w" else (1.0 if name == "goal_w" else math.sqrt(2.0))
            params[name] = _orthogonal(rng, shape, gain, dtype)
    return params


class ConvNet:
    """Forward/backward for one network instance (policy or value twin).

    Stateless apart from the parameter dict; forward returns a cache that
    backward consumes, so concurrent rollouts can share read-only params.
    """

    def __init__(self, arch: ArchConfig, params: dict[str, np.ndarray]):
        self.arch = arch
        self.params = params

    @classmethod
    def create(cls, arch: ArchConfig, rng: np.random.Generator, head_gain=0.01, dtype=np.float32):
        return cls(arch, init_params(arch, rng, head_gain=head_gain, dtype=dtype))

    @property
    def dtype(self):
        return self.params["head_w"].dtype

    def forward(self, maps: np.ndarray, goal: np.ndarray):
        """maps (N, C, H, W) or (N, H, W, C); goal (N, goal_dim).

        Returns (head output (N, head_dim), cache).
        """
        p = self.params
        if not np.isfinite(maps).all() or not np.isfinite(goal).all():
            raise ValueError("non-finite values in network input")
        if maps.shape[1] == self.arch.in_channels and maps.shape[-1] != self.arch.in_channels:
            maps = np.transpose(maps, (0, 2, 3, 1))  # NCHW -> NHWC
        h = np.ascontiguousarray(maps, dtype=self.dtype)
        goal = np.asarray(goal, dtype=self.dtype)

        cache = {"conv": []}
        for k in range(1, len(self.arch.conv_filters) + 1):
            h, c_conv = conv3x3_forward(h, p[f"conv{k}_w"], p[f"conv{k}_b"])
            h, c_relu = relu_forward(h)
            h, c_pool = maxpool2_forward(h)
            cache["conv"].append((c_conv, c_relu, c_pool))

        n = h.shape[0]
        cache["conv_out_shape"] = h.shape
        flat = h.reshape(n, -1)
        f, c_flat = fc_forward(flat, p["flat_w"], p["flat_b"])
        f, c_flat_relu = relu_forward(f)
        g, c_goal = fc_forward(goal, p["goal_w"], p["goal_b"])
        z = np.concatenate([f, g], axis=1)

        cache["flat"] = (c_flat, c_flat_relu)
        cache["goal"] = c_goal

        t = z
        cache["trunk"] = []
        for k in range(1, len(self.arch.trunk) + 1):
            t, c_fc = fc_forward(t, p[f"fc{k}_w"], p[f"fc{k}_b"])
            t, c_relu = relu_forward(t)
            cache["trunk"].append((c_fc, c_relu))

        out, c_head = fc_forward(t, p["head_w"], p["head_b"])
        cache["head"] = c_head
        return out, cache

    def backward(self, d_out: np.ndarray, cache):
        """Exact gradients of a scalar loss given d(loss)/d(head output)."""
        grads: dict[str, np.ndarray] = {}
        d_out = np.asarray(d_out, dtype=self.dtype)

        dt, grads["head_w"], grads["head_b"] = fc_backward(d_out, cache["head"])
        for k in range(len(self.arch.trunk), 0, -1):
            c_fc, c_relu = cache["trunk"][k - 1]
            dt = relu_backward(dt, c_relu)
            dt, grads[f"fc{k}_w"], grads[f"fc{k}_b"] = fc_backward(dt, c_fc)

        split = self.arch.flatten_fc
        df, dg = dt[:, :split], dt[:, split:]
        _, grads["goal_w"], grads["goal_b"] = fc_backward(dg, cache["goal"])
        c_flat, c_flat_relu = cache["flat"]
        df = relu_backward(df, c_flat_relu)
        dflat, grads["flat_w"], grads["flat_b"] = fc_backward(df, c_flat)

        dh = dflat.reshape(cache["conv_out_shape"])
        for k in range(len(self.arch.conv_filters), 0, -1):
            c_conv, c_relu, c_pool = cache["conv"][k - 1]
            dh = maxpool2_backward(dh, c_pool)
            dh = relu_backward(dh, c_relu)
            dh, grads[f"conv{k}_w"], grads[f"conv{k}_b"] = conv3x3_backward(dh, c_conv)

        if "log_std" in self.params:
            grads.setdefault("log_std", np.zeros_like(self.params["log_std"]))
        return grads


# -- distributions -------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def discrete_log_prob_entropy(logits: np.ndarray, actions: np.ndarray):
    """(log pi(a), entropy) per row for integer action indices."""
    logp_all = log_softmax(logits)
    logp = np.take_along_axis(logp_all, actions[:, None], axis=1)[:, 0]
    probs = np.exp(logp_all)
    entropy = -(probs * logp_all).sum(axis=1)
    return logp, entropy


def gaussian_log_prob_entropy(mean: np.ndarray, log_std: np.ndarray, actions: np.ndarray):
    """Diagonal Gaussian log-density of (pre-clip) actions and entropy."""
    std = np.exp(log_std)
    z = (actions - mean) / std
    logp = (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=1)
    entropy = np.full(mean.shape[0], float((log_std + 0.5 * (LOG_2PI + 1.0)).sum()))
    return logp, entropy


def sample_discrete(logits: np.ndarray, rng: np.random.Generator):
    """Categorical draw per row; returns (indices, log-probs)."""
    probs = softmax(logits.astype(np.float64))
    u = rng.random(probs.shape[0])
    cum = probs.cumsum(axis=1)
    idx = (u[:, None] > cum).sum(axis=1)
    idx = np.minimum(idx, probs.shape[1] - 1)
    logp = np.log(np.take_along_axis(probs, idx[:, None], axis=1)[:, 0])
    return idx.astype(np.int64), logp


def sample_gaussian(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator):
    """Gaussian draw; log-prob of the raw sample, action clipped afterwards.

    Returns (raw (N,2), clipped (N,2), logp (N,))."""
    mean64 = mean.astype(np.float64)
    raw = mean64 + np.exp(log_std.astype(np.float64)) * rng.standard_normal(mean.shape)
    logp, _ = gaussian_log_prob_entropy(mean64, log_std.astype(np.float64), raw)
    clipped = np.column_stack(
        [np.clip(raw[:, 0], 0.0, V_MAX), np.clip(raw[:, 1], -W_MAX, W_MAX)]
    )
    return raw, clipped, logp


def action_from_index(idx: int) -> Action:
    v, w = ACTION_TABLE[idx]
    return Action(v, w)


def greedy_action(head_out: np.ndarray, mode: str) -> Action:
    """Deterministic evaluation action for a single-row head output."""
    if mode == "discrete":
        return action_from_index(int(np.argmax(head_out[0])))
    v = float(np.clip(head_out[0, 0], 0.0, V_MAX))
    w = float(np.clip(head_out[0, 1], -W_MAX, W_MAX))
    return Action(v, w)


# -- checkpoints ----------------------------------------------------------------


def arch_hash(policy_arch: ArchConfig, value_arch: ArchConfig, mode: str) -> bytes:
    text = f"{mode}|policy:{policy_arch.describe()}|value:{value_arch.describe()}"
    return hashlib.sha256(text.encode()).digest()


def flatten_params(arch: ArchConfig, params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([params[name].ravel() for name, _ in arch.param_shapes()])


def unflatten_params(arch: ArchConfig, flat: np.ndarray, dtype=np.float32) -> dict[str, np.ndarray]:
    params = {}
    pos = 0
    for name, shape in arch.param_shapes():
        size = int(np.prod(shape))
        params[name] = flat[pos : pos + size].reshape(shape).astype(dtype)
        pos += size
    if pos != flat.size:
        raise ValueError(f"parameter blob size mismatch: {flat.size} != {pos}")
    return params


def save_checkpoint(path, policy: ConvNet, value: ConvNet, mode: str) -> None:
    """Binary layout: magic 'CNAV', u32 version, 32-byte architecture hash,
    u64 float count, then little-endian float32 parameters (policy params in
    documented order, then value params)."""
    blob = np.concatenate(
        [flatten_params(policy.arch, policy.params), flatten_params(value.arch, value.params)]
    ).astype("<f4")
    header = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + arch_hash(policy.arch, value.arch, mode)
        + struct.pack("<Q", blob.size)
    )
    with open(path, "wb") as fh:
        fh.write(header + blob.tobytes())


class CheckpointError(Exception):
    pass


def load_checkpoint(path, policy_arch: ArchConfig, value_arch: ArchConfig, mode: str):
    """Load and verify; raises CheckpointError on magic/version/hash/size
    mismatch.  Returns (policy ConvNet, value ConvNet)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic; not a crowdnav checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = data[8:40]
    if digest != arch_hash(policy_arch, value_arch, mode):
        raise CheckpointError("architecture hash mismatch")
    (count,) = struct.unpack_from("<Q", data, 40)
    blob = np.frombuffer(data, dtype="<f4", offset=48)
    if blob.size != count:
        raise CheckpointError(f"parameter count mismatch: {blob.size} != {count}")
    n_policy = policy_arch.param_count()
    policy = ConvNet(policy_arch, unflatten_params(policy_arch, blob[:n_policy]))
    value = ConvNet(value_arch, unflatten_params(value_arch, blob[n_policy:]))
    return policy, value


def policy_value_archs(mode: str, arch: ArchConfig | None = None) -> tuple[ArchConfig, ArchConfig]:
    """Policy/value architecture pair for a training mode; the value twin
    shares the trunk shape but never parameters."""
    base = arch or ArchConfig()
    if mode == "discrete":
        policy = replace(base, head_dim=28, with_log_std=False)
    elif mode == "continuous":
        policy = replace(base, head_dim=2, with_log_std=True)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    value = replace(base, head_dim=1, with_log_std=False)
    return policy, value
