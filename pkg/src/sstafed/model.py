"""The SSTA network: Conv2D -> SSA -> FC per frame, then Conv1D -> LSTM -> softmax head.

Per frame, a same-padded ReLU convolution produces a (P positions x channels) map.
Each of ``ssa_stages`` stages applies spatial self-attention followed by a linear
FC layer; intermediate FC layers act position-wise (channels -> channels) so the
next attention stage still sees a spatial map, and the last one flattens the map
into an ``fc_dim`` feature vector. The per-frame vectors of a sequence form the
features table, which a same-padded ReLU Conv1D filters along time before the
recurrent cell:

    a_k = sigmoid(Phi_AS x_k + Phi_Ah h_k)
    b_k = sigmoid(Phi_BS x_k + Phi_Bh h_k)
    c_k = tanh(Phi_CS x_k + Phi_Ch h_k)
    d_k = d_{k-1} + a_k * c_k
    h_{k+1} = b_k * tanh(d_k)

There is no forget gate and no gate bias. The head is softmax(W h + b).

Everything is batched: ``x`` has shape (B, K, H, W) for B sequences of K frames.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import DimensionError, InputError, NumericError, ParameterError, StateError
from .numerics import make_rng, softmax

LOG_FLOOR = 1e-12
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SstaConfig:
    frame_size: tuple[int, int] = (16, 16)
    conv_channels: int = 4
    kernel_size: int = 3
    attention_dim: int = 8
    fc_dim: int = 16
    ssa_stages: int = 2
    sequence_length: int = 5
    conv1d_channels: int = 8
    conv1d_kernel: int = 3
    lstm_hidden: int = 16
    classes: int = 2
    init_gain: float = 2.449489742783178  # sqrt(6): He-uniform bound

    def __post_init__(self):
        object.__setattr__(self, "frame_size", tuple(int(v) for v in self.frame_size))
        if len(self.frame_size) != 2:
            raise ParameterError(f"frame_size must be (H, W), got {self.frame_size}")
        if not self.init_gain > 0:
            raise ParameterError(f"init_gain must be positive, got {self.init_gain}")
        for f in fields(self):
            if f.name == "init_gain":
                continue
            v = getattr(self, f.name)
            vals = v if isinstance(v, tuple) else (v,)
            if any(int(x) != x or x < 1 for x in vals):
                raise ParameterError(f"{f.name} must be positive integer(s), got {v}")
        if self.kernel_size % 2 == 0 or self.conv1d_kernel % 2 == 0:
            raise ParameterError("kernel sizes must be odd")
        if self.classes < 2:
            raise ParameterError("at least two classes are required")

    @property
    def positions(self) -> int:
        return self.frame_size[0] * self.frame_size[1]

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        """Canonical (name, shape) order of every learnable block."""
        c, a = self.conv_channels, self.attention_dim
        out = [("conv.w", (c, 1, self.kernel_size, self.kernel_size)), ("conv.b", (c,))]
        for s in range(1, self.ssa_stages + 1):
            out += [
                (f"ssa{s}.omega_f", (a, c)),
                (f"ssa{s}.omega_g", (a, c)),
                (f"ssa{s}.omega_h", (c, c)),
                (f"ssa{s}.omega_v", (c, c)),
            ]
            if s < self.ssa_stages:
                out += [(f"fc{s}.w", (c, c)), (f"fc{s}.b", (c,))]
            else:
                out += [(f"fc{s}.w", (self.fc_dim, self.positions * c)), (f"fc{s}.b", (self.fc_dim,))]
        h, c1 = self.lstm_hidden, self.conv1d_channels
        out += [("conv1d.w", (c1, self.fc_dim, self.conv1d_kernel)), ("conv1d.b", (c1,))]
        for gate in "abc":
            out += [(f"lstm.phi_{gate}s", (h, c1)), (f"lstm.phi_{gate}h", (h, h))]
        out += [("head.w", (self.classes, h)), ("head.b", (self.classes,))]
        return out

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frame_size"] = list(self.frame_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SstaConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ParameterError(f"unknown model option(s): {sorted(unknown)}")
        return cls(**d)


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.endswith(".b"):
        return 0
    if name in ("conv.w", "conv1d.w"):
        return int(np.prod(shape[1:]))
    return shape[1]


class SstaParams:
    """All weights of one network, stored as a single flat float64 vector.

    ``blocks`` holds reshaped views into ``vector`` in canonical layout order.
    Treat instances as immutable; :func:`sgd_step` returns a new one.
    """

    def __init__(self, config: SstaConfig, vector):
        v = np.array(vector, dtype=np.float64)
        if v.shape != (config.param_count(),):
            raise DimensionError(f"expected {config.param_count()} weights, got shape {v.shape}")
        self.config = config
        self.vector = v
        self.blocks = {}
        off = 0
        for name, shape in config.layout():
            n = int(np.prod(shape))
            self.blocks[name] = v[off:off + n].reshape(shape)
            off += n

    @classmethod
    def init(cls, config: SstaConfig, rng: np.random.Generator) -> "SstaParams":
        """Uniform(-s, s), s = init_gain * sqrt(1/fan_in) per weight block; biases start at zero."""
        parts = []
        for name, shape in config.layout():
            fan = _fan_in(name, shape)
            if fan == 0:
                parts.append(np.zeros(int(np.prod(shape))))
            else:
                s = config.init_gain * np.sqrt(1.0 / fan)
                parts.append(rng.uniform(-s, s, size=int(np.prod(shape))))
        return cls(config, np.concatenate(parts))

    def flatten(self) -> np.ndarray:
        return self.vector.copy()

    @classmethod
    def unflatten(cls, config: SstaConfig, vector) -> "SstaParams":
        return cls(config, vector)

    def __getitem__(self, name):
        return self.blocks[name]

    def slices(self) -> dict[str, slice]:
        out, off = {}, 0
        for name, shape in self.config.layout():
            n = int(np.prod(shape))
            out[name] = slice(off, off + n)
            off += n
        return out


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray  # (K, H, W)
    label: np.ndarray  # one-hot over classes

    def __post_init__(self):
        lab = np.asarray(self.label, dtype=np.float64)
        if lab.ndim != 1 or np.count_nonzero(lab == 1.0) != 1 or np.count_nonzero(lab) != 1:
            raise InputError(f"label must be one-hot, got {self.label}")
        fr = np.asarray(self.frames, dtype=np.float64)
        if fr.ndim != 3:
            raise InputError(f"frames must be (K, H, W), got shape {fr.shape}")
        object.__setattr__(self, "frames", fr)
        object.__setattr__(self, "label", lab)

    @property
    def class_index(self) -> int:
        return int(np.argmax(self.label))


def one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def stack_sequences(seqs) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.frames for s in seqs]), np.stack([s.label for s in seqs])


# -- layers ------------------------------------------------------------------

def conv2d_forward(x, bank, bias=None, activation: str = "relu"):
    """Same-padded stride-1 convolution, x: (N, Ci, H, W), bank: (Co, Ci, k, k)."""
    x = np.asarray(x, dtype=np.float64)
    bank = np.asarray(bank, dtype=np.float64)
    if x.ndim != 4 or bank.ndim != 4 or x.shape[1] != bank.shape[1]:
        raise DimensionError(f"input {x.shape} incompatible with filter bank {bank.shape}")
    z = kernels.conv2d_same(x, bank)
    if bias is not None:
        z = z + np.asarray(bias)[None, :, None, None]
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "identity":
        return z
    raise ParameterError(f"unknown activation {activation!r}")


def ssa_forward(z, omega_f, omega_g, omega_h, omega_v):
    """Spatial self-attention on z: (N, P, C). Returns (output (N, P, C), gamma (N, P, P))."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3 or z.shape[2] != omega_f.shape[1]:
        raise DimensionError(f"feature map {z.shape} incompatible with projections {omega_f.shape}")
    *_, gamma, _, out = kernels.ssa_forward(z, omega_f, omega_g, omega_h, omega_v)
    return out, gamma


def build_features_table(per_frame, length: int) -> np.ndarray:
    rows = [np.asarray(v, dtype=np.float64) for v in per_frame]
    if len(rows) != length:
        raise InputError(f"features table needs {length} frame vectors, got {len(rows)}")
    if len({r.shape for r in rows}) != 1 or rows[0].ndim != 1:
        raise InputError("frame vectors must be 1-D and equally long")
    return np.stack(rows)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(xs, phi: dict):
    """Run the cell over xs: (B, K, D) from zero states. Returns (h_final, cache)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 3 or xs.shape[1] < 1:
        raise DimensionError(f"LSTM input must be (B, K>=1, D), got {xs.shape}")
    B, K, _ = xs.shape
    hid = phi["as"].shape[0]
    h = np.zeros((B, hid))
    d = np.zeros((B, hid))
    steps = []
    for k in range(K):
        x = xs[:, k]
        a = _sigmoid(x @ phi["as"].T + h @ phi["ah"].T)
        b = _sigmoid(x @ phi["bs"].T + h @ phi["bh"].T)
        c = np.tanh(x @ phi["cs"].T + h @ phi["ch"].T)
        d = d + a * c
        td = np.tanh(d)
        steps.append((h, a, b, c, d, td))
        h = b * td
    return h, steps


def _phi(p: SstaParams) -> dict:
    return {k: p[f"lstm.phi_{k}"] for k in ("as", "ah", "bs", "bh", "cs", "ch")}


# -- network -----------------------------------------------------------------

@dataclass
class SstaActivations:
    """Forward cache for one batch; consumed by :func:`backward`."""

    weights: np.ndarray
    x: np.ndarray
    conv_pre: np.ndarray
    stages: list = field(default_factory=list)
    table: Optional[np.ndarray] = None
    conv1d_pre: Optional[np.ndarray] = None
    lstm_in: Optional[np.ndarray] = None
    lstm_steps: list = field(default_factory=list)
    h_final: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None

    @property
    def gammas(self) -> list[np.ndarray]:
        return [st["gamma"] for st in self.stages]


def _check_input(x, cfg: SstaConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    want = (cfg.sequence_length,) + cfg.frame_size
    if x.ndim != 4 or x.shape[1:] != want:
        raise DimensionError(f"expected sequences of shape (B, {want}), got {x.shape}")
    return x


def _conv1d_as_2d(table, w):
    # (B, K, D) with kernel (C1, D, k) -> 2-D conv over a (K x 1) image
    return kernels.conv2d_same(table.transpose(0, 2, 1)[..., None], w[..., None])[..., 0].transpose(0, 2, 1)


def forward(params: SstaParams, x) -> tuple[np.ndarray, SstaActivations]:
    """Class probabilities (B, C) for sequences x (B, K, H, W), plus the activation cache."""
    cfg = params.config
    x = _check_input(x, cfg)
    B, K, H, W = x.shape
    N, P, C = B * K, cfg.positions, cfg.conv_channels
    imgs = x.reshape(N, 1, H, W)
    pre = kernels.conv2d_same(imgs, params["conv.w"]) + params["conv.b"][None, :, None, None]
    acts = SstaActivations(weights=params.vector.copy(), x=x, conv_pre=pre)
    z = np.maximum(pre, 0.0).reshape(N, C, P).transpose(0, 2, 1)
    for s in range(1, cfg.ssa_stages + 1):
        omegas = [params[f"ssa{s}.omega_{k}"] for k in "fghv"]
        f, g, hz, gamma, mixed, att = kernels.ssa_forward(z, *omegas)
        st = dict(z=z, f=f, g=g, hz=hz, gamma=gamma, mixed=mixed, att=att)
        if s < cfg.ssa_stages:
            z = att @ params[f"fc{s}.w"].T + params[f"fc{s}.b"]
        else:
            z = att.reshape(N, P * C) @ params[f"fc{s}.w"].T + params[f"fc{s}.b"]
        st["out"] = z
        acts.stages.append(st)
    table = z.reshape(B, K, cfg.fc_dim)
    c1pre = _conv1d_as_2d(table, params["conv1d.w"]) + params["conv1d.b"]
    u = np.maximum(c1pre, 0.0)
    h, steps = lstm_forward(u, _phi(params))
    logits = h @ params["head.w"].T + params["head.b"]
    probs = softmax(logits, axis=-1)
    acts.table, acts.conv1d_pre, acts.lstm_in = table, c1pre, u
    acts.lstm_steps, acts.h_final, acts.probs = steps, h, probs
    return probs, acts


def predict(params: SstaParams, x, batch_size: int = 256) -> np.ndarray:
    """Class probabilities, evaluated in chunks to bound memory."""
    x = _check_input(x, params.config)
    out = [forward(params, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.config.classes))


def loss(probs, labels) -> float:
    """Summed categorical cross-entropy with log clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.ndim == 1:
        probs, labels = probs[None], labels[None] if labels.ndim == 1 else labels
    if probs.shape != labels.shape:
        raise DimensionError(f"predictions {probs.shape} vs labels {labels.shape}")
    return float(-np.sum(labels * np.log(np.maximum(probs, LOG_FLOOR))))


def backward(params: SstaParams, acts: SstaActivations, labels) -> np.ndarray:
    """Gradient of :func:`loss` w.r.t. the flat weight vector, in canonical order."""
    if acts.probs is None or not np.array_equal(acts.weights, params.vector):
        raise StateError("activation cache was not produced by these parameters")
    cfg = params.config
    y = np.asarray(labels, dtype=np.float64)
    probs = acts.probs
    if y.shape != probs.shape:
        raise StateError(f"labels {y.shape} do not match cached batch {probs.shape}")
    B, K, H, W = acts.x.shape
    N, P, C = B * K, cfg.positions, cfg.conv_channels
    grads = {}

    # clamped log: entries under the floor carry no gradient
    live = probs > LOG_FLOOR
    dp = np.where(live, -y / np.where(live, probs, 1.0), 0.0)
    dlogits = probs * (dp - np.sum(dp * probs, axis=1, keepdims=True))
    grads["head.w"] = dlogits.T @ acts.h_final
    grads["head.b"] = dlogits.sum(axis=0)
    dh = dlogits @ params["head.w"]

    phi = _phi(params)
    for k in ("as", "ah", "bs", "bh", "cs", "ch"):
        grads[f"lstm.phi_{k}"] = np.zeros_like(phi[k])
    u = acts.lstm_in
    du = np.zeros_like(u)
    dd = np.zeros_like(dh)
    for k in range(K - 1, -1, -1):
        hprev, a, b, c, d, td = acts.lstm_steps[k]
        db = dh * td
        dd = dd + dh * b * (1.0 - td * td)
        da = dd * c
        dc = dd * a
        dza = da * a * (1.0 - a)
        dzb = db * b * (1.0 - b)
        dzc = dc * (1.0 - c * c)
        x = u[:, k]
        dh = np.zeros_like(dh)
        for gate, dz in (("a", dza), ("b", dzb), ("c", dzc)):
            grads[f"lstm.phi_{gate}s"] += dz.T @ x
            grads[f"lstm.phi_{gate}h"] += dz.T @ hprev
            du[:, k] += dz @ phi[f"{gate}s"]
            dh += dz @ phi[f"{gate}h"]

    dc1 = du * (acts.conv1d_pre > 0)
    grads["conv1d.b"] = dc1.sum(axis=(0, 1))
    k1 = cfg.conv1d_kernel
    tbl = acts.table.transpose(0, 2, 1)[..., None]
    dc1_img = np.ascontiguousarray(dc1.transpose(0, 2, 1)[..., None])
    grads["conv1d.w"] = kernels.conv2d_same_grad_weight(tbl, dc1_img, k1, 1)[..., 0]
    dtable = kernels.conv2d_same_grad_input(dc1_img, params["conv1d.w"][..., None])[..., 0].transpose(0, 2, 1)

    dz = dtable.reshape(N, cfg.fc_dim)
    for s in range(cfg.ssa_stages, 0, -1):
        st = acts.stages[s - 1]
        wfc = params[f"fc{s}.w"]
        if s == cfg.ssa_stages:
            flat = st["att"].reshape(N, P * C)
            grads[f"fc{s}.w"] = dz.T @ flat
            grads[f"fc{s}.b"] = dz.sum(axis=0)
            datt = (dz @ wfc).reshape(N, P, C)
        else:
            grads[f"fc{s}.w"] = np.einsum("npo,npi->oi", dz, st["att"])
            grads[f"fc{s}.b"] = dz.sum(axis=(0, 1))
            datt = dz @ wfc
        omegas = [params[f"ssa{s}.omega_{k}"] for k in "fghv"]
        dof, dog, doh, dov, dz = kernels.ssa_backward(
            datt, st["z"], st["f"], st["g"], st["hz"], st["gamma"], st["mixed"], *omegas
        )
        grads[f"ssa{s}.omega_f"], grads[f"ssa{s}.omega_g"] = dof, dog
        grads[f"ssa{s}.omega_h"], grads[f"ssa{s}.omega_v"] = doh, dov

    dpre = dz.transpose(0, 2, 1).reshape(N, C, H, W) * (acts.conv_pre > 0)
    grads["conv.b"] = dpre.sum(axis=(0, 2, 3))
    k = cfg.kernel_size
    grads["conv.w"] = kernels.conv2d_same_grad_weight(acts.x.reshape(N, 1, H, W), dpre, k, k)

    return np.concatenate([grads[name].reshape(-1) for name, _ in cfg.layout()])


def loss_and_grad(params: SstaParams, x, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """(summed loss, flat gradient, probabilities) for one batch."""
    probs, acts = forward(params, x)
    return loss(probs, labels), backward(params, acts, labels), probs


def sgd_step(params: SstaParams, grad, lr: float) -> SstaParams:
    if not lr > 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.vector.shape:
        raise DimensionError(f"gradient shape {grad.shape} vs weights {params.vector.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    return SstaParams(params.config, params.vector - lr * grad)


def init_params(config: SstaConfig, seed: int) -> SstaParams:
    return SstaParams.init(config, make_rng(seed, "model-init"))


# -- checkpoints ---------------------------------------------------------------

def _payload_digest(config: dict, weights: list[str]) -> str:
    body = json.dumps({"config": config, "weights": weights}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def save_checkpoint(path, params: SstaParams) -> None:
    """JSON checkpoint: format version, config, weights as exact float reprs, sha256."""
    cfg = params.config.to_dict()
    weights = [repr(float(v)) for v in params.vector]
    doc = {
        "format": "sstafed-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "weights": weights,
        "sha256": _payload_digest(cfg, weights),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> SstaParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "sstafed-checkpoint" or doc.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"{path}: not a version-{CHECKPOINT_VERSION} sstafed checkpoint")
    if _payload_digest(doc["config"], doc["weights"]) != doc["sha256"]:
        raise InputError(f"{path}: checksum mismatch")
    cfg = SstaConfig.from_dict(doc["config"])
    return SstaParams(cfg, [float(v) for v in doc["weights"]])
