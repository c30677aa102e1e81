"""SDF and radiance networks over one flat parameter vector.

The SDF network maps encoded positions to ``1 + feature_dim`` outputs (the
signed distance and a feature vector) through softplus(beta=100) layers. The
radiance network maps (encoded position, encoded direction, normal, feature)
to RGB through rectifier layers and a logistic output. The sharpness ``s`` is
stored as ``log_s``.

Spatial gradients of f come in two flavors: exact, by a reverse sweep
through the SDF network recorded as ordinary tape ops (so parameter
gradients of the Eikonal term need only first-order differentiation), and by
central differences, which also serves as the independent check.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import engine as E
from .errors import ConfigError

SOFTPLUS_BETA = 100.0
CHECKPOINT_MAGIC = b"TNSV1\0"


@dataclass(frozen=True)
class ArchitectureConfig:
    pos_freqs: int = 6
    dir_freqs: int = 4
    sdf_layers: int = 4
    sdf_width: int = 64
    radiance_layers: int = 3
    radiance_width: int = 64
    feature_dim: int = 32
    init_radius: float = 0.5
    # True for scenes viewed from inside a cavity: f starts as r0 - |x|.
    init_inside: bool = False
    init_s: float = 20.0
    # short regression onto the analytic sphere SDF after the random init
    init_fit_steps: int = 300

    def __post_init__(self):
        for name in ("sdf_layers", "sdf_width", "radiance_layers", "radiance_width", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.pos_freqs < 0 or self.dir_freqs < 0:
            raise ConfigError("frequency counts must be >= 0")
        if self.init_fit_steps < 0:
            raise ConfigError("init_fit_steps must be >= 0")
        if not self.init_radius > 0 or not self.init_s > 0:
            raise ConfigError("init_radius and init_s must be positive")

    @property
    def pos_dim(self) -> int:
        return 3 + 6 * self.pos_freqs

    @property
    def dir_dim(self) -> int:
        return 3 + 6 * self.dir_freqs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)


def parameter_layout(cfg: ArchitectureConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) of every parameter block."""
    layout = []
    dims = [cfg.pos_dim] + [cfg.sdf_width] * cfg.sdf_layers + [1 + cfg.feature_dim]
    for i in range(len(dims) - 1):
        layout += [(f"sdf.W{i}", (dims[i], dims[i + 1])), (f"sdf.b{i}", (dims[i + 1],))]
    rin = cfg.pos_dim + cfg.dir_dim + 3 + cfg.feature_dim
    dims = [rin] + [cfg.radiance_width] * cfg.radiance_layers + [3]
    for i in range(len(dims) - 1):
        layout += [(f"rad.W{i}", (dims[i], dims[i + 1])), (f"rad.b{i}", (dims[i + 1],))]
    layout.append(("log_s", ()))
    return layout


def parameter_count(cfg: ArchitectureConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in parameter_layout(cfg))


# -- positional encoding -------------------------------------------------------

def positional_encode(x, L: int) -> np.ndarray:
    """[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]."""
    x = np.asarray(x)
    parts = [x]
    for k in range(L):
        a = (2.0 ** k) * np.pi
        parts += [np.sin(a * x), np.cos(a * x)]
    return np.concatenate(parts, axis=-1)


def positional_encode_jacobian(x: np.ndarray, L: int) -> np.ndarray:
    """Per-coordinate derivative of each encoding block, shape (N, 1 + 2L, 3).

    Block 0 is the identity part, then sin and cos blocks alternate; every
    encoded entry depends on exactly one input coordinate.
    """
    blocks = [np.ones_like(x)]
    for k in range(L):
        a = (2.0 ** k) * np.pi
        blocks += [a * np.cos(a * x), -a * np.sin(a * x)]
    return np.stack(blocks, axis=1)


# -- the model -----------------------------------------------------------------

class FieldModel:
    """All trainable parameters in one flat vector.

    ``params`` is owned by the model; ``blocks`` are reshaped views into it in
    declaration order.
    """

    def __init__(self, config: ArchitectureConfig, params: np.ndarray):
        n = parameter_count(config)
        params = np.ascontiguousarray(params)
        if params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {params.shape}")
        self.config = config
        self.params = params
        self.blocks = {}
        off = 0
        for name, shape in parameter_layout(config):
            size = int(np.prod(shape))
            self.blocks[name] = params[off:off + size].reshape(shape)
            off += size

    @classmethod
    def initialize(cls, config: ArchitectureConfig, seed: int = 0, dtype=np.float32) -> "FieldModel":
        model = cls(config, np.zeros(parameter_count(config), dtype=dtype))
        rng = np.random.default_rng(seed)
        model._geometric_init(rng)
        if config.init_fit_steps:
            fit_sphere(model, config.init_fit_steps, rng)
        return model

    def _geometric_init(self, rng):
        cfg, b = self.config, self.blocks
        n_sdf = cfg.sdf_layers + 1
        for i in range(n_sdf):
            W = b[f"sdf.W{i}"]
            fan_in, fan_out = W.shape
            if i < n_sdf - 1:
                W[...] = rng.normal(0.0, np.sqrt(2.0) / np.sqrt(fan_out), W.shape)
                if i == 0:
                    W[3:] = 0.0  # encoded frequencies start silent
            else:
                sign = -1.0 if cfg.init_inside else 1.0
                W[:, 0] = sign * rng.normal(np.sqrt(np.pi) / np.sqrt(fan_in), 1e-4, fan_in)
                W[:, 1:] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out - 1))
                b[f"sdf.b{i}"][0] = -sign * cfg.init_radius
        n_rad = cfg.radiance_layers + 1
        for i in range(n_rad):
            W = b[f"rad.W{i}"]
            W[...] = rng.normal(0.0, np.sqrt(2.0 / W.shape[0]), W.shape)
        b["log_s"][...] = np.log(cfg.init_s)

    @property
    def s(self) -> float:
        return float(np.exp(self.blocks["log_s"]))

    @property
    def dtype(self):
        return self.params.dtype

    def copy(self) -> "FieldModel":
        return FieldModel(self.config, self.params.copy())

    def astype(self, dtype) -> "FieldModel":
        return FieldModel(self.config, self.params.astype(dtype))

    def bind(self) -> "BoundParams":
        return BoundParams(self)


class BoundParams:
    """Parameter leaves for one recorded forward pass."""

    def __init__(self, model: FieldModel):
        self.model = model
        self.tensors = {name: E.parameter(v, name=name) for name, v in model.blocks.items()}

    def __getitem__(self, name):
        return self.tensors[name]

    def gradient(self) -> np.ndarray:
        """Flat gradient aligned with ``model.params`` (zeros where unused)."""
        grad = np.zeros_like(self.model.params)
        off = 0
        for name, shape in parameter_layout(self.model.config):
            size = int(np.prod(shape))
            g = self.tensors[name].grad
            if g is not None:
                grad[off:off + size] = np.asarray(g).reshape(-1)
            off += size
        return grad


class ConstantParams:
    """Same lookup interface as BoundParams, but nothing is recorded."""

    def __init__(self, model: FieldModel):
        self.model = model

    def __getitem__(self, name):
        return self.model.blocks[name]


def _params(model_or_bound):
    if isinstance(model_or_bound, FieldModel):
        return ConstantParams(model_or_bound)
    return model_or_bound


def sdf_network(p, x: np.ndarray, with_gradient: bool = False):
    """Forward pass of the SDF network at points x (N, 3).

    Returns (f (N,), feature (N, F), grad (N, 3) or None). With
    ``with_gradient`` the exact spatial gradient df/dx is built by a reverse
    sweep through the layers, recorded like any other value so the Eikonal
    term can be differentiated with respect to the parameters.
    """
    cfg = p.model.config
    x = np.asarray(x, dtype=p.model.dtype)
    h = positional_encode(x, cfg.pos_freqs)
    slopes = []
    for i in range(cfg.sdf_layers):
        z = E.matmul(h, p[f"sdf.W{i}"]) + p[f"sdf.b{i}"]
        if with_gradient:
            h, slope = E.softplus(z, SOFTPLUS_BETA, with_slope=True)
            slopes.append(slope)
        else:
            h = E.softplus(z, SOFTPLUS_BETA)
    Wo, bo = p[f"sdf.W{cfg.sdf_layers}"], p[f"sdf.b{cfg.sdf_layers}"]
    out = E.matmul(h, Wo) + bo
    f = out[:, 0]
    feature = out[:, 1:]
    if not with_gradient:
        return f, feature, None
    g = slopes[-1] * Wo[:, 0]
    for i in range(cfg.sdf_layers - 1, 0, -1):
        g = E.matmul(g, E.transpose(p[f"sdf.W{i}"])) * slopes[i - 1]
    g = E.matmul(g, E.transpose(p["sdf.W0"]))
    jac = positional_encode_jacobian(x, cfg.pos_freqs)
    g = E.reshape(g, (x.shape[0], jac.shape[1], 3)) * jac
    return f, feature, E.tsum(g, axis=1)


def radiance_network(p, x, v, normal, feature):
    cfg = p.model.config
    dt = p.model.dtype
    enc_x = positional_encode(np.asarray(x, dtype=dt), cfg.pos_freqs)
    enc_v = positional_encode(np.asarray(v, dtype=dt), cfg.dir_freqs)
    h = E.concat([enc_x, enc_v, normal, feature], axis=-1)
    for i in range(cfg.radiance_layers):
        h = E.relu(E.matmul(h, p[f"rad.W{i}"]) + p[f"rad.b{i}"])
    n = cfg.radiance_layers
    return E.sigmoid(E.matmul(h, p[f"rad.W{n}"]) + p[f"rad.b{n}"])


def log_s(p):
    return p["log_s"]


def fit_sphere(model: FieldModel, steps: int, rng, batch: int = 1024, lr: float = 2e-3) -> float:
    """Regress f and its gradient onto the sphere SDF +-(|x| - r0); return the final mean |error|.

    Only SDF-network blocks move. The random geometric init alone is too noisy
    at small widths to start reliably near the sphere.
    """
    from .optim import OptimizerState, adam_step

    cfg = model.config
    sign = -1.0 if cfg.init_inside else 1.0
    state = OptimizerState.zeros_like(model.params)
    mask = np.zeros_like(model.params)
    off = 0
    for name, shape in parameter_layout(cfg):
        size = int(np.prod(shape))
        if name.startswith("sdf."):
            mask[off:off + size] = 1.0
        off += size
    err = np.inf
    for _ in range(steps):
        # half near the target surface, a quarter near the origin kink, the rest uniform
        x = rng.uniform(-1.0, 1.0, size=(batch, 3))
        h, q = batch // 2, batch // 4
        d = rng.normal(size=(h, 3))
        d *= (cfg.init_radius + 0.05 * rng.normal(size=(h, 1))) / np.linalg.norm(d, axis=1, keepdims=True)
        x[:h] = d
        x[h:h + q] *= 0.15
        r = np.linalg.norm(x, axis=1)
        target = sign * (r - cfg.init_radius)
        normal = sign * x / np.maximum(r, 1e-9)[:, None]
        b = model.bind()
        f, _, g = sdf_network(b, x, with_gradient=True)
        dt = model.dtype
        loss = E.mean(E.square(f - target.astype(dt))) + 0.1 * E.mean(E.square(g - normal.astype(dt)))
        grad = backward(b, loss) * mask
        adam_step(model.params, grad, state, lr)
        err = float(np.mean(np.abs(f.value - target)))
    return err


# -- pure numpy evaluation -------------------------------------------------

def sdf_eval(model: FieldModel, x):
    """(f, feature) at one point (3,) or a batch (N, 3)."""
    x = np.asarray(x)
    single = x.ndim == 1
    f, feat, _ = sdf_network(ConstantParams(model), np.atleast_2d(x))
    f, feat = f.value, feat.value
    return (f[0], feat[0]) if single else (f, feat)


def sdf_spatial_gradient(model_or_fn, x, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of f at x (3,) or (N, 3).

    ``model_or_fn`` is a FieldModel or any callable mapping (N, 3) to (N,).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(model_or_fn, FieldModel):
        def fn(pts):
            return sdf_eval(model_or_fn, pts)[0]
    else:
        fn = model_or_fn
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    g = np.empty_like(x)
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        g[:, k] = (np.asarray(fn(x + e), dtype=np.float64) - np.asarray(fn(x - e), dtype=np.float64)) / (2 * eps)
    return g[0] if single else g


def sdf_gradient(model: FieldModel, x) -> np.ndarray:
    """Exact spatial gradient of f (reverse sweep through the network)."""
    x = np.asarray(x)
    single = x.ndim == 1
    _, _, g = sdf_network(ConstantParams(model), np.atleast_2d(x), with_gradient=True)
    return g.value[0] if single else g.value


def radiance_eval(model: FieldModel, x, v, normal, feature) -> np.ndarray:
    x, v, normal, feature = (np.atleast_2d(np.asarray(a)) for a in (x, v, normal, feature))
    if np.any(np.abs(np.linalg.norm(v, axis=-1) - 1.0) > 1e-6):
        raise ValueError("view directions must be unit vectors")
    dt = model.dtype
    rgb = radiance_network(ConstantParams(model), x, v, normal.astype(dt), feature.astype(dt)).value
    return rgb[0] if rgb.shape[0] == 1 else rgb


def backward(bound: BoundParams, loss: E.Tensor) -> np.ndarray:
    """Back-propagate a scalar loss recorded against ``bound``; return the flat gradient."""
    E.backward(loss)
    grad = bound.gradient()
    if not np.all(np.isfinite(grad)):
        bad = [n for n, t in bound.tensors.items() if t.grad is not None and not np.all(np.isfinite(t.grad))]
        raise E.NumericalError(f"non-finite gradient in {bad}")
    return grad


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, model: FieldModel, iteration: int) -> None:
    meta = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(model.params.astype("<f4").tobytes())
        fh.write(struct.pack("<Q", int(iteration)))


def load_checkpoint(path) -> tuple[FieldModel, int]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    config = ArchitectureConfig.from_dict(json.loads(data[off:off + n].decode("utf-8")))
    off += n
    count = parameter_count(config)
    params = np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float32)
    off += 4 * count
    if len(data) != off + 8:
        raise ValueError(f"{path}: truncated or oversized checkpoint")
    (iteration,) = struct.unpack_from("<Q", data, off)
    return FieldModel(config, params), iteration
