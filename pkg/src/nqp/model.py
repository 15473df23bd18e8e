"""Driven neural quantum propagator: (rho0, field grid) -> trajectory.

Layout of a forward pass for a batch of B samples on T = n_steps + 1 times:

    physical input (B, T, 2 d^2 + 1)  -- vec(rho0) broadcast + t / t_max
      -> P_in (two affine maps, GeLU between)      (B, T, 2 C)
      -> n_layers Fourier layers                   (B, T, 2 C)
      -> P_out (two affine maps, GeLU between)     (B, T, 2 d^2)

C = ``latent_channels`` complex channels, stored as 2C real pairs.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import engine as E
from .engine import Tensor

CHECKPOINT_MAGIC = b"NQPM"
CHECKPOINT_VERSION = 1


class ModelDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int
    n_steps: int
    k_channels: int
    dt: float = 0.05
    latent_channels: int = 128
    proj_hidden: int = 256
    n_layers: int = 4
    modes: int | None = None  # None keeps every Fourier mode

    def __post_init__(self):
        if self.modes is not None and not 1 <= self.modes <= self.n_steps + 1:
            raise ValueError(f"modes={self.modes} outside [1, {self.n_steps + 1}]")

    @property
    def n_times(self) -> int:
        return self.n_steps + 1

    @property
    def n_modes(self) -> int:
        return self.n_times if self.modes is None else self.modes

    @property
    def phys_channels(self) -> int:
        return 2 * self.d * self.d + 1

    def mode_index(self) -> np.ndarray:
        """Indices of the retained modes: the lowest |frequency| ones."""
        freq = np.abs(np.fft.fftfreq(self.n_times))
        return np.sort(np.argsort(freq, kind="stable")[: self.n_modes])


def _mlp_shapes(prefix: str, n_in: int, hidden: int, n_out: int):
    return [(f"{prefix}.w0", (n_in, hidden)), (f"{prefix}.b0", (hidden,)),
            (f"{prefix}.w1", (hidden, n_out)), (f"{prefix}.b1", (n_out,))]


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes, in checkpoint order."""
    C, H = config.latent_channels, config.proj_hidden
    shapes = _mlp_shapes("p_in", config.phys_channels, H, 2 * C)
    for layer in range(config.n_layers):
        shapes.append((f"layer{layer}.w", (config.n_modes, C, 2 * C)))
        shapes += _mlp_shapes(f"layer{layer}.p", 2 * config.k_channels, H, 2 * C)
    shapes += _mlp_shapes("p_out", 2 * C, H, 2 * config.d * config.d)
    return shapes


def count_params(config: ModelConfig) -> int:
    """Closed form of the parameter count."""
    C, H, L = config.latent_channels, config.proj_hidden, config.n_layers
    d2, K, M = config.d ** 2, config.k_channels, config.n_modes
    mlp = lambda n_in, n_out: n_in * H + H + H * n_out + n_out  # noqa: E731
    return (mlp(2 * d2 + 1, 2 * C) + L * (2 * M * C * C + mlp(2 * K, 2 * C))
            + mlp(2 * C, 2 * d2))


class ModelParams:
    """Ordered parameter tensors plus the config they belong to."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def size(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.tensors.values()])

    def load_flat(self, flat: np.ndarray) -> None:
        off = 0
        for t in self.tensors.values():
            n = t.data.size
            t.data = flat[off: off + n].reshape(t.data.shape).astype(np.float64)
            off += n

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(v.data.copy(), requires_grad=True)
                                         for k, v in self.tensors.items()})

    def zero_field_maps(self) -> None:
        """Zero every P_l: the model no longer sees the field."""
        for name, t in self.tensors.items():
            if ".p." in name:
                t.data = np.zeros_like(t.data)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Affine maps ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); spectral weights ~ U(-1, 1) / C."""
    rng = np.random.default_rng(seed)
    tensors = {}
    fan_in = None
    for name, shape in param_shapes(config):
        if name.endswith(".w"):
            data = rng.uniform(-1.0, 1.0, shape) / config.latent_channels
        else:
            if ".w" in name:
                fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(config, tensors)


# --------------------------------------------------------------------------
# forward

def _mlp(params: ModelParams, prefix: str, x, act) -> Tensor:
    h = act(E.linear(x, params[f"{prefix}.w0"], params[f"{prefix}.b0"]))
    return E.linear(h, params[f"{prefix}.w1"], params[f"{prefix}.b1"])


def _batch_rho(rho0: np.ndarray) -> np.ndarray:
    rho0 = np.asarray(rho0, dtype=complex)
    return rho0[None] if rho0.ndim == 2 else rho0


def _batch_field(field: np.ndarray) -> np.ndarray:
    field = np.asarray(field, dtype=complex)
    return field[None] if field.ndim == 2 else field


def physical_input(rho0: np.ndarray, config: ModelConfig) -> np.ndarray:
    """(B, T, 2 d^2 + 1): paired vec(rho0) on every row, then n / n_steps."""
    rho0 = _batch_rho(rho0)
    if rho0.shape[1:] != (config.d, config.d):
        raise ValueError(f"rho0 shape {rho0.shape[1:]} does not match d={config.d}")
    B, T = rho0.shape[0], config.n_times
    vec = E.to_pairs(rho0.reshape(B, -1)).copy()
    out = np.empty((B, T, config.phys_channels))
    out[:, :, :-1] = vec[:, None, :]
    out[:, :, -1] = np.arange(T) / config.n_steps
    return out


def lift_input(params: ModelParams, rho0: np.ndarray, act=E.gelu) -> Tensor:
    return _mlp(params, "p_in", Tensor(physical_input(rho0, params.config)), act)


def field_modes(field: np.ndarray, config: ModelConfig) -> np.ndarray:
    """DFT of the field grid along time, paired: (B, T, 2K)."""
    field = _batch_field(field)
    if field.shape[1:] != (config.n_times, config.k_channels):
        raise ValueError(f"field grid shape {field.shape[1:]} does not match "
                         f"({config.n_times}, {config.k_channels})")
    return E.to_pairs(E.dft_complex(field)).copy()


def fourier_layer(params: ModelParams, layer: int, v: Tensor, field_hat: np.ndarray,
                  act=E.gelu) -> Tensor:
    """act(v + IDFT[W * (DFT[v] + P(field_hat))]) with truncated modes zeroed."""
    config = params.config
    spectral = E.add(E.dft_time(v), _mlp(params, f"layer{layer}.p", Tensor(field_hat), act))
    w = params[f"layer{layer}.w"]
    if config.n_modes < config.n_times:
        idx = config.mode_index()
        mixed = E.put_time(E.complex_pointwise_mul(E.take_time(spectral, idx), w), idx,
                           config.n_times)
    else:
        mixed = E.complex_pointwise_mul(spectral, w)
    return act(E.add(v, E.idft_time(mixed)))


def forward(params: ModelParams, rho0: np.ndarray, field: np.ndarray, act=E.gelu) -> Tensor:
    """Predicted trajectories as a paired tensor (B, T, 2 d^2).

    ``act`` replaces every GeLU; tests pass ``engine.identity`` to check the
    plumbing is affine in rho0.
    """
    v = lift_input(params, rho0, act)
    field_hat = field_modes(field, params.config)
    for layer in range(params.config.n_layers):
        v = fourier_layer(params, layer, v, field_hat, act)
    out = _mlp(params, "p_out", v, act)
    if not np.all(np.isfinite(out.data)):
        raise ModelDiverged("non-finite model output")
    return out


def predict(params: ModelParams, rho0: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Complex vectorized trajectories (B, T, d^2), or (T, d^2) for one sample."""
    single = np.asarray(rho0).ndim == 2
    z = E.to_complex(forward(params, rho0, field).data).copy()
    return z[0] if single else z


# --------------------------------------------------------------------------
# rollout

Propagator = Callable[[np.ndarray, float], np.ndarray]


def rollout(propagator: Propagator, rho0: np.ndarray, window_steps: int, horizon_steps: int,
            project: bool = False) -> np.ndarray:
    """Chain windows of ``window_steps`` to reach ``horizon_steps``.

    ``propagator(rho_start, window_index)`` returns the (window_steps + 1, d^2)
    trajectory of one window; the last state seeds the next window. With
    ``project`` the seed is hermitized and trace-renormalized first.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    d = rho0.shape[0]
    chunks = []
    rho = rho0
    n_windows = -(-horizon_steps // window_steps)
    for w in range(n_windows):
        traj = propagator(rho, w)
        chunks.append(traj if w == 0 else traj[1:])
        rho = traj[-1].reshape(d, d)
        if project:
            rho = 0.5 * (rho + rho.conj().T)
            rho = rho / np.trace(rho).real
    return np.concatenate(chunks)[: horizon_steps + 1]


def model_propagator(params: ModelParams, channels) -> Propagator:
    """Window propagator from a trained model, field re-evaluated at absolute times."""
    from .dataset import field_grid
    from .quantum import TimeGrid

    config = params.config
    grid = TimeGrid(config.dt, config.n_steps)

    def prop(rho, window):
        fg = field_grid(channels, grid, t0=window * grid.t_max)
        return predict(params, rho, fg.values)

    return prop


def rk4_propagator(spec, baths, channels, grid) -> Propagator:
    """The exact solver in the same window interface, for rollout checks."""
    from .dataset import propagate

    def prop(rho, window):
        return propagate(spec, baths, channels, rho, grid, t0=window * grid.t_max).states

    return prop


# --------------------------------------------------------------------------
# checkpoints: magic, u32 version, u32 header length, JSON header, LE f64 params

def save_checkpoint(params: ModelParams, path, metadata: dict | None = None) -> None:
    header = {
        "config": asdict(params.config),
        "params": [[name, list(shape)] for name, shape in param_shapes(params.config)],
        "metadata": metadata or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join([CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)),
                     hbytes, params.flat().astype("<f8").tobytes()])
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version} is incompatible "
                              f"with this reader (version {CHECKPOINT_VERSION})")
    try:
        header = json.loads(blob[12:12 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    config = ModelConfig(**header["config"])
    expected = [[n, list(s)] for n, s in param_shapes(config)]
    if header["params"] != expected:
        raise CheckpointError(f"{path}: parameter layout does not match its config")
    payload = blob[12 + hlen:]
    if len(payload) != 8 * count_params(config):
        raise CheckpointError(f"{path}: expected {8 * count_params(config)} parameter bytes, "
                              f"found {len(payload)}")
    params = init_params(config)
    params.load_flat(np.frombuffer(payload, dtype="<f8"))
    return params, header["metadata"]
