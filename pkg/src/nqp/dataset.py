"""Exact reference dynamics (RK4) and random training/physics datasets."""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .quantum import (
    BathChannel,
    FieldChannel,
    SystemSpec,
    TimeGrid,
    ValidationError,
    make_rhs,
    vectorize,
)

DATASET_MAGIC = b"NQPD"
DATASET_VERSION = 1

DATA_STREAM = 0
PHYSICS_STREAM = 1


class IntegrationDiverged(RuntimeError):
    def __init__(self, step: int, sample: int | None = None):
        self.step = step
        self.sample = sample
        where = f" (sample {sample})" if sample is not None else ""
        super().__init__(f"non-finite state at RK4 step {step}{where}")


class SamplerError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class FieldGrid:
    """Field amplitudes on the time grid, shape (n_steps + 1, K), complex."""

    values: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def encode(self) -> np.ndarray:
        """Real-channel encoding (Re0, Im0, Re1, Im1, ...)."""
        return complex_to_pairs(self.values)


@dataclass
class Trajectory:
    """Vectorized states, shape (n_steps + 1, d^2), complex."""

    states: np.ndarray
    grid: TimeGrid

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.states.shape[1])))

    def matrices(self) -> np.ndarray:
        d = self.dim
        return self.states.reshape(-1, d, d)

    def populations(self) -> np.ndarray:
        d = self.dim
        return self.states[:, :: d + 1].real


def complex_to_pairs(z: np.ndarray) -> np.ndarray:
    z = np.ascontiguousarray(z, dtype=np.complex128)
    return z.view(np.float64).copy()


def pairs_to_complex(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[-1] % 2:
        raise ValidationError(f"odd channel count {x.shape[-1]}")
    return x.view(np.complex128).copy()


# --------------------------------------------------------------------------
# integration

def rk4_step(rhs: Callable[[float, np.ndarray], np.ndarray], rho: np.ndarray,
             t: float, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    k1 = rhs(t, rho)
    k2 = rhs(t + 0.5 * dt, rho + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, rho + 0.5 * dt * k2)
    k4 = rhs(t + dt, rho + dt * k3)
    return rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def propagate(spec: SystemSpec, baths: Sequence[BathChannel], fields: Sequence[FieldChannel],
              rho0: np.ndarray, grid: TimeGrid, t0: float = 0.0) -> Trajectory:
    """RK4 trajectory over ``grid`` starting at absolute time ``t0``.

    Field amplitudes at stage midpoints come from the analytic field forms.
    """
    rhs = make_rhs(spec, baths, fields)
    d = spec.dim
    states = np.empty((grid.n_steps + 1, d * d), dtype=complex)
    rho = np.asarray(rho0, dtype=complex)
    states[0] = vectorize(rho)
    for n in range(grid.n_steps):
        # t0 + n * dt, not an accumulated sum, so split runs hit the same times
        rho = rk4_step(rhs, rho, t0 + n * grid.dt, grid.dt)
        if not np.all(np.isfinite(rho)):
            raise IntegrationDiverged(n + 1)
        states[n + 1] = vectorize(rho)
    return Trajectory(states, grid)


# --------------------------------------------------------------------------
# sampling

def sample_gue_state(rng: np.random.Generator, d: int, min_trace: float = 0.1,
                     max_tries: int = 100) -> np.ndarray:
    """GUE matrix with its diagonal divided by the diagonal sum.

    Off-diagonal entries are left as drawn. Draws with |trace| < min_trace are
    rejected and redrawn.
    """
    for _ in range(max_tries):
        m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        a = 0.5 * (m + m.conj().T)
        tr = np.trace(a).real
        if abs(tr) < min_trace:
            continue
        idx = np.diag_indices(d)
        a[idx] = a[idx] / tr
        return a
    raise SamplerError(f"no GUE draw with |trace| >= {min_trace} in {max_tries} tries")


@dataclass(frozen=True)
class FieldSpec:
    """Sampling recipe for one field channel: operator, form and parameter range."""

    op: np.ndarray
    form: str
    low: float
    high: float
    use_real_part: bool = False

    def channel(self, value: float) -> FieldChannel:
        return FieldChannel(self.op, self.form, float(value), self.use_real_part)


def field_grid(channels: Sequence[FieldChannel], grid: TimeGrid, t0: float = 0.0) -> FieldGrid:
    t = grid.times(t0)
    values = np.empty((t.size, len(channels)), dtype=complex)
    for k, ch in enumerate(channels):
        values[:, k] = ch(t)
    return FieldGrid(values)


def sample_field(rng: np.random.Generator, specs: Sequence[FieldSpec],
                 grid: TimeGrid) -> tuple[FieldGrid, list[FieldChannel]]:
    """Draw each channel parameter uniformly in its range and embed on the grid."""
    channels = []
    for s in specs:
        if s.high < s.low:
            raise ValidationError(f"empty parameter range ({s.low}, {s.high})")
        channels.append(s.channel(rng.uniform(s.low, s.high)))
    return field_grid(channels, grid), channels


# --------------------------------------------------------------------------
# datasets

@dataclass
class DataSample:
    rho0: np.ndarray
    field: FieldGrid
    trajectory: Trajectory | None = None


@dataclass
class Dataset:
    """Stacked samples: rho0 (N, d, d), fields (N, T, K), trajectories (N, T, d^2) or None."""

    name: str
    kind: str
    seed: int
    dt: float
    rho0: np.ndarray
    fields: np.ndarray
    trajectories: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("data", "physics"):
            raise ValidationError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "data" and self.trajectories is None:
            raise ValidationError("data datasets need trajectories")

    def __len__(self):
        return self.rho0.shape[0]

    def __getitem__(self, i) -> DataSample:
        traj = None
        if self.trajectories is not None:
            traj = Trajectory(self.trajectories[i], TimeGrid(self.dt, self.n_steps))
        return DataSample(self.rho0[i], FieldGrid(self.fields[i]), traj)

    @property
    def dim(self) -> int:
        return self.rho0.shape[1]

    @property
    def channels(self) -> int:
        return self.fields.shape[2]

    @property
    def n_steps(self) -> int:
        return self.fields.shape[1] - 1

    def header(self) -> dict:
        return {
            "system": self.name,
            "d": self.dim,
            "K": self.channels,
            "n_steps": self.n_steps,
            "dt": self.dt,
            "kind": self.kind,
            "seed": self.seed,
            "n_samples": len(self),
        }


def sample_rng(seed: int, stream: int, index: int, epoch: int = 0) -> np.random.Generator:
    """Independent generator per (seed, stream, epoch, sample index)."""
    return np.random.default_rng([seed, stream, epoch, index])


def _make_sample(config, kind: str, rng: np.random.Generator, grid: TimeGrid, index: int):
    rho0 = sample_gue_state(rng, config.spec.dim)
    fg, channels = sample_field(rng, config.fields, grid)
    traj = None
    if kind == "data":
        try:
            traj = propagate(config.spec, config.baths, channels, rho0, grid).states
        except IntegrationDiverged as exc:
            raise IntegrationDiverged(exc.step, index) from None
    return rho0, fg.values, traj


def generate_dataset(config, n_samples: int, kind: str, seed: int | None = None,
                     epoch: int = 0, threads: int = 1) -> Dataset:
    """Random initial states + fields; ``kind="data"`` also integrates with RK4.

    ``config`` is an :class:`nqp.config.ExperimentConfig`. Each sample draws
    from its own generator, so the result does not depend on ``threads``.
    """
    seed = config.seed if seed is None else seed
    grid = config.grid
    stream = DATA_STREAM if kind == "data" else PHYSICS_STREAM
    d, K = config.spec.dim, len(config.fields)

    def work(i):
        return _make_sample(config, kind, sample_rng(seed, stream, i, epoch), grid, i)

    if threads > 1 and n_samples > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, range(n_samples)))
    else:
        results = [work(i) for i in range(n_samples)]

    T = grid.n_steps + 1
    rho0 = np.empty((n_samples, d, d), dtype=complex)
    fields = np.empty((n_samples, T, K), dtype=complex)
    trajs = np.empty((n_samples, T, d * d), dtype=complex) if kind == "data" else None
    for i, (r, f, tr) in enumerate(results):
        rho0[i], fields[i] = r, f
        if trajs is not None:
            trajs[i] = tr
    return Dataset(config.name, kind, seed, grid.dt, rho0, fields, trajs)


# --------------------------------------------------------------------------
# file format: magic, u32 version, u32 header length, JSON header, f64 payload (LE)

def save_dataset(ds: Dataset, path) -> int:
    header = json.dumps(ds.header(), sort_keys=True).encode()
    parts = [DATASET_MAGIC, struct.pack("<II", DATASET_VERSION, len(header)), header]
    for i in range(len(ds)):
        parts.append(complex_to_pairs(ds.rho0[i].reshape(-1)).astype("<f8").tobytes())
        parts.append(complex_to_pairs(ds.fields[i]).astype("<f8").tobytes())
        if ds.trajectories is not None:
            parts.append(complex_to_pairs(ds.trajectories[i]).astype("<f8").tobytes())
    blob = b"".join(parts)
    Path(path).write_bytes(blob)
    return len(blob)


def load_dataset(path) -> Dataset:
    blob = Path(path).read_bytes()
    if blob[:4] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise DatasetFormatError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: format version {version}, expected {DATASET_VERSION}")
    try:
        h = json.loads(blob[12:12 + hlen])
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: corrupt header") from exc
    d, K, T, n = h["d"], h["K"], h["n_steps"] + 1, h["n_samples"]
    has_traj = h["kind"] == "data"
    per = 2 * d * d + 2 * K * T + (2 * d * d * T if has_traj else 0)
    payload = blob[12 + hlen:]
    if len(payload) != 8 * per * n:
        raise DatasetFormatError(f"{path}: payload has {len(payload)} bytes, expected {8 * per * n}")
    flat = np.frombuffer(payload, dtype="<f8").reshape(n, per)
    rho0 = pairs_to_complex(flat[:, : 2 * d * d]).reshape(n, d, d)
    off = 2 * d * d
    fields = pairs_to_complex(flat[:, off: off + 2 * K * T].reshape(n, T, 2 * K))
    off += 2 * K * T
    trajs = pairs_to_complex(flat[:, off:].reshape(n, T, 2 * d * d)) if has_traj else None
    return Dataset(h["system"], h["kind"], h["seed"], h["dt"], rho0, fields, trajs)
