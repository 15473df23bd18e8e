"""Experiment configuration, JSON round-tripping and the two benchmark presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import FieldSpec
from .model import ModelConfig
from .quantum import BathChannel, SystemSpec, TimeGrid, ValidationError, ketbra


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    alpha_schedule: tuple[float, float] | None = None  # linear (start, end) over epochs
    lr: float = 1e-4
    lr_final: float | None = None  # cosine-anneal lr to this value over the run
    epochs: int = 2000
    batch_size: int = 32
    n_data: int = 200
    n_phys: int = 32
    seed: int = 0
    squared_norm: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        for a in (self.alpha,) + tuple(self.alpha_schedule or ()):
            if not 0.0 <= a <= 1.0:
                raise ValidationError(f"alpha={a} outside [0, 1]")

    def alpha_at(self, epoch: int) -> float:
        if self.alpha_schedule is None:
            return self.alpha
        start, end = self.alpha_schedule
        frac = epoch / max(self.epochs - 1, 1)
        return start + (end - start) * frac

    def lr_at(self, epoch: int) -> float:
        if self.lr_final is None:
            return self.lr
        frac = epoch / max(self.epochs - 1, 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + np.cos(np.pi * frac))


@dataclass
class ExperimentConfig:
    name: str
    spec: SystemSpec
    baths: list[BathChannel]
    fields: list[FieldSpec]
    dt: float
    t_max: float
    rho0: np.ndarray
    model: ModelConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out_dir: str = "runs"

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_tmax(self.dt, self.t_max)

    def with_tmax(self, t_max: float) -> "ExperimentConfig":
        grid = TimeGrid.from_tmax(self.dt, t_max)
        return replace(self, t_max=t_max, model=replace(self.model, n_steps=grid.n_steps))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed))

    def check(self) -> None:
        g = self.grid
        m = self.model
        if (m.d, m.n_steps, m.k_channels) != (self.spec.dim, g.n_steps, len(self.fields)):
            raise ValidationError(
                f"model (d={m.d}, n_steps={m.n_steps}, K={m.k_channels}) does not match system "
                f"(d={self.spec.dim}, n_steps={g.n_steps}, K={len(self.fields)})")
        if abs(m.dt - self.dt) > 1e-15:
            raise ValidationError(f"model dt={m.dt} differs from grid dt={self.dt}")

    # ---- JSON

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": {
                "dim": self.spec.dim,
                "energies": list(self.spec.energies),
                "couplings": [[j, jp, _c(z)] for j, jp, z in self.spec.couplings],
            },
            "baths": [{"gamma": b.gamma, "v": _mat(b.v_op)} for b in self.baths],
            "fields": [{"op": _mat(f.op), "form": f.form, "range": [f.low, f.high],
                        "use_real_part": f.use_real_part} for f in self.fields],
            "grid": {"dt": self.dt, "t_max": self.t_max},
            "rho0": _mat(self.rho0),
            "model": asdict(self.model),
            "train": {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in asdict(self.train).items()},
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        s = d["system"]
        spec = SystemSpec(s["dim"], tuple(float(e) for e in s["energies"]),
                          tuple((int(j), int(jp), _uc(z)) for j, jp, z in s.get("couplings", [])))
        train = dict(d.get("train", {}))
        if train.get("alpha_schedule") is not None:
            train["alpha_schedule"] = tuple(train["alpha_schedule"])
        return cls(
            name=d["name"],
            spec=spec,
            baths=[BathChannel(float(b["gamma"]), _umat(b["v"])) for b in d.get("baths", [])],
            fields=[FieldSpec(_umat(f["op"]), f["form"], float(f["range"][0]),
                              float(f["range"][1]), bool(f.get("use_real_part", False)))
                    for f in d.get("fields", [])],
            dt=float(d["grid"]["dt"]),
            t_max=float(d["grid"]["t_max"]),
            rho0=_umat(d["rho0"]),
            model=ModelConfig(**d["model"]),
            train=TrainConfig(**train),
            seed=int(d.get("seed", 0)),
            out_dir=d.get("out_dir", "runs"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def _c(z) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def _uc(p) -> complex:
    return complex(p[0], p[1]) if isinstance(p, (list, tuple)) else complex(p)


def _mat(m: np.ndarray) -> list:
    return [[_c(z) for z in row] for row in np.asarray(m)]


def _umat(rows) -> np.ndarray:
    return np.array([[_uc(z) for z in row] for row in rows], dtype=complex)


# --------------------------------------------------------------------------
# presets

DESK_MODEL = dict(latent_channels=32, proj_hidden=64, n_layers=2)
PAPER_MODEL = dict(latent_channels=128, proj_hidden=256, n_layers=4)
DESK_TRAIN = dict(epochs=2000, n_data=200, n_phys=32, lr=1e-3, lr_final=1e-5)
PAPER_TRAIN = dict(epochs=10_000, n_data=2000, n_phys=200, lr=1e-4)


def _budgets(paper_scale: bool):
    return (PAPER_MODEL, PAPER_TRAIN) if paper_scale else (DESK_MODEL, DESK_TRAIN)


def preset_spin_boson(paper_scale: bool = False, t_max: float = 20.0, seed: int = 0,
                      omega_z: float = 1.0, omega_x: float = 0.5,
                      use_real_part: bool = False) -> ExperimentConfig:
    """Driven spin-boson model in the basis (g, e)."""
    g, e = 0, 1
    spec = SystemSpec(2, (-omega_z / 2, omega_z / 2), ((g, e, omega_x), (e, g, omega_x)))
    baths = [BathChannel(0.1, ketbra(2, e, g)), BathChannel(0.2, ketbra(2, g, e))]
    fields = [FieldSpec(ketbra(2, e, e), "periodic", 0.2, 1.0, use_real_part)]
    dt = 0.05
    model_kw, train_kw = _budgets(paper_scale)
    grid = TimeGrid.from_tmax(dt, t_max)
    return ExperimentConfig(
        name="spin_boson", spec=spec, baths=baths, fields=fields, dt=dt, t_max=t_max,
        rho0=ketbra(2, g, g),
        model=ModelConfig(d=2, n_steps=grid.n_steps, k_channels=1, dt=dt, **model_kw),
        train=TrainConfig(seed=seed, **train_kw), seed=seed)


def preset_three_state(paper_scale: bool = False, t_max: float = 2.0,
                       seed: int = 0) -> ExperimentConfig:
    """Three-state Gamma model; c1 and c3 act as constant fields.

    Both couplings are Hermitian: c1 (|1><2| + |2><1|), c3 (|2><3| + |3><2|).
    """
    spec = SystemSpec(3, (0.0, 0.1, 1.0))
    baths = [BathChannel(gm, ketbra(3, j, j)) for j, gm in enumerate((0.1, 0.2, 0.1))]
    f1 = ketbra(3, 0, 1) + ketbra(3, 1, 0)
    f3 = ketbra(3, 1, 2) + ketbra(3, 2, 1)
    fields = [FieldSpec(f1, "constant", 0.2, 0.8), FieldSpec(f3, "constant", 0.2, 0.8)]
    dt = 0.05
    model_kw, train_kw = _budgets(paper_scale)
    grid = TimeGrid.from_tmax(dt, t_max)
    return ExperimentConfig(
        name="three_state_gamma", spec=spec, baths=baths, fields=fields, dt=dt, t_max=t_max,
        rho0=ketbra(3, 0, 0),
        model=ModelConfig(d=3, n_steps=grid.n_steps, k_channels=2, dt=dt, **model_kw),
        train=TrainConfig(seed=seed, **train_kw), seed=seed)


PRESETS = {
    "spin_boson": preset_spin_boson,
    "three_state_gamma": preset_three_state,
}
