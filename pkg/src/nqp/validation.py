"""Model-vs-RK4 comparison inside and beyond the training window."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig
from .dataset import IntegrationDiverged, propagate
from .model import ModelDiverged, ModelParams, Propagator, model_propagator, rollout
from .quantum import TimeGrid


@dataclass
class WindowErrors:
    pop_max: float
    pop_rms: float
    coh_max: float
    coh_rms: float


@dataclass
class FieldResult:
    field: list[float]
    within: WindowErrors | None = None
    beyond: WindowErrors | None = None
    error: str | None = None


@dataclass
class ValidationReport:
    horizon_steps: int
    window_steps: int
    dt: float
    results: list[FieldResult] = field(default_factory=list)

    CSV_COLUMNS = ("field", "window", "pop_max", "pop_rms", "coh_max", "coh_rms", "error")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS)
            for r in self.results:
                tag = ";".join(f"{v:.17g}" for v in r.field)
                for name in ("within", "beyond"):
                    e = getattr(r, name)
                    nums = ([f"{x:.17g}" for x in (e.pop_max, e.pop_rms, e.coh_max, e.coh_rms)]
                            if e is not None else [""] * 4)
                    w.writerow([tag, name] + nums + [r.error or ""])


def _errors(pred: np.ndarray, ref: np.ndarray, d: int) -> WindowErrors | None:
    """Population (real diagonal) and coherence (|off-diagonal|) errors."""
    if pred.shape[0] == 0:
        return None
    diag = np.arange(d) * (d + 1)
    off = np.setdiff1d(np.arange(d * d), diag)
    dp = np.abs(pred[:, diag].real - ref[:, diag].real)
    dc = np.abs(pred[:, off] - ref[:, off])
    return WindowErrors(float(dp.max()), float(np.sqrt(np.mean(dp ** 2))),
                        float(dc.max()), float(np.sqrt(np.mean(dc ** 2))))


def reference_trajectory(config: ExperimentConfig, channels, horizon_steps: int,
                         rho0: np.ndarray | None = None) -> np.ndarray:
    rho0 = config.rho0 if rho0 is None else rho0
    return propagate(config.spec, config.baths, channels, rho0,
                     TimeGrid(config.dt, horizon_steps)).states


def validate(config: ExperimentConfig, field_points: Sequence[Sequence[float]], horizon_steps: int,
             params: ModelParams | None = None,
             propagator_factory: Callable[[list], Propagator] | None = None,
             rho0: np.ndarray | None = None) -> ValidationReport:
    """Compare the model rollout (or any window propagator) against single-shot RK4.

    ``propagator_factory(channels)`` overrides the model, e.g. with
    :func:`nqp.model.rk4_propagator` for self-validation.
    """
    if propagator_factory is None:
        if params is None:
            raise ValueError("need model params or a propagator factory")
        propagator_factory = lambda ch: model_propagator(params, ch)  # noqa: E731
    rho0 = config.rho0 if rho0 is None else np.asarray(rho0, dtype=complex)
    window = config.grid.n_steps
    d = config.spec.dim
    report = ValidationReport(horizon_steps, window, config.dt)
    for point in field_points:
        point = [float(v) for v in point]
        res = FieldResult(point)
        try:
            channels = [f.channel(v) for f, v in zip(config.fields, point, strict=True)]
            ref = reference_trajectory(config, channels, horizon_steps, rho0)
            pred = rollout(propagator_factory(channels), rho0, window, horizon_steps)
            res.within = _errors(pred[: window + 1], ref[: window + 1], d)
            res.beyond = _errors(pred[window + 1:], ref[window + 1:], d)
        except (IntegrationDiverged, ModelDiverged, ValueError) as exc:
            res.error = f"{type(exc).__name__}: {exc}"
        report.results.append(res)
    return report
