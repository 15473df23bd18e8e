"""Physics-informed training: data loss, master-equation residual, Adam loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine as E
from .config import ExperimentConfig, TrainConfig
from .dataset import Dataset, generate_dataset
from .engine import Tensor
from .model import ModelDiverged, ModelParams, forward, init_params, save_checkpoint
from .quantum import LiouvillianParts, ValidationError

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig", "LossReport", "TrainingDiverged", "combined_loss", "data_loss", "data_term",
    "derivative_matrix", "physics_residual", "trajectory_residual", "train",
]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


@dataclass
class LossReport:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "l_data", "l_phys", "l", "grad_norm", "seconds")

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path, include_time: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                seconds = r["seconds"] if include_time else 0.0
                w.writerow([r["epoch"]] + [f"{r[k]:.17g}" for k in self.COLUMNS[1:-1]]
                           + [f"{seconds:.17g}"])


def combined_loss(l_data, l_phys, alpha: float):
    """alpha * l_data + (1 - alpha) * l_phys for floats or tensors."""
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha={alpha} outside [0, 1]")
    if isinstance(l_data, Tensor) or isinstance(l_phys, Tensor):
        return E.add(E.scale(E.as_tensor(l_data), alpha), E.scale(E.as_tensor(l_phys), 1.0 - alpha))
    return alpha * l_data + (1.0 - alpha) * l_phys


def data_loss(params: ModelParams, rho0: np.ndarray, fields: np.ndarray,
              trajectories: np.ndarray | None, squared: bool = False) -> Tensor:
    """(1 / (N n_steps)) sum_p sum_n ||mu_n - rho_n||_F over a batch."""
    if trajectories is None:
        raise ValidationError("data loss needs reference trajectories")
    return data_term(forward(params, rho0, fields), trajectories, squared)


def data_term(mu: Tensor, trajectories: np.ndarray, squared: bool = False) -> Tensor:
    """Data loss of paired predictions mu (B, T, 2 d^2) against complex trajectories."""
    target = E.to_pairs(np.asarray(trajectories, dtype=complex))
    B, T = mu.shape[:2]
    return E.frobenius_mean(mu, target, denom=B * (T - 1), squared=squared)


def derivative_matrix(n_times: int, dt: float) -> np.ndarray:
    """Second-order finite-difference d/dt: central inside, one-sided at both ends."""
    if n_times < 3:
        raise ValueError("need at least 3 time points for a second-order derivative")
    D = np.zeros((n_times, n_times))
    i = np.arange(1, n_times - 1)
    D[i, i + 1] = 0.5
    D[i, i - 1] = -0.5
    D[0, :3] = (-1.5, 2.0, -0.5)
    D[-1, -3:] = (0.5, -2.0, 1.5)
    return D / dt


def trajectory_residual(mu: Tensor, fields: np.ndarray, parts: LiouvillianParts, dt: float,
                        squared: bool = False) -> Tensor:
    """Residual of d/dt mu = L_n mu for paired trajectories mu of shape (B, T, 2 d^2)."""
    fields = np.asarray(fields, dtype=complex)
    if fields.shape[:2] != mu.shape[:2]:
        raise ValidationError(f"field grid {fields.shape[:2]} does not match trajectory "
                              f"grid {mu.shape[:2]}")
    B, T = mu.shape[:2]
    dmu = E.time_stencil(mu, derivative_matrix(T, dt))
    lmu = E.complex_matvec(parts.at(fields), mu)
    return E.frobenius_mean(dmu, lmu, denom=B * (T - 1), squared=squared)


def physics_residual(params: ModelParams, rho0: np.ndarray, fields: np.ndarray,
                     parts: LiouvillianParts, squared: bool = False) -> Tensor:
    mu = forward(params, rho0, fields)
    return trajectory_residual(mu, fields, parts, params.config.dt, squared)


def _grad_norm(params: ModelParams) -> float:
    return math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params if p.grad is not None))


def train(config: ExperimentConfig, data: Dataset | None = None, out_dir=None,
          params: ModelParams | None = None, threads: int = 1) -> tuple[ModelParams, LossReport]:
    """Minibatch Adam on alpha * L_data + (1 - alpha) * L_phys.

    The physics set is redrawn every epoch and split across the same number of
    steps as the data set, one chunk per step.
    """
    config.check()
    tc: TrainConfig = config.train
    if params is None:
        params = init_params(config.model, seed=tc.seed)
    report = LossReport()
    if tc.epochs == 0:
        return params, report

    if data is None:
        data = generate_dataset(config, tc.n_data, "data", seed=tc.seed, threads=threads)
    if (data.dim, data.n_steps, data.channels) != (config.model.d, config.model.n_steps,
                                                    config.model.k_channels):
        raise ValidationError(
            f"dataset (d={data.dim}, n_steps={data.n_steps}, K={data.channels}) does not match "
            f"model (d={config.model.d}, n_steps={config.model.n_steps}, "
            f"K={config.model.k_channels})")
    parts = LiouvillianParts.build(config.spec, config.baths, [f.op for f in config.fields])
    opt = E.Adam(list(params), lr=tc.lr)
    n_data = len(data)
    n_batches = max(1, -(-n_data // tc.batch_size))
    out_dir = Path(out_dir) if out_dir is not None else None

    for epoch in range(1, tc.epochs + 1):
        t_start = time.perf_counter()
        alpha = tc.alpha_at(epoch - 1)
        opt.lr = tc.lr_at(epoch - 1)
        order = np.random.default_rng([tc.seed, 2, epoch]).permutation(n_data)
        phys = generate_dataset(config, tc.n_phys, "physics", seed=tc.seed, epoch=epoch,
                                threads=threads)
        phys_chunks = np.array_split(np.arange(tc.n_phys), n_batches)
        sums = np.zeros(3)
        for b in range(n_batches):
            idx = order[b * tc.batch_size:(b + 1) * tc.batch_size]
            pidx = phys_chunks[b]
            terms = [Tensor(0.0), Tensor(0.0)]
            # one forward pass over the data rows followed by the physics rows
            n_d = len(idx)
            rho0 = np.concatenate([data.rho0[idx], phys.rho0[pidx]])
            fields = np.concatenate([data.fields[idx], phys.fields[pidx]])
            try:
                mu = forward(params, rho0, fields)
            except ModelDiverged as exc:
                raise TrainingDiverged(epoch, b) from exc
            if n_d:
                terms[0] = data_term(E.batch_slice(mu, 0, n_d), data.trajectories[idx],
                                     tc.squared_norm)
            if len(pidx):
                terms[1] = trajectory_residual(E.batch_slice(mu, n_d, len(rho0)),
                                               phys.fields[pidx], parts, config.model.dt,
                                               tc.squared_norm)
            loss = combined_loss(terms[0], terms[1], alpha)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, b)
            opt.zero_grad()
            E.backward(loss)
            sums += (terms[0].item(), terms[1].item(), _grad_norm(params))
            opt.step()
        l_data, l_phys, gnorm = sums / n_batches
        report.rows.append({
            "epoch": epoch, "l_data": l_data, "l_phys": l_phys,
            "l": combined_loss(l_data, l_phys, alpha), "grad_norm": gnorm,
            "seconds": time.perf_counter() - t_start,
        })
        if epoch == 1 or epoch % 100 == 0:
            log.info("epoch %d  L=%.4e  L_data=%.4e  L_phys=%.4e", epoch, report.rows[-1]["l"],
                     l_data, l_phys)
        if out_dir is not None and tc.checkpoint_every and epoch % tc.checkpoint_every == 0:
            save_checkpoint(params, out_dir / "checkpoint.nqpm",
                            {"seed": tc.seed, "epoch": epoch, "loss": report.rows[-1]["l"]})
    return params, report
