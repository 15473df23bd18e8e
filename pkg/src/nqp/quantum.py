"""Operator algebra for driven open quantum systems.

Everything here is a pure function of numpy arrays. Units: hbar = 1 and all
energies/frequencies in units of the reference frequency omega_0.

Vectorization uses row-major order: ``vec(rho)[j * d + jp] = rho[j, jp]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised for malformed systems, operators or shapes."""


@dataclass(frozen=True)
class SystemSpec:
    """Bare system: state energies plus sparse interstate couplings."""

    dim: int
    energies: tuple[float, ...]
    couplings: tuple[tuple[int, int, complex], ...] = ()

    def __post_init__(self):
        if self.dim < 2:
            raise ValidationError(f"dim must be >= 2, got {self.dim}")
        if len(self.energies) != self.dim:
            raise ValidationError(f"expected {self.dim} energies, got {len(self.energies)}")
        for j, jp, _ in self.couplings:
            if j == jp:
                raise ValidationError(f"coupling ({j}, {jp}) is diagonal; use energies")
            if not (0 <= j < self.dim and 0 <= jp < self.dim):
                raise ValidationError(f"coupling ({j}, {jp}) outside dim {self.dim}")


@dataclass(frozen=True)
class BathChannel:
    gamma: float
    v_op: np.ndarray

    def __post_init__(self):
        if self.gamma < 0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class FieldChannel:
    """One external field term f(t) * F.

    ``form`` is ``"periodic"`` (f = exp(i w t), or cos(w t) with
    ``use_real_part``) or ``"constant"`` (f = value).
    """

    f_op: np.ndarray
    form: str
    value: float
    use_real_part: bool = False

    def __post_init__(self):
        if self.form not in ("periodic", "constant"):
            raise ValidationError(f"unknown field form {self.form!r}")

    def __call__(self, t):
        return field_value(self.form, self.value, t, self.use_real_part)


def field_value(form: str, value: float, t, use_real_part: bool = False):
    """Evaluate a scalar field at time(s) ``t``; always returns complex."""
    t = np.asarray(t, dtype=float)
    if form == "periodic":
        if use_real_part:
            return np.cos(value * t) + 0j
        return np.exp(1j * value * t)
    if form == "constant":
        return np.full(t.shape, complex(value)) if t.ndim else complex(value)
    raise ValidationError(f"unknown field form {form!r}")


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0 or self.n_steps < 1:
            raise ValidationError(f"bad grid dt={self.dt} n_steps={self.n_steps}")

    @classmethod
    def from_tmax(cls, dt: float, t_max: float) -> "TimeGrid":
        n = t_max / dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValidationError(f"t_max={t_max} is not an integer multiple of dt={dt}")
        return cls(dt, int(round(n)))

    @property
    def t_max(self) -> float:
        return self.dt * self.n_steps

    def times(self, t0: float = 0.0) -> np.ndarray:
        return t0 + self.dt * np.arange(self.n_steps + 1)


def ketbra(d: int, j: int, jp: int) -> np.ndarray:
    """|j><jp| in a d-dimensional basis."""
    m = np.zeros((d, d), dtype=complex)
    m[j, jp] = 1.0
    return m


def build_h0(spec: SystemSpec) -> np.ndarray:
    h = np.diag(np.asarray(spec.energies, dtype=complex))
    for j, jp, delta in spec.couplings:
        h[j, jp] += delta
    if not np.array_equal(h, h.conj().T):
        raise ValidationError("coupling list does not define a Hermitian H0")
    return h


def _check_square(op: np.ndarray, d: int, what: str):
    if op.shape != (d, d):
        raise ValidationError(f"{what} has shape {op.shape}, expected {(d, d)}")


def hamiltonian_at(spec: SystemSpec, fields: Sequence[FieldChannel], t: float,
                   h0: np.ndarray | None = None) -> np.ndarray:
    """H0 + sum_k f_k(t) F_k. Complex periodic fields make this non-Hermitian."""
    h = build_h0(spec) if h0 is None else h0.copy()
    for fc in fields:
        _check_square(fc.f_op, spec.dim, "field operator")
        h = h + fc(t) * fc.f_op
    return h


def dissipator_apply(v_op: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """V^dag V rho + rho V^dag V - 2 V rho V^dag."""
    if v_op.shape != rho.shape:
        raise ValidationError(f"shape mismatch {v_op.shape} vs {rho.shape}")
    vdv = v_op.conj().T @ v_op
    return vdv @ rho + rho @ vdv - 2.0 * v_op @ rho @ v_op.conj().T


def make_rhs(spec: SystemSpec, baths: Sequence[BathChannel], fields: Sequence[FieldChannel]):
    """Return ``rhs(t, rho)`` with H0 and the V^dag V products precomputed."""
    d = spec.dim
    h0 = build_h0(spec)
    for fc in fields:
        _check_square(fc.f_op, d, "field operator")
    terms = []
    for b in baths:
        _check_square(b.v_op, d, "bath operator")
        if b.gamma:
            v = np.asarray(b.v_op, dtype=complex)
            terms.append((b.gamma, v, v.conj().T, v.conj().T @ v))

    def rhs(t: float, rho: np.ndarray) -> np.ndarray:
        _check_square(rho, d, "rho")
        h = h0
        for fc in fields:
            h = h + fc(t) * fc.f_op
        out = -1j * (h @ rho - rho @ h)
        for gamma, v, vd, vdv in terms:
            out -= gamma * (vdv @ rho + rho @ vdv - 2.0 * (v @ rho @ vd))
        return out

    return rhs


def qme_rhs(spec: SystemSpec, baths: Sequence[BathChannel], fields: Sequence[FieldChannel],
            t: float, rho: np.ndarray) -> np.ndarray:
    """Right-hand side of the Lindblad-form master equation (hbar = 1)."""
    return make_rhs(spec, baths, fields)(t, rho)


def vectorize(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1).copy()


def devectorize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    d = int(round(np.sqrt(v.shape[-1])))
    if d * d != v.shape[-1]:
        raise ValidationError(f"length {v.shape[-1]} is not a perfect square")
    return v.reshape(v.shape[:-1] + (d, d)).copy()


def superoperator(apply, d: int) -> np.ndarray:
    """Matrix of a linear map on d x d matrices, probed on basis |j><jp|."""
    out = np.zeros((d * d, d * d), dtype=complex)
    for x in range(d * d):
        out[:, x] = vectorize(apply(ketbra(d, x // d, x % d)))
    return out


def liouvillian_matrix(spec: SystemSpec, baths: Sequence[BathChannel],
                       fields: Sequence[FieldChannel], t: float) -> np.ndarray:
    """L(t) with vec(qme_rhs(rho)) == L(t) @ vec(rho)."""
    rhs = make_rhs(spec, baths, fields)
    return superoperator(lambda r: rhs(t, r), spec.dim)


@dataclass
class LiouvillianParts:
    """Split L(t) = static + sum_k f_k(t) * per_field[k].

    Every part is probed through ``qme_rhs``; the split is exact because the
    right-hand side is linear in each field amplitude.
    """

    static: np.ndarray
    per_field: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def build(cls, spec: SystemSpec, baths: Sequence[BathChannel],
              field_ops: Sequence[np.ndarray]) -> "LiouvillianParts":
        static = liouvillian_matrix(spec, baths, [], 0.0)
        zero = SystemSpec(spec.dim, (0.0,) * spec.dim)
        per_field = [
            liouvillian_matrix(zero, [], [FieldChannel(op, "constant", 1.0)], 0.0)
            for op in field_ops
        ]
        return cls(static, per_field)

    def at(self, field_values: np.ndarray) -> np.ndarray:
        """Liouvillians for field rows of shape (..., K) -> (..., d^2, d^2)."""
        field_values = np.asarray(field_values, dtype=complex)
        out = np.broadcast_to(self.static, field_values.shape[:-1] + self.static.shape).copy()
        for k, part in enumerate(self.per_field):
            out += field_values[..., k, None, None] * part
        return out
