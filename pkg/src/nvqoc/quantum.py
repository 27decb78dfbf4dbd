"""Dense linear algebra on the 4-level register.

States and propagators are plain ``complex128`` arrays of shape ``(4, 4)``;
:func:`as_density` and :func:`as_unitary` validate the invariants and return
read-only copies. Time is in microseconds and Hamiltonians in rad/us.

The step-propagation kernel is compiled (``nvqoc._kernels``) when available
and falls back to numpy otherwise. Set ``NVQOC_PURE_PYTHON=1`` to force the
fallback.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from nvqoc import _fallback

if os.environ.get("NVQOC_PURE_PYTHON", "") not in ("", "0"):
    _kernel = _fallback
    BACKEND = "python"
else:
    try:
        from nvqoc import _kernels as _kernel
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _kernel = _fallback
        BACKEND = "python"

DIM = 4

HERMITIAN_TOL = 1e-10
DENSITY_HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
UNITARY_TOL = 1e-10


class ValidationError(ValueError):
    """Raised when a matrix violates the invariant of its role."""


def _as_matrix(m) -> np.ndarray:
    arr = np.array(m, dtype=np.complex128)
    if arr.shape != (DIM, DIM):
        raise ValidationError(f"expected a {DIM}x{DIM} matrix, got shape {arr.shape}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def hermiticity_residual(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T)))


def unitarity_residual(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(DIM))))


def as_density(m, *, tol: float = PSD_TOL) -> np.ndarray:
    """Validate ``m`` as a density matrix and return a read-only copy."""
    rho = _as_matrix(m)
    res = hermiticity_residual(rho)
    if res > DENSITY_HERMITIAN_TOL:
        raise ValidationError(f"density matrix not Hermitian (residual {res:.3e})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValidationError(f"density matrix trace is {tr.real:.15f}, expected 1")
    lam_min = float(np.linalg.eigvalsh(rho).min())
    if lam_min < -tol:
        raise ValidationError(f"density matrix not positive semidefinite (min eigenvalue {lam_min:.3e})")
    return _frozen(rho)


def as_unitary(m, *, tol: float = UNITARY_TOL) -> np.ndarray:
    """Validate ``m`` as unitary and return a read-only copy."""
    u = _as_matrix(m)
    res = unitarity_residual(u)
    if res > tol:
        raise ValidationError(f"operator not unitary (residual {res:.3e})")
    return _frozen(u)


def ket(label: str) -> np.ndarray:
    """Basis vector for ``'00'``, ``'01'``, ``'10'`` or ``'11'`` (electron first)."""
    v = np.zeros(DIM, dtype=np.complex128)
    v[int(label, 2)] = 1.0
    return v


def projector(label: str) -> np.ndarray:
    v = ket(label)
    return _frozen(np.outer(v, v.conj()))


def pure_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.complex128)
    psi = psi / np.linalg.norm(psi)
    return _frozen(np.outer(psi, psi.conj()))


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n_steps`` intervals over ``[0, total_time]``."""

    total_time: float
    n_steps: int

    def __post_init__(self):
        if not (self.n_steps >= 1 and int(self.n_steps) == self.n_steps):
            raise ValidationError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not self.total_time > 0:
            raise ValidationError(f"total_time must be positive, got {self.total_time}")

    @property
    def step(self) -> float:
        return self.total_time / self.n_steps

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.step

    @classmethod
    def resolving(cls, total_time: float, f_max: float, points_per_period: int = 200) -> "TimeGrid":
        """Finest-needed grid: ``step <= 1 / (points_per_period * f_max)``.

        ``f_max`` is a linear frequency in MHz (cycles per microsecond).
        """
        n = max(1, math.ceil(total_time * points_per_period * max(f_max, 0.0) - 1e-9))
        return cls(total_time, n)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.total_time, self.n_steps * factor)


def hermitian_expm(h, dt: float) -> np.ndarray:
    """Return ``exp(-i h dt)`` via Hermitian eigendecomposition."""
    h = _as_matrix(h)
    res = hermiticity_residual(h)
    if res > HERMITIAN_TOL:
        raise ValidationError(f"generator not Hermitian (residual {res:.3e})")
    return _frozen(_kernel.hermitian_expm_raw(np.ascontiguousarray(h), float(dt)))


def propagate_stack(hams: np.ndarray, dt: float) -> np.ndarray:
    """Ordered product of step exponentials for a ``(n, 4, 4)`` Hamiltonian stack."""
    hams = np.ascontiguousarray(hams, dtype=np.complex128)
    return _frozen(nearest_unitary(_kernel.propagate_steps(hams, float(dt))))


def nearest_unitary(u: np.ndarray) -> np.ndarray:
    """Polar factor of ``u``: removes rounding drift accumulated over many steps."""
    w, _, vh = np.linalg.svd(u)
    return w @ vh


def sample_hamiltonians(h_of_t: Callable, times: np.ndarray) -> np.ndarray:
    """Evaluate a sampler on ``times``; vectorised samplers return ``(n, 4, 4)``."""
    try:
        out = np.asarray(h_of_t(times), dtype=np.complex128)
    except (ValueError, TypeError):  # scalar-only sampler
        out = None
    if out is not None and out.shape == (len(times), DIM, DIM):
        return out
    return np.stack([np.asarray(h_of_t(t), dtype=np.complex128) for t in times])


def propagate(h_of_t: Callable, grid: TimeGrid) -> np.ndarray:
    """Piecewise-constant propagator, sampling ``h_of_t`` at step midpoints."""
    return propagate_stack(sample_hamiltonians(h_of_t, grid.midpoints()), grid.step)


def apply_channel(u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    out = u @ rho @ u.conj().T
    # restore exact Hermiticity lost to rounding
    return _frozen(0.5 * (out + out.conj().T))


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = np.where(w < PSD_TOL, 0.0, w)
    return (v * np.sqrt(w)) @ v.conj().T


def uhlmann_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``[Tr sqrt(sqrt(rho) sigma sqrt(rho))]^2``, clipped to ``[0, 1]``.

    Computed from the singular values of ``sqrt(rho) sqrt(sigma)``, which is
    symmetric in its arguments by construction.
    """
    s = np.linalg.svd(psd_sqrt(rho) @ psd_sqrt(sigma), compute_uv=False)
    return float(min(max(np.sum(s) ** 2, 0.0), 1.0))
