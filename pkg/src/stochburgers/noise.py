"""Spatial noise modes for the stochastic transport velocity.

The noise enters the advecting velocity as ``sum_k xi_k(x) dW_k`` with a
prescribed family of spatial profiles ``xi_k``.  This module defines the mode
family, the derived correction fields

* ``phi(x) = 1/2 sum_k xi_k(x) xi_k'(x)``   (Stratonovich-to-Ito drift),
* ``psi(x) = 1/2 sum_k (xi_k'(x)^2 - xi_k(x) xi_k''(x))``   (slope-moment drift),

and a regularity report (Lipschitz / linear-growth constants and their
square-sums) that every basis must pass before an integrator may use it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.interpolate import CubicSpline


class DomainError(ValueError):
    """Raised when a position falls outside a mode's or domain's support."""


# default probe resolution for bound constants; bounds are extrema over this grid
DEFAULT_PROBE_POINTS = 4096


@dataclass(frozen=True)
class Torus:
    length: float

    def probe_grid(self, n: int = DEFAULT_PROBE_POINTS) -> np.ndarray:
        return np.linspace(0.0, self.length, n, endpoint=False)

    def contains(self, x) -> bool:
        return True  # periodic: every real position is admissible


@dataclass(frozen=True)
class Line:
    x_min: float
    x_max: float

    def probe_grid(self, n: int = DEFAULT_PROBE_POINTS) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, n)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all((x >= self.x_min) & (x <= self.x_max)))


Domain = Union[Torus, Line]


@dataclass(frozen=True)
class LinearMode:
    """Affine profile ``alpha * x + beta``."""

    alpha: float
    beta: float = 0.0

    def eval(self, x, order: int):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return self.alpha * x + self.beta
        if order == 1:
            return np.full_like(x, self.alpha)
        if order == 2:
            return np.zeros_like(x)
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


@dataclass(frozen=True)
class FourierSinMode:
    """Profile ``amp * sin(k x)`` for a positive integer wavenumber k."""

    k: int
    amp: float

    def eval(self, x, order: int):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return self.amp * np.sin(self.k * x)
        if order == 1:
            return self.amp * self.k * np.cos(self.k * x)
        if order == 2:
            return -self.amp * self.k**2 * np.sin(self.k * x)
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


@dataclass(frozen=True)
class FourierCosMode:
    """Profile ``amp * cos(k x)`` for a positive integer wavenumber k."""

    k: int
    amp: float

    def eval(self, x, order: int):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return self.amp * np.cos(self.k * x)
        if order == 1:
            return -self.amp * self.k * np.sin(self.k * x)
        if order == 2:
            return -self.amp * self.k**2 * np.cos(self.k * x)
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


class TabulatedMode:
    """Mode defined by samples ``(x_i, xi(x_i))``, interpolated by a cubic spline.

    On a periodic domain the spline is periodic, so the second derivative
    needed by the slope-moment drift stays continuous across the seam.  On a
    line segment, evaluation outside the tabulated range raises
    :class:`DomainError`.
    """

    def __init__(self, x: np.ndarray, values: np.ndarray, domain: Domain):
        x = np.asarray(x, dtype=float)
        values = np.asarray(values, dtype=float)
        if x.ndim != 1 or x.shape != values.shape or x.size < 4:
            raise ValueError("tabulated mode needs matching 1-d arrays with >= 4 samples")
        if np.any(np.diff(x) <= 0):
            raise ValueError("tabulated sample positions must be strictly increasing")
        self.domain = domain
        if isinstance(domain, Torus):
            # close the period so the spline sees matching end values
            xp = np.append(x, x[0] + domain.length)
            vp = np.append(values, values[0])
            self._spline = CubicSpline(xp, vp, bc_type="periodic")
            self._x0 = x[0]
        else:
            self._spline = CubicSpline(x, values)
            self._lo, self._hi = x[0], x[-1]

    def eval(self, x, order: int):
        if order not in (0, 1, 2):
            raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")
        x = np.asarray(x, dtype=float)
        if isinstance(self.domain, Torus):
            x = self._x0 + np.mod(x - self._x0, self.domain.length)
        else:
            if np.any(x < self._lo) or np.any(x > self._hi):
                raise DomainError("position outside the tabulated range")
        return self._spline(x, nu=order)

    @classmethod
    def from_csv(cls, path, domain: Domain) -> "TabulatedMode":
        data = np.loadtxt(path, delimiter=",", comments="#")
        if data.ndim != 2 or data.shape[1] != 2:
            raise ValueError(f"{path}: expected a two-column CSV of (x, value) samples")
        return cls(data[:, 0], data[:, 1], domain)


NoiseMode = Union[LinearMode, FourierSinMode, FourierCosMode, TabulatedMode]


def eval_mode(mode: NoiseMode, x, order: int):
    """Evaluate a mode or its first/second derivative at ``x``."""
    return mode.eval(x, order)


def fourier_pair_family(k_max: int, amp: Callable[[int], float] | None = None) -> list[NoiseMode]:
    """sin/cos pairs for k = 1..k_max; default amplitude 1/k^2 per mode."""
    if amp is None:
        amp = lambda k: 1.0 / k**2
    modes: list[NoiseMode] = []
    for k in range(1, k_max + 1):
        modes.append(FourierSinMode(k, amp(k)))
        modes.append(FourierCosMode(k, amp(k)))
    return modes


def _weight_column(weights: np.ndarray, k: int, target_ndim: int) -> np.ndarray:
    """Extract mode-k weights and pad trailing axes so they broadcast over states."""
    wk = np.asarray(weights)[..., k]
    while wk.ndim < target_ndim:
        wk = wk[..., np.newaxis]
    return wk


@dataclass
class NoiseBasis:
    """A finite family of noise modes on a common domain.

    The family is truncated at ``n_modes = len(modes)``; the regularity report
    exposes the per-mode constants so the tail decay of a would-be infinite
    family can be inspected.  Instances are immutable in practice (modes are
    never mutated) and safe to share across workers.
    """

    modes: Sequence[NoiseMode]
    domain: Domain = field(default_factory=lambda: Torus(2.0 * math.pi))

    def __post_init__(self):
        self.modes = tuple(self.modes)
        self._report_cache = None
        # group trigonometric modes so large families evaluate as one block
        f_idx, f_k, f_amp, f_sin = [], [], [], []
        others = []
        for i, mode in enumerate(self.modes):
            if isinstance(mode, (FourierSinMode, FourierCosMode)):
                f_idx.append(i)
                f_k.append(float(mode.k))
                f_amp.append(mode.amp)
                f_sin.append(isinstance(mode, FourierSinMode))
            else:
                others.append((i, mode))
        self._f_idx = np.asarray(f_idx, dtype=np.intp)
        self._f_k = np.asarray(f_k)
        self._f_amp = np.asarray(f_amp)
        self._f_sin = np.asarray(f_sin, dtype=bool)
        self._f_psi_const = 0.5 * float(np.sum(self._f_amp**2 * self._f_k**2))
        self._others = others

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def eval(self, k: int, x, order: int):
        return self.modes[k].eval(x, order)

    def _fourier_block(self, x: np.ndarray, order: int) -> np.ndarray:
        """Values of every trig mode at x, shape x.shape + (n_fourier,)."""
        arg = x[..., np.newaxis] * self._f_k
        s, c = np.sin(arg), np.cos(arg)
        if order == 0:
            return np.where(self._f_sin, s, c) * self._f_amp
        if order == 1:
            return np.where(self._f_sin, c, -s) * (self._f_amp * self._f_k)
        if order == 2:
            return np.where(self._f_sin, s, c) * (-self._f_amp * self._f_k**2)
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")

    def sum_weighted(self, x, weights, order: int):
        """``sum_k w_k * xi_k^(order)(x)`` with weights broadcast over state axes.

        ``weights`` has mode index on its last axis; leading axes (e.g. a path
        axis) broadcast against ``x``.
        """
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        if self._f_idx.size:
            wcols = np.asarray(weights)[..., self._f_idx]
            while wcols.ndim < x.ndim + 1:
                wcols = np.expand_dims(wcols, axis=-2)
            out = out + np.sum(wcols * self._fourier_block(x, order), axis=-1)
        for idx, mode in self._others:
            out = out + _weight_column(weights, idx, x.ndim) * mode.eval(x, order)
        return out

    def phi(self, x):
        """Drift correction ``1/2 sum_k xi_k xi_k'``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        if self._f_idx.size:
            out = out + np.sum(self._fourier_block(x, 0) * self._fourier_block(x, 1), axis=-1)
        for _, mode in self._others:
            out = out + mode.eval(x, 0) * mode.eval(x, 1)
        return 0.5 * out

    def phi_prime(self, x):
        """Spatial derivative of phi, ``1/2 sum_k ((xi_k')^2 + xi_k xi_k'')``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        if self._f_idx.size:
            b0, b1, b2 = (self._fourier_block(x, o) for o in (0, 1, 2))
            out = out + np.sum(b1 * b1 + b0 * b2, axis=-1)
        for _, mode in self._others:
            d1 = mode.eval(x, 1)
            out = out + d1 * d1 + mode.eval(x, 0) * mode.eval(x, 2)
        return 0.5 * out

    def psi(self, x):
        """Slope-moment drift field ``1/2 sum_k ((xi_k')^2 - xi_k xi_k'')``.

        Each trig mode contributes the constant ``amp^2 k^2 / 2``.
        """
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self._f_psi_const)
        for _, mode in self._others:
            d1 = mode.eval(x, 1)
            out = out + 0.5 * (d1 * d1 - mode.eval(x, 0) * mode.eval(x, 2))
        return out

    def ensure_valid(self) -> None:
        """Run (and cache) the regularity report; raise if it does not pass."""
        if self._report_cache is None:
            self._report_cache = assumption_report(self, self.domain.probe_grid())
        if not self._report_cache.passed:
            raise ValueError("noise basis failed its regularity report")


@dataclass(frozen=True)
class CorrectionFields:
    """Evaluable correction fields with their probe-grid bound constants.

    ``c_bound``/``d_bound`` are the min/max of ``2*psi`` over the probe grid;
    they feed the closed-form envelope for the slope moment (lower constant)
    and the logistic ceiling for nonnegative slopes (upper constant).
    """

    phi: Callable[[np.ndarray], np.ndarray]
    psi: Callable[[np.ndarray], np.ndarray]
    c_bound: float
    d_bound: float


def correction_fields(basis: NoiseBasis, probe_grid) -> CorrectionFields:
    """Build phi/psi and their bound constants from probe-grid extrema."""
    probe = np.asarray(probe_grid, dtype=float)
    if probe.size == 0:
        raise ValueError("probe grid must be non-empty")
    two_psi = 2.0 * basis.psi(probe)
    return CorrectionFields(
        phi=basis.phi,
        psi=basis.psi,
        c_bound=float(np.min(two_psi)) if basis.n_modes else 0.0,
        d_bound=float(np.max(two_psi)) if basis.n_modes else 0.0,
    )


@dataclass(frozen=True)
class AssumptionReport:
    """Per-mode regularity constants estimated on a probe grid.

    ``lipschitz[k]`` is ``max |xi_k'|`` and ``growth[k]`` is
    ``max |xi_k| / (1 + |x|)``; ``phi_lipschitz``/``phi_growth`` are the same
    constants for the drift correction.  ``passed`` requires every constant and
    both square-sums to be finite (automatic for a finite family, but the
    recorded values expose the tail decay).
    """

    lipschitz: np.ndarray
    growth: np.ndarray
    sum_lipschitz_sq: float
    sum_growth_sq: float
    phi_lipschitz: float
    phi_growth: float
    passed: bool


def assumption_report(basis: NoiseBasis, probe_grid) -> AssumptionReport:
    probe = np.asarray(probe_grid, dtype=float)
    if probe.size < 2:
        raise ValueError("probe grid needs at least 2 points")
    denom = 1.0 + np.abs(probe)
    lipschitz = np.empty(basis.n_modes)
    growth = np.empty(basis.n_modes)
    for k, mode in enumerate(basis.modes):
        lipschitz[k] = np.max(np.abs(mode.eval(probe, 1)))
        growth[k] = np.max(np.abs(mode.eval(probe, 0)) / denom)
    phi_lip = float(np.max(np.abs(basis.phi_prime(probe)))) if basis.n_modes else 0.0
    phi_gro = float(np.max(np.abs(basis.phi(probe)) / denom)) if basis.n_modes else 0.0
    sum_lip = float(np.sum(lipschitz**2))
    sum_gro = float(np.sum(growth**2))
    passed = bool(
        np.all(np.isfinite(lipschitz))
        and np.all(np.isfinite(growth))
        and np.isfinite(sum_lip)
        and np.isfinite(sum_gro)
        and np.isfinite(phi_lip)
        and np.isfinite(phi_gro)
    )
    return AssumptionReport(
        lipschitz=lipschitz,
        growth=growth,
        sum_lipschitz_sq=sum_lip,
        sum_growth_sq=sum_gro,
        phi_lipschitz=phi_lip,
        phi_growth=phi_gro,
        passed=passed,
    )
