"""Characteristic curves of the noisy Burgers flow and their slope dynamics.

Along a characteristic the velocity sample ``u_val = u0(X_0)`` is conserved,
the position follows

    dX = u_val dt + sum_k xi_k(X) o dW_k          (Stratonovich)

and the slope ``Y = du/dx`` along it follows the Riccati-type equation

    dY = -Y^2 dt - sum_k xi_k'(X) Y o dW_k.

Three one-step maps are provided: an Euler-Maruyama step of the Ito form
(drift corrected by phi and psi), a predictor-corrector (Heun) evaluation of
the Stratonovich integral, and a drift/noise splitting step that traces the
frozen noise velocity exactly enough that crossing times inherit the
integrated-exponential quadrature of :func:`stochburgers.paths.integrated_gbm`
step for step.

Slope blow-up is declared at a configurable cap; the blow-up instant is read
off by inverse interpolation of ``1/Y`` through zero, which is linear for the
Riccati flow.  States whose slope leaves its sign barrier (a discrete-step
artifact possible only for extreme increments) are flagged dead rather than
propagated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import CubicSpline

from .noise import CorrectionFields, Domain, NoiseBasis, Torus, correction_fields
from .paths import BrownianPath, TimeGrid, integrated_gbm

BLOWUP_CAP = 1.0e6

# death reason codes kept as small ints so ensembles stay plain arrays
REASON_NONE = 0
REASON_BLOWUP = 1
REASON_SIGN_FLIP = 2
REASON_NONFINITE = 3
REASON_CROSSING = 4


@dataclass
class InitialProfile:
    """Initial velocity profile with its exact derivative.

    ``u0`` must be vectorised; ``du0`` is trusted to be the exact derivative
    (``derivative_residual`` spot-checks it).  Positivity of ``u0`` is reported
    by :meth:`min_value`, never enforced.
    """

    u0: Callable[[np.ndarray], np.ndarray]
    du0: Callable[[np.ndarray], np.ndarray]
    descriptor: str = "custom"

    def derivative_residual(self, probe, h: float = 1e-6) -> float:
        """Max difference between du0 and a centered difference of u0."""
        x = np.asarray(probe, dtype=float)
        fd = (self.u0(x + h) - self.u0(x - h)) / (2 * h)
        return float(np.max(np.abs(fd - self.du0(x))))

    def min_value(self, probe) -> float:
        return float(np.min(self.u0(np.asarray(probe, dtype=float))))


def negative_line(slope: float, offset: float = 0.0) -> InitialProfile:
    """``u0(x) = offset - slope * x`` (constant slope ``-slope``)."""
    return InitialProfile(
        u0=lambda x: offset - slope * np.asarray(x, dtype=float),
        du0=lambda x: np.full_like(np.asarray(x, dtype=float), -slope),
        descriptor=f"negative_line(slope={slope}, offset={offset})",
    )


def sine_wave(amplitude: float, wavenumber: int, length: float, offset: float = 0.0) -> InitialProfile:
    """``u0(x) = offset + A sin(2 pi m x / L)`` on a torus of circumference L."""
    omega = 2.0 * np.pi * wavenumber / length
    return InitialProfile(
        u0=lambda x: offset + amplitude * np.sin(omega * np.asarray(x, dtype=float)),
        du0=lambda x: amplitude * omega * np.cos(omega * np.asarray(x, dtype=float)),
        descriptor=f"sine_wave(amplitude={amplitude}, wavenumber={wavenumber}, length={length}, offset={offset})",
    )


def tabulated_profile(x, values, domain: Domain) -> InitialProfile:
    x = np.asarray(x, dtype=float)
    values = np.asarray(values, dtype=float)
    if isinstance(domain, Torus):
        xp = np.append(x, x[0] + domain.length)
        vp = np.append(values, values[0])
        spline = CubicSpline(xp, vp, bc_type="periodic")
        x0, length = x[0], domain.length
        wrap = lambda y: x0 + np.mod(np.asarray(y, dtype=float) - x0, length)
        return InitialProfile(
            u0=lambda y: spline(wrap(y)),
            du0=lambda y: spline(wrap(y), nu=1),
            descriptor="tabulated(periodic)",
        )
    spline = CubicSpline(x, values)
    return InitialProfile(
        u0=lambda y: spline(np.asarray(y, dtype=float)),
        du0=lambda y: spline(np.asarray(y, dtype=float), nu=1),
        descriptor="tabulated",
    )


@dataclass
class CharacteristicEnsemble:
    """Struct-of-arrays ensemble, shape (n_paths, n_chars) throughout.

    ``alive`` tracks the slope state: it drops on blow-up, sign-barrier exit,
    non-finite values, or a detected crossing.  Positions keep integrating
    after slope death (the position equation never reads Y), so crossing
    detection can continue past individual blow-ups.
    """

    X: np.ndarray
    Y: np.ndarray
    u_val: np.ndarray
    alive: np.ndarray
    blowup_time: np.ndarray
    dead_reason: np.ndarray
    y_sign: np.ndarray
    t: float = 0.0

    @classmethod
    def from_profile(
        cls,
        profile: InitialProfile,
        positions: Sequence[float],
        n_paths: int = 1,
        t0: float = 0.0,
    ) -> "CharacteristicEnsemble":
        pos = np.broadcast_to(np.asarray(positions, dtype=float), (n_paths, len(positions))).copy()
        y0 = profile.du0(pos)
        return cls(
            X=pos,
            Y=y0,
            u_val=profile.u0(pos),
            alive=np.ones(pos.shape, dtype=bool),
            blowup_time=np.full(pos.shape, np.nan),
            dead_reason=np.zeros(pos.shape, dtype=np.int8),
            y_sign=np.sign(y0).astype(np.int8),
            t=t0,
        )

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def n_chars(self) -> int:
        return self.X.shape[1]


def _commit(ens: CharacteristicEnsemble, x_new: np.ndarray, y_new: np.ndarray, dt: float, cap: float) -> None:
    """Apply a proposed step, handling non-finite values, caps and barriers."""
    x_bad = ~np.isfinite(x_new)
    ens.X = np.where(x_bad, ens.X, x_new)

    alive = ens.alive
    y_cand = np.where(alive, y_new, ens.Y)
    finite = np.isfinite(y_cand)
    bust = alive & (~finite | (np.abs(y_cand) > cap))
    flip = alive & finite & (ens.y_sign * y_cand < 0) & ~bust
    lost = alive & x_bad & ~bust & ~flip

    if np.any(bust):
        # 1/Y runs linearly through 0 at blow-up; interpolate its root
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            z0 = 1.0 / ens.Y
            z1 = np.where(finite & (y_cand != 0.0), 1.0 / y_cand, 0.0)
            frac = np.where(z0 != z1, z0 / (z0 - z1), 1.0)
        frac = np.clip(np.nan_to_num(frac, nan=1.0), 0.0, 1.0)
        ens.blowup_time = np.where(bust, ens.t + frac * dt, ens.blowup_time)
        ens.dead_reason = np.where(bust, REASON_BLOWUP, ens.dead_reason)
    if np.any(flip):
        ens.blowup_time = np.where(flip, ens.t + dt, ens.blowup_time)
        ens.dead_reason = np.where(flip, REASON_SIGN_FLIP, ens.dead_reason)
    if np.any(lost):
        ens.blowup_time = np.where(lost, ens.t + dt, ens.blowup_time)
        ens.dead_reason = np.where(lost, REASON_NONFINITE, ens.dead_reason)

    newly_dead = bust | flip | lost
    ens.Y = np.where(alive & ~newly_dead, y_cand, ens.Y)
    ens.alive = alive & ~newly_dead
    ens.t += dt


def step_ito(
    ens: CharacteristicEnsemble,
    basis: NoiseBasis,
    corrections: CorrectionFields,
    dW: np.ndarray,
    dt: float,
    cap: float = BLOWUP_CAP,
) -> CharacteristicEnsemble:
    """Euler-Maruyama step of the Ito-form system.

    Position drift is ``u_val + phi(X)``; slope drift is ``-Y^2 + Y psi(X)``;
    both diffusion terms are evaluated at the step start.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    basis.ensure_valid()
    with np.errstate(over="ignore", invalid="ignore"):
        s0 = basis.sum_weighted(ens.X, dW, 0)
        s1 = basis.sum_weighted(ens.X, dW, 1)
        x_new = ens.X + (ens.u_val + corrections.phi(ens.X)) * dt + s0
        y_new = ens.Y + (-ens.Y * ens.Y + ens.Y * corrections.psi(ens.X)) * dt - ens.Y * s1
    _commit(ens, x_new, y_new, dt, cap)
    return ens


def step_stratonovich_heun(
    ens: CharacteristicEnsemble,
    basis: NoiseBasis,
    dW: np.ndarray,
    dt: float,
    cap: float = BLOWUP_CAP,
) -> CharacteristicEnsemble:
    """Predictor-corrector step for the Stratonovich system.

    The drift advances by forward Euler while the noise increment is applied
    as the average of the diffusion coefficient at the step start and at an
    Euler predictor, which converges to the Stratonovich solution.  With an
    empty basis the map reduces bit-for-bit to :func:`step_ito`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    basis.ensure_valid()
    with np.errstate(over="ignore", invalid="ignore"):
        s0 = basis.sum_weighted(ens.X, dW, 0)
        s1 = basis.sum_weighted(ens.X, dW, 1)
        xp = ens.X + ens.u_val * dt + s0
        yp = ens.Y + (-ens.Y * ens.Y) * dt - ens.Y * s1
        s0p = basis.sum_weighted(xp, dW, 0)
        s1p = basis.sum_weighted(xp, dW, 1)
        x_new = ens.X + ens.u_val * dt + 0.5 * (s0 + s0p)
        y_new = ens.Y + (-ens.Y * ens.Y) * dt - 0.5 * (ens.Y * s1 + yp * s1p)
    _commit(ens, x_new, y_new, dt, cap)
    return ens


def step_wong_zakai(
    ens: CharacteristicEnsemble,
    basis: NoiseBasis,
    dW: np.ndarray,
    dt: float,
    cap: float = BLOWUP_CAP,
) -> CharacteristicEnsemble:
    """Drift/noise splitting step: Euler drift, then the frozen noise flow.

    The noise substep follows ``dx/ds = sum_k xi_k(x) dW_k`` (with the slope
    transported by the flow's linearisation) through unit pseudo-time with one
    RK4 stage.  For affine modes the substep is an affine map, so differences
    of characteristics evolve by a common multiplicative factor; crossing
    times then agree with integrated-exponential hitting times by
    construction instead of only in the small-step limit.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    basis.ensure_valid()

    def vel(x):
        return basis.sum_weighted(x, dW, 0)

    def grad(x):
        return basis.sum_weighted(x, dW, 1)

    with np.errstate(over="ignore", invalid="ignore"):
        x1 = ens.X + ens.u_val * dt
        y1 = ens.Y + (-ens.Y * ens.Y) * dt

        k1x = vel(x1)
        k1y = -grad(x1) * y1
        k2x = vel(x1 + 0.5 * k1x)
        k2y = -grad(x1 + 0.5 * k1x) * (y1 + 0.5 * k1y)
        k3x = vel(x1 + 0.5 * k2x)
        k3y = -grad(x1 + 0.5 * k2x) * (y1 + 0.5 * k2y)
        k4x = vel(x1 + k3x)
        k4y = -grad(x1 + k3x) * (y1 + k3y)

        x_new = x1 + (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0
        y_new = y1 + (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0
    _commit(ens, x_new, y_new, dt, cap)
    return ens


STEPPERS = {
    "ito": "ito",
    "heun": "heun",
    "wong_zakai": "wong_zakai",
}


def _advance(ens, basis, corrections, dW, dt, stepper, cap):
    if stepper == "ito":
        step_ito(ens, basis, corrections, dW, dt, cap)
    elif stepper == "heun":
        step_stratonovich_heun(ens, basis, dW, dt, cap)
    elif stepper == "wong_zakai":
        step_wong_zakai(ens, basis, dW, dt, cap)
    else:
        raise ValueError(f"unknown stepper {stepper!r}")


@dataclass
class EnsembleTrajectory:
    times: np.ndarray
    X: np.ndarray        # (n_records, n_paths, n_chars)
    Y: np.ndarray
    alive: np.ndarray
    u_val: np.ndarray    # (n_paths, n_chars), conserved


def _increments_3d(path_or_increments) -> np.ndarray:
    if isinstance(path_or_increments, BrownianPath):
        return path_or_increments.increments[np.newaxis]
    arr = np.asarray(path_or_increments, dtype=float)
    if arr.ndim != 3:
        raise ValueError("increments must have shape (n_paths, n_steps, n_modes)")
    return arr


def integrate_ensemble(
    ens: CharacteristicEnsemble,
    basis: NoiseBasis,
    path_or_increments,
    dt: float,
    stepper: str = "heun",
    corrections: Optional[CorrectionFields] = None,
    record_every: int = 1,
    cap: float = BLOWUP_CAP,
) -> EnsembleTrajectory:
    """Run an ensemble along its Brownian increments, recording snapshots."""
    inc = _increments_3d(path_or_increments)
    if inc.shape[0] != ens.n_paths:
        raise ValueError("path axis of the increments must match the ensemble")
    if corrections is None and stepper == "ito":
        corrections = correction_fields(basis, basis.domain.probe_grid())
    n_steps = inc.shape[1]
    record = np.zeros(n_steps + 1, dtype=bool)
    record[::record_every] = True
    record[n_steps] = True
    times = [ens.t]
    xs, ys, alive = [ens.X.copy()], [ens.Y.copy()], [ens.alive.copy()]
    for j in range(n_steps):
        _advance(ens, basis, corrections, inc[:, j, :], dt, stepper, cap)
        if record[j + 1]:
            times.append(ens.t)
            xs.append(ens.X.copy())
            ys.append(ens.Y.copy())
            alive.append(ens.alive.copy())
    return EnsembleTrajectory(
        times=np.asarray(times),
        X=np.stack(xs),
        Y=np.stack(ys),
        alive=np.stack(alive),
        u_val=ens.u_val.copy(),
    )


def exact_linear_solution(
    gamma: float,
    profile: InitialProfile,
    alpha: float,
    beta: float,
    path: BrownianPath,
    mode: int = 0,
) -> np.ndarray:
    """Closed-form characteristic for the single affine mode ``alpha x + beta``.

    Returns the position series on the path grid,

        X_t = e^{alpha W_t} (gamma + u0(gamma) I_t + beta S_t),

    where ``I_t`` is the left-endpoint sum of ``int e^{-alpha W} ds`` and
    ``S_t`` the midpoint (Stratonovich) evaluation of ``int e^{-alpha W} dW``.
    With that convention the formula solves the Stratonovich equation
    ``dX = u0(gamma) dt + (alpha X + beta) o dW`` exactly in the step limit,
    which the Heun integrator cross-validates; in the deterministic limits it
    collapses to ``gamma + u0(gamma) t`` and ``gamma + u0(gamma) t + W_t``.
    """
    w = path.cumulative()[:, mode]
    i_series = integrated_gbm(path, mode, alpha)
    mid = np.exp(-alpha * 0.5 * (w[:-1] + w[1:]))
    s_series = np.concatenate(([0.0], np.cumsum(mid * path.increments[:, mode])))
    return np.exp(alpha * w) * (gamma + profile.u0(gamma) * i_series + beta * s_series)


def steepest_negative_slope(profile_or_values, probe) -> float:
    """Largest negative difference quotient over adjacent probe points, >= 0.

    Averaging telescopes, so adjacent pairs already realise the supremum over
    all probed pairs.  For a differentiable profile this converges to
    ``max(0, -min u0')``.
    """
    x = np.asarray(probe, dtype=float)
    if callable(profile_or_values):
        u = np.asarray(profile_or_values(x), dtype=float)
    elif isinstance(profile_or_values, InitialProfile):
        u = profile_or_values.u0(x)
    else:
        u = np.asarray(profile_or_values, dtype=float)
    quotients = -np.diff(u) / np.diff(x)
    return float(max(0.0, np.max(quotients))) if quotients.size else 0.0


def first_crossing(
    ens: CharacteristicEnsemble,
    basis: NoiseBasis,
    path_or_increments,
    dt: float,
    stepper: str = "wong_zakai",
    corrections: Optional[CorrectionFields] = None,
    cap: float = BLOWUP_CAP,
) -> Union[float, np.ndarray]:
    """Earliest time adjacent characteristics swap order, path by path.

    Initial positions must be strictly increasing.  Within the step that
    brackets a sign change of an adjacent gap, the crossing instant is located
    by the root of the linear interpolant (sub-step resolution well below
    dt/10 for continuous gaps).  Returns ``nan`` where no crossing occurs
    before the horizon; scalar for a single :class:`BrownianPath` input.
    """
    inc = _increments_3d(path_or_increments)
    single = isinstance(path_or_increments, BrownianPath)
    if ens.n_chars < 2:
        raise ValueError("need at least two characteristics")
    if np.any(np.diff(ens.X, axis=1) <= 0):
        raise ValueError("initial positions must be strictly increasing")
    if corrections is None and stepper == "ito":
        corrections = correction_fields(basis, basis.domain.probe_grid())

    n_paths, n_steps = inc.shape[0], inc.shape[1]
    tau = np.full(n_paths, np.nan)
    pending = np.ones(n_paths, dtype=bool)
    gap_prev = np.diff(ens.X, axis=1)
    for j in range(n_steps):
        t_prev = ens.t
        _advance(ens, basis, corrections, inc[:, j, :], dt, stepper, cap)
        gap_new = np.diff(ens.X, axis=1)
        hit = pending & np.any(gap_new <= 0.0, axis=1)
        if np.any(hit):
            for p in np.nonzero(hit)[0]:
                pairs = np.nonzero(gap_new[p] <= 0.0)[0]
                # root of the linear interpolant per flipped pair; keep the earliest
                g0 = gap_prev[p, pairs]
                g1 = gap_new[p, pairs]
                frac = np.where(g0 != g1, g0 / (g0 - g1), 1.0)
                tau[p] = t_prev + float(np.min(np.clip(frac, 0.0, 1.0))) * dt
                cross_pair = pairs[int(np.argmin(np.clip(frac, 0.0, 1.0)))]
                for c in (cross_pair, cross_pair + 1):
                    if ens.alive[p, c]:
                        ens.alive[p, c] = False
                        ens.dead_reason[p, c] = REASON_CROSSING
            pending &= ~hit
            if not np.any(pending):
                break
        gap_prev = gap_new
    return float(tau[0]) if single else tau


def advection_residual(times, positions, u_initial, sampler) -> float:
    """Max deviation of the field sampled along characteristics from ``u_initial``.

    ``sampler(i, x)`` must return field values at snapshot index ``i`` and
    positions ``x`` (the field run and the characteristics must share the
    Brownian path).  The residual converges to zero under grid and step
    refinement at the schemes' order.
    """
    worst = 0.0
    for i in range(len(times)):
        u_here = sampler(i, np.asarray(positions[i], dtype=float))
        worst = max(worst, float(np.max(np.abs(u_here - u_initial))))
    return worst


def write_trajectory_csv(fh, traj: EnsembleTrajectory, path_indices=None) -> None:
    """CSV dump with columns t, path_index, char_index, X, Y, u_val, alive."""
    fh.write("t,path_index,char_index,X,Y,u_val,alive\n")
    n_rec, n_paths, n_chars = traj.X.shape
    idx = range(n_paths) if path_indices is None else path_indices
    for i in range(n_rec):
        for p in idx:
            for c in range(n_chars):
                fh.write(
                    f"{traj.times[i]:.17g},{p},{c},{traj.X[i, p, c]:.17g},"
                    f"{traj.Y[i, p, c]:.17g},{traj.u_val[p, c]:.17g},{int(traj.alive[i, p, c])}\n"
                )
