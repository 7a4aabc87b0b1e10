"""Shock-curve extraction and the stochastic shock-speed equation.

A single admissible discontinuity moves with the mean of its side states plus
the transported noise evaluated at the shock position:

    ds = 1/2 (u_- + u_+) dt + sum_k xi_k(s) o dW_k.

``detect_shock`` reads the curve off grid snapshots (sub-cell position by mass
balance against the sharp two-state profile, side states from plateau
averages clear of the numerical shock layer), and ``integrate_srh`` produces
the independently integrated curve on the same Brownian path so the two can
be compared by ``srh_residual``.  Verification targets single-shock
Riemann-type windows; merging shocks are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .field import FieldTrajectory
from .noise import NoiseBasis
from .paths import BrownianPath

# plateau sampling: three cells starting three cells away from the interface,
# clear of the ~2-cell Godunov shock layer
_PLATEAU_OFFSETS = np.array([2, 3, 4])
_MASS_HALF_WIDTH = 3


@dataclass
class ShockCurve:
    """Discontinuity path with side states; positions live on the torus."""

    times: np.ndarray
    positions: np.ndarray
    u_minus: np.ndarray
    u_plus: np.ndarray
    length: float

    def __len__(self) -> int:
        return self.times.size


def unwrap_positions(positions: np.ndarray, length: float) -> np.ndarray:
    """Lift torus positions to a continuous real-valued path."""
    pos = np.asarray(positions, dtype=float)
    out = pos.copy()
    for i in range(1, out.size):
        raw = pos[i] - pos[i - 1]
        out[i] = out[i - 1] + raw - length * np.round(raw / length)
    return out


def circle_distance(a, b, length: float):
    d = np.abs(np.asarray(a) - np.asarray(b)) % length
    return np.minimum(d, length - d)


def _detect_single(u: np.ndarray, dx: float, threshold: float):
    n = u.size
    jumps = np.roll(u, -1) - u  # jump at the interface right of each cell
    i = int(np.argmin(jumps))
    if jumps[i] > -threshold:
        return None
    u_m = float(np.mean(u[(i - _PLATEAU_OFFSETS) % n]))
    u_p = float(np.mean(u[(i + 1 + _PLATEAU_OFFSETS) % n]))
    if not u_m > u_p:
        raise ValueError("detected jump violates the admissibility ordering u_- > u_+")
    # mass balance in a window around the interface against the sharp profile
    w = _MASS_HALF_WIDTH
    cells = (i + np.arange(-w + 1, w + 1)) % n
    x_lo = (i - w + 1) * dx
    x_hi = (i + w + 1) * dx
    mass = dx * float(np.sum(u[cells]))
    s = x_lo + (mass - u_p * (x_hi - x_lo)) / (u_m - u_p)
    return s % (n * dx), u_m, u_p


def detect_shock(traj: FieldTrajectory, threshold: float = 0.25) -> ShockCurve:
    """Locate the dominant down-jump in every snapshot that has one.

    Snapshots whose steepest negative interface jump stays above the
    threshold contribute nothing (pre-shock fields).  The admissibility
    ordering of the plateau states is asserted at every detection.
    """
    n = traj.snapshots.shape[1]
    dx = traj.length / n
    times, pos, um, up = [], [], [], []
    for t, u in zip(traj.times, traj.snapshots):
        found = _detect_single(np.asarray(u, dtype=float), dx, threshold)
        if found is None:
            continue
        times.append(float(t))
        pos.append(found[0])
        um.append(found[1])
        up.append(found[2])
    return ShockCurve(
        times=np.asarray(times),
        positions=np.asarray(pos),
        u_minus=np.asarray(um),
        u_plus=np.asarray(up),
        length=traj.length,
    )


def constant_states(u_minus: float, u_plus: float) -> Callable:
    def provider(t, s):
        return u_minus, u_plus

    return provider


def states_from_curve(curve: ShockCurve) -> Callable:
    """Side-state provider interpolating a detected curve linearly in time."""

    def provider(t, s):
        um = float(np.interp(t, curve.times, curve.u_minus))
        up = float(np.interp(t, curve.times, curve.u_plus))
        return um, up

    return provider


def integrate_srh(
    s0: float,
    states: Callable,
    basis: NoiseBasis,
    path: BrownianPath,
    length: float,
) -> ShockCurve:
    """Heun (Stratonovich) integration of the shock-speed equation.

    The drift is the running mean of the side states supplied by ``states``;
    the noise increment is applied predictor-corrector style so the curve is
    consistent with the transported field on the same Brownian path.
    """
    if basis.n_modes:
        basis.ensure_valid()
    times = path.grid.times()
    dt = path.grid.dt
    s = float(s0)
    pos = np.empty(times.size)
    um = np.empty(times.size)
    up = np.empty(times.size)
    pos[0] = s % length
    um[0], up[0] = states(times[0], s)
    for j in range(path.grid.n_steps):
        u_m, u_p = states(times[j], s)
        drift = 0.5 * (u_m + u_p)
        dw = path.increments[j]
        s_arr = np.asarray(s, dtype=float)
        g0 = float(basis.sum_weighted(s_arr, dw, 0)) if basis.n_modes else 0.0
        pred = s + drift * dt + g0
        g1 = float(basis.sum_weighted(np.asarray(pred), dw, 0)) if basis.n_modes else 0.0
        s = s + drift * dt + 0.5 * (g0 + g1)
        pos[j + 1] = s % length
        um[j + 1], up[j + 1] = states(times[j + 1], s)
    return ShockCurve(times=times, positions=pos, u_minus=um, u_plus=up, length=length)


def srh_residual(detected: ShockCurve, integrated: ShockCurve) -> float:
    """Sup distance on the torus between the two curves on common times.

    The integrated curve is resampled onto the detected times by linear
    interpolation; non-overlapping time ranges are an error.
    """
    if len(detected) == 0 or len(integrated) == 0:
        raise ValueError("cannot compare empty shock curves")
    lo = max(detected.times[0], integrated.times[0])
    hi = min(detected.times[-1], integrated.times[-1])
    if hi < lo:
        raise ValueError("shock curves cover disjoint time ranges")
    sel = (detected.times >= lo) & (detected.times <= hi)
    ref = np.interp(
        detected.times[sel],
        integrated.times,
        unwrap_positions(integrated.positions, integrated.length),
    )
    det = unwrap_positions(detected.positions, detected.length)[sel]
    return float(np.max(circle_distance(det, ref, detected.length)))


def write_shock_csv(fh, curve: ShockCurve) -> None:
    fh.write("t,s,u_minus,u_plus\n")
    for row in zip(curve.times, curve.positions, curve.u_minus, curve.u_plus):
        fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
