"""Monte Carlo experiments: slope-moment envelopes and crossing statistics.

The slope experiment integrates one characteristic per Brownian path and
tracks the censoring-aware mean of the slope against the closed-form
envelope obtained by dropping the variance term from the moment equation:

    B(t) = -sigma e^{Ct/2} / (1 - (2 sigma / C)(e^{Ct/2} - 1)),   C != 0,
    B(t) = 1 / (t - 1/sigma),                                     C  = 0,

with ``C`` the probe-grid minimum of ``2 psi``.  The envelope reaches minus
infinity at a finite ``t_star`` exactly when ``-sigma < C/2``.  For
nonnegative initial slopes the mean is bounded instead by the logistic
ceiling ``m' = -m^2 + D m`` with ``D`` the probe-grid maximum of ``2 psi``.

Censoring convention: a path leaves the running mean at its blow-up flag and
is counted; a lower-bound mean that pins censored paths at ``-cap`` is
reported alongside, so the envelope comparison is meaningful under either
reading of the expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .characteristics import (
    BLOWUP_CAP,
    CharacteristicEnsemble,
    InitialProfile,
    first_crossing,
    integrate_ensemble,
    steepest_negative_slope,
)
from .noise import CorrectionFields, LinearMode, NoiseBasis, correction_fields
from .paths import TimeGrid, hitting_times, integrated_exponential, sample_increment_block


@dataclass
class McEstimate:
    """Censoring-aware running moments of a scalar series over paths.

    ``mean``/``m2`` are computed over the paths still alive at each time;
    ``n_alive`` records how many that is.  Standard errors use the alive
    count; the lower-bound mean charges every censored path with ``-cap``.
    """

    times: np.ndarray
    n_paths: int
    n_alive: np.ndarray
    mean: np.ndarray
    m2: np.ndarray
    cap: float = BLOWUP_CAP

    @property
    def censored(self) -> np.ndarray:
        return self.n_paths - self.n_alive

    def variance(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.n_alive > 1, self.m2 / np.maximum(self.n_alive - 1, 1), np.nan)

    def stderr(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sqrt(self.variance() / np.maximum(self.n_alive, 1))

    def lower_bound_mean(self) -> np.ndarray:
        total = self.mean * self.n_alive + (-self.cap) * self.censored
        return total / self.n_paths


def estimate_from_samples(times, values, alive, cap: float = BLOWUP_CAP) -> McEstimate:
    """Reduce per-path samples (n_records, n_paths) to an estimate."""
    values = np.asarray(values, dtype=float)
    alive = np.asarray(alive, dtype=bool)
    n_rec, n_paths = values.shape
    n_alive = alive.sum(axis=1)
    masked = np.where(alive, values, 0.0)
    with np.errstate(invalid="ignore"):
        mean = masked.sum(axis=1) / np.maximum(n_alive, 1)
    dev = np.where(alive, values - mean[:, None], 0.0)
    m2 = np.sum(dev * dev, axis=1)
    mean = np.where(n_alive > 0, mean, np.nan)
    return McEstimate(
        times=np.asarray(times, dtype=float),
        n_paths=n_paths,
        n_alive=n_alive.astype(np.int64),
        mean=mean,
        m2=m2,
        cap=cap,
    )


def aggregate(partials: Sequence[McEstimate]) -> McEstimate:
    """Pooled merge of worker estimates (associative and commutative).

    Uses the pairwise update for pooled means and squared deviations, so the
    result is independent of merge order to roundoff.
    """
    if not partials:
        raise ValueError("nothing to aggregate")
    out = partials[0]
    times = out.times
    n_paths, n_alive = out.n_paths, out.n_alive.copy()
    mean, m2 = np.nan_to_num(out.mean, nan=0.0).copy(), out.m2.copy()
    for other in partials[1:]:
        if not np.array_equal(other.times, times):
            raise ValueError("cannot aggregate estimates on different time grids")
        if other.cap != out.cap:
            raise ValueError("cannot aggregate estimates with different caps")
        nb = other.n_alive
        mb = np.nan_to_num(other.mean, nan=0.0)
        na = n_alive
        n = na + nb
        delta = mb - mean
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(n > 0, nb / np.maximum(n, 1), 0.0)
            mean = mean + delta * frac
            m2 = m2 + other.m2 + delta * delta * (na * nb) / np.maximum(n, 1)
        n_alive = n
        n_paths += other.n_paths
    return McEstimate(
        times=times,
        n_paths=n_paths,
        n_alive=n_alive,
        mean=np.where(n_alive > 0, mean, np.nan),
        m2=m2,
        cap=out.cap,
    )


@dataclass(frozen=True)
class BoundCurve:
    """Closed-form envelope for the slope mean started at ``-sigma < 0``."""

    sigma: float
    c_bound: float

    @property
    def blows_up(self) -> bool:
        return -self.sigma < self.c_bound / 2.0

    @property
    def t_star(self) -> float:
        c, s = self.c_bound, self.sigma
        if not self.blows_up:
            return math.inf
        if c == 0.0:
            return 1.0 / s
        return (2.0 / c) * math.log1p(c / (2.0 * s))

    def value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        c, s = self.c_bound, self.sigma
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if c == 0.0:
                out = 1.0 / (t - 1.0 / s)
            else:
                e = np.exp(0.5 * c * t)
                out = -s * e / (1.0 - (2.0 * s / c) * (e - 1.0))
        return np.where(t < self.t_star, out, np.nan)


def logistic_ceiling(m0: float, d_bound: float, t) -> np.ndarray:
    """Solution of ``m' = -m^2 + D m`` with ``m(0) = m0 > 0``."""
    t = np.asarray(t, dtype=float)
    if d_bound == 0.0:
        return m0 / (1.0 + m0 * t)
    e = np.exp(-d_bound * t)
    return d_bound / (1.0 + (d_bound / m0 - 1.0) * e)


@dataclass
class SlopeExperimentResult:
    estimate: McEstimate
    bound: Optional[BoundCurve]
    ceiling: Optional[np.ndarray]
    violations: int
    checked: int
    censor_limit_time: float
    divergence_time: float
    n_blowups: int


def slope_moment_partial(
    basis: NoiseBasis,
    profile: InitialProfile,
    x0: float,
    path_indices: Sequence[int],
    grid: TimeGrid,
    master_seed: int,
    corrections: Optional[CorrectionFields] = None,
    stepper: str = "ito",
    record_every: int = 1,
    cap: float = BLOWUP_CAP,
    chunk_size: int = 256,
) -> McEstimate:
    """Slope-moment estimate over a subset of path indices (worker unit)."""
    if corrections is None:
        corrections = correction_fields(basis, basis.domain.probe_grid())
    partials = []
    indices = list(path_indices)
    for lo in range(0, len(indices), chunk_size):
        chunk = indices[lo : lo + chunk_size]
        block = sample_increment_block(master_seed, chunk, grid, basis.n_modes)
        ens = CharacteristicEnsemble.from_profile(profile, [x0], n_paths=len(chunk))
        traj = integrate_ensemble(
            ens, basis, block, grid.dt, stepper, corrections, record_every=record_every, cap=cap
        )
        partials.append(estimate_from_samples(traj.times, traj.Y[:, :, 0], traj.alive[:, :, 0], cap))
    return aggregate(partials)


def evaluate_slope_estimate(
    est: McEstimate,
    y0: float,
    corrections: CorrectionFields,
    dt: float,
    cap: float = BLOWUP_CAP,
    censor_fraction: float = 0.01,
) -> SlopeExperimentResult:
    """Envelope/ceiling comparison of an aggregated slope estimate."""
    grid_dt = dt
    censored_frac = est.censored / est.n_paths
    over_limit = np.nonzero(censored_frac > censor_fraction)[0]
    censor_time = float(est.times[over_limit[0]]) if over_limit.size else math.inf

    lower = est.lower_bound_mean()
    diverged = np.nonzero(lower < -cap / 10.0)[0]
    divergence_time = float(est.times[diverged[0]]) if diverged.size else math.inf

    bound = None
    ceiling = None
    violations = 0
    checked = 0
    if y0 < 0:
        bound = BoundCurve(sigma=-y0, c_bound=corrections.c_bound)
        env = bound.value(est.times)
        ok = (
            (est.times < bound.t_star)
            & (censored_frac <= censor_fraction)
            & np.isfinite(env)
            & (est.n_alive > 1)
        )
        # drift-integrator bias allowance: the Euler slope sits O(dt) above
        # the exact Riccati flow, with local truncation ~ dt^2 |Y|^3 amplified
        # along the envelope; without it a deterministic case (zero standard
        # error) would flag spurious violations
        allowance = grid_dt * (env[ok] ** 4 / y0**2 + env[ok] ** 2)
        slack = est.mean[ok] - (env[ok] + 3.0 * est.stderr()[ok] + allowance)
        violations = int(np.count_nonzero(slack > 0))
        checked = int(np.count_nonzero(ok))
    else:
        ceiling = logistic_ceiling(max(y0, 1e-300), corrections.d_bound, est.times)
        ok = est.n_alive > 1
        allowance = grid_dt * (ceiling[ok] ** 2 + np.square(ceiling[ok] ** 2) / max(y0**2, 1e-12))
        slack = est.mean[ok] - (ceiling[ok] + 3.0 * est.stderr()[ok] + allowance)
        violations = int(np.count_nonzero(slack > 0))
        checked = int(np.count_nonzero(ok))

    return SlopeExperimentResult(
        estimate=est,
        bound=bound,
        ceiling=ceiling,
        violations=violations,
        checked=checked,
        censor_limit_time=censor_time,
        divergence_time=divergence_time,
        n_blowups=int(est.censored[-1]),
    )


def expected_slope_experiment(
    basis: NoiseBasis,
    profile: InitialProfile,
    x0: float,
    path_indices: Sequence[int],
    grid: TimeGrid,
    master_seed: int,
    corrections: Optional[CorrectionFields] = None,
    stepper: str = "ito",
    record_every: int = 1,
    cap: float = BLOWUP_CAP,
    censor_fraction: float = 0.01,
    chunk_size: int = 256,
) -> SlopeExperimentResult:
    """Slope moments along one characteristic, checked against the envelope.

    Negative initial slope: the censoring-aware mean must stay below
    ``B(t) + 3 SE`` (plus a drift-bias allowance) at every recorded time
    before the censored fraction passes ``censor_fraction`` and before the
    envelope's own pole.  Nonnegative initial slope: the mean is checked
    against the logistic ceiling driven by the upper bound constant.
    """
    if corrections is None:
        corrections = correction_fields(basis, basis.domain.probe_grid())
    est = slope_moment_partial(
        basis,
        profile,
        x0,
        path_indices,
        grid,
        master_seed,
        corrections,
        stepper,
        record_every,
        cap,
        chunk_size,
    )
    y0 = float(profile.du0(np.asarray(x0, dtype=float)))
    return evaluate_slope_estimate(est, y0, corrections, grid.dt, cap, censor_fraction)


def _require_single_linear(basis: NoiseBasis) -> LinearMode:
    if basis.n_modes != 1 or not isinstance(basis.modes[0], LinearMode):
        raise ValueError("crossing experiment needs exactly one affine mode")
    return basis.modes[0]


@dataclass
class CrossingExperimentResult:
    tau_cross: np.ndarray
    tau_hit: np.ndarray
    max_discrepancy: float
    agreement_fraction: float
    crossed_fraction: dict
    theta: float


def crossing_time_experiment(
    basis: NoiseBasis,
    profile: InitialProfile,
    fan: Sequence[float],
    path_indices: Sequence[int],
    grid: TimeGrid,
    master_seed: int,
    horizons: Sequence[float] = (),
    tolerance_steps: float = 2.0,
    stepper: str = "wong_zakai",
) -> CrossingExperimentResult:
    """Crossing times of a characteristic fan vs hitting times of the
    integrated exponential, path by path on common Brownian paths.

    Requires a strictly decreasing stretch in the profile (``theta > 0``).
    ``crossed_fraction`` reports the empirical fraction crossed by each
    requested horizon; fractions are monotone in the horizon by construction.
    """
    mode = _require_single_linear(basis)
    probe = np.linspace(min(fan), max(fan), 512)
    theta = steepest_negative_slope(profile, probe)
    if theta <= 0:
        raise ValueError("profile has no negative slope across the fan")

    indices = list(path_indices)
    block = sample_increment_block(master_seed, indices, grid, basis.n_modes)
    ens = CharacteristicEnsemble.from_profile(profile, list(fan), n_paths=len(indices))
    tau_cross = first_crossing(ens, basis, block, grid.dt, stepper=stepper)

    i_series = integrated_exponential(block[:, :, 0], grid.dt, mode.alpha)
    tau_hit = hitting_times(grid.times(), i_series, 1.0 / theta)

    both = ~np.isnan(tau_cross) & ~np.isnan(tau_hit)
    consistent = np.isnan(tau_cross) == np.isnan(tau_hit)
    disc = np.abs(tau_cross[both] - tau_hit[both])
    max_disc = float(np.max(disc)) if disc.size else 0.0
    within = np.count_nonzero(disc <= tolerance_steps * grid.dt)
    agree = (within + np.count_nonzero(consistent & ~both)) / len(indices)

    fractions = {
        float(T): float(np.mean(np.nan_to_num(tau_cross, nan=math.inf) <= T)) for T in horizons
    }
    return CrossingExperimentResult(
        tau_cross=tau_cross,
        tau_hit=tau_hit,
        max_discrepancy=max_disc,
        agreement_fraction=float(agree),
        crossed_fraction=fractions,
        theta=theta,
    )


def write_estimate_csv(fh, est: McEstimate) -> None:
    fh.write("t,n_alive,censored,mean,variance,stderr,lower_bound_mean\n")
    var = est.variance()
    se = est.stderr()
    low = est.lower_bound_mean()
    for i, t in enumerate(est.times):
        fh.write(
            f"{t:.17g},{est.n_alive[i]},{est.censored[i]},{est.mean[i]:.17g},"
            f"{var[i]:.17g},{se[i]:.17g},{low[i]:.17g}\n"
        )
