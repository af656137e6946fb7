"""Susceptible-infected dynamic model with a trend-driven infection rate.

The adult population is split into susceptibles Z(t) and infected Y(t).
Demographic flows (entrants, background mortality, ageing out at 50, net
migration) come from an annual schedule; the infection rate r(t) follows a
log-scale trend law updated once per year.  Integration is classical RK4
on a fixed sub-annual step, with r held constant within each year and the
end-of-year prevalence feeding the next year's rate update.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ParameterRejection",
    "DemographicSchedule",
    "RTrendParams",
    "EpidemicState",
    "Trajectory",
    "rtrend_step",
    "simulate",
    "simulate_batch",
    "PARAM_NAMES",
    "SEED_PREVALENCE",
    "DEFAULT_STEP",
]

#: Parameter ordering used by array-based samplers.
PARAM_NAMES = ("t0", "t1", "r0", "beta0", "beta1", "beta2", "beta3", "alpha")

#: Prevalence at the epidemic start year (0.0025% of the adult population).
SEED_PREVALENCE = 2.5e-5

#: Integration step in years.
DEFAULT_STEP = 0.1


class ParameterRejection(Exception):
    """Raised when a parameter draw produces non-finite dynamics.

    The sampler treats this as likelihood zero rather than a crash.
    """


@dataclass(frozen=True)
class RTrendParams:
    """Dynamic-model parameter vector.

    t0      epidemic start year (prevalence seeded there)
    t1      onset year of the stabilisation term
    r0      infection rate at t0
    beta0   stationary infection rate
    beta1   convergence rate toward beta0
    beta2   prevalence coefficient
    beta3   stabilisation coefficient
    alpha   clinic-bias offset on the probit scale
    """

    t0: float
    t1: float
    r0: float
    beta0: float
    beta1: float
    beta2: float
    beta3: float
    alpha: float = 0.0

    def __post_init__(self) -> None:
        if not self.t0 < self.t1:
            raise ValueError(f"require t0 < t1, got t0={self.t0}, t1={self.t1}")
        if self.r0 < 0:
            raise ValueError(f"require r0 >= 0, got {self.r0}")
        if self.beta0 <= 0:
            raise ValueError(f"require beta0 > 0, got {self.beta0}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "RTrendParams":
        return cls(**dict(zip(PARAM_NAMES, map(float, theta))))


@dataclass(frozen=True)
class DemographicSchedule:
    """Annual demographic inputs over a contiguous span of years.

    entrants are counts per year; all other columns are per-year rates.
    hiv_mortality is the death rate applied to the infected compartment,
    kept as a per-year schedule so a time-varying hook stays available.
    """

    years: np.ndarray
    entrants: np.ndarray
    mu: np.ndarray
    a50: np.ndarray
    migration: np.ndarray
    hiv_mortality: np.ndarray
    initial_population: float

    def __post_init__(self) -> None:
        n = len(self.years)
        for name in ("entrants", "mu", "a50", "migration", "hiv_mortality"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise ValueError(f"{name} length {len(arr)} != years length {n}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            if name != "migration" and np.any(arr < 0):
                raise ValueError(f"{name} must be non-negative")
        if np.any(np.diff(self.years) != 1):
            raise ValueError("years must be consecutive")
        if self.initial_population <= 0:
            raise ValueError("initial_population must be positive")

    @property
    def start_year(self) -> int:
        return int(self.years[0])

    @property
    def end_year(self) -> int:
        return int(self.years[-1])

    def covers(self, t_start: float, t_end: float) -> bool:
        return self.start_year <= math.floor(t_start) and t_end <= self.end_year

    def index(self, year: int) -> int:
        return int(year) - self.start_year

    @classmethod
    def flat(
        cls,
        start_year: int,
        end_year: int,
        *,
        initial_population: float = 1e6,
        entrants_rate: float = 0.04,
        mu: float = 0.012,
        a50: float = 1.0 / 35.0,
        migration: float = 0.0,
        hiv_mortality: float = 0.1,
    ) -> "DemographicSchedule":
        """Built-in constant schedule, roughly stationary absent HIV."""
        years = np.arange(start_year, end_year + 1)
        n = len(years)
        return cls(
            years=years,
            entrants=np.full(n, entrants_rate * initial_population),
            mu=np.full(n, float(mu)),
            a50=np.full(n, float(a50)),
            migration=np.full(n, float(migration)),
            hiv_mortality=np.full(n, float(hiv_mortality)),
            initial_population=float(initial_population),
        )

    @classmethod
    def from_csv(
        cls,
        path: str,
        *,
        initial_population: float,
        hiv_mortality: float = 0.1,
    ) -> "DemographicSchedule":
        """Load `year,entrants,mu,a50,migration`; interpolate missing years."""
        rows: dict[int, tuple[float, float, float, float]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"year", "entrants", "mu", "a50", "migration"}
            if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
                raise ValueError(
                    f"{path}: expected columns {sorted(expected)}, got {reader.fieldnames}"
                )
            for row in reader:
                year = int(row["year"])
                rows[year] = (
                    float(row["entrants"]),
                    float(row["mu"]),
                    float(row["a50"]),
                    float(row["migration"]),
                )
        if not rows:
            raise ValueError(f"{path}: no schedule rows")
        given = np.array(sorted(rows), dtype=int)
        years = np.arange(given[0], given[-1] + 1)
        cols = np.array([rows[y] for y in given], dtype=float)
        interp = np.column_stack(
            [np.interp(years, given, cols[:, j]) for j in range(4)]
        )
        return cls(
            years=years,
            entrants=interp[:, 0],
            mu=interp[:, 1],
            a50=interp[:, 2],
            migration=interp[:, 3],
            hiv_mortality=np.full(len(years), float(hiv_mortality)),
            initial_population=float(initial_population),
        )


@dataclass
class EpidemicState:
    """Compartment sizes on the sub-annual integration grid."""

    time_grid: np.ndarray
    susceptible: np.ndarray
    infected: np.ndarray
    clamped: bool = False

    @property
    def prevalence(self) -> np.ndarray:
        total = self.susceptible + self.infected
        return np.where(total > 0, self.infected / np.maximum(total, 1e-300), 0.0)


@dataclass
class Trajectory:
    """Annual model outputs.

    prevalence     infected fraction of adults at the start of each year
    incidence      new infections per susceptible per year (instantaneous)
    hiv_mortality  HIV deaths per adult per year (instantaneous)
    """

    years: np.ndarray
    prevalence: np.ndarray
    incidence: np.ndarray
    hiv_mortality: np.ndarray
    clamped: bool = False

    def probit_prevalence(self) -> np.ndarray:
        from scipy.special import ndtri

        return ndtri(np.clip(self.prevalence, 1e-12, 1.0 - 1e-12))

    def at_years(self, years: np.ndarray) -> np.ndarray:
        """Prevalence at the requested years; raises if any are missing."""
        idx = np.searchsorted(self.years, years)
        ok = (idx < len(self.years)) & (self.years[np.minimum(idx, len(self.years) - 1)] == years)
        if not np.all(ok):
            missing = np.asarray(years)[~ok]
            raise ValueError(f"trajectory does not cover years {missing.tolist()}")
        return self.prevalence[idx]


def rtrend_step(
    r_t: float,
    rho_t: float,
    rho_next: float,
    t: float,
    params: RTrendParams,
) -> float:
    """One annual update of the infection rate.

    log r(t+1) - log r(t) = b1*(b0 - r(t)) + b2*rho(t) + b3*gamma(t) with
    gamma(t) = (rho(t+1) - rho(t)) * (t - t1)+ / rho(t).  Implemented
    multiplicatively so r(t)=0 stays 0 without touching log(0).
    """
    tail = max(t - params.t1, 0.0)
    gamma = (rho_next - rho_t) * tail / rho_t if tail > 0.0 else 0.0
    log_change = (
        params.beta1 * (params.beta0 - r_t)
        + params.beta2 * rho_t
        + params.beta3 * gamma
    )
    r_next = r_t * math.exp(log_change)
    if not math.isfinite(r_next):
        raise ParameterRejection(
            f"infection-rate update overflowed at t={t} (log change {log_change:.3g})"
        )
    return r_next


def simulate(
    params: RTrendParams,
    demog: DemographicSchedule,
    t_end: int,
    *,
    dt: float = DEFAULT_STEP,
    seed_prevalence: float = SEED_PREVALENCE,
) -> tuple[EpidemicState, Trajectory]:
    """Integrate the SI system from the seeded state at t0 to t_end.

    The epidemic is seeded at the lattice point nearest t0 with prevalence
    ``seed_prevalence``; r is constant within each calendar year and updated
    at year boundaries from the realised within-year prevalence change.
    Negative compartments are clamped to zero and flagged; non-finite state
    raises ParameterRejection.
    """
    prev, inc, mort, clamped, rejected, state = _integrate(
        params.as_array()[None, :],
        demog,
        t_end,
        dt=dt,
        seed_prevalence=seed_prevalence,
        keep_state=True,
    )
    if rejected[0]:
        raise ParameterRejection(
            "dynamics became non-finite (infection-rate overflow or exploding state)"
        )
    years = np.arange(int(math.ceil(params.t0 - 1e-9)), t_end + 1)
    traj = Trajectory(
        years=years,
        prevalence=prev[0],
        incidence=inc[0],
        hiv_mortality=mort[0],
        clamped=bool(clamped[0]),
    )
    return state, traj


def simulate_batch(
    theta: np.ndarray,
    demog: DemographicSchedule,
    t_end: int,
    *,
    dt: float = DEFAULT_STEP,
    seed_prevalence: float = SEED_PREVALENCE,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised integration of many parameter draws at once.

    theta has one row per draw in PARAM_NAMES order.  Returns annual
    (prevalence, incidence, hiv_mortality, clamped, rejected) arrays where
    the year axis runs ceil(min t0) .. t_end per draw, padded with zeros
    before each draw's own start year.  Row i reproduces ``simulate`` on
    theta[i] exactly.  Draws whose dynamics go non-finite are frozen and
    flagged in ``rejected`` instead of raising, so one bad draw cannot
    poison a batch.
    """
    prev, inc, mort, clamped, rejected, _ = _integrate(
        theta, demog, t_end, dt=dt, seed_prevalence=seed_prevalence, keep_state=False
    )
    return prev, inc, mort, clamped, rejected


def _integrate(
    theta: np.ndarray,
    demog: DemographicSchedule,
    t_end: int,
    *,
    dt: float,
    seed_prevalence: float,
    keep_state: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, EpidemicState | None]:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    n_draws = theta.shape[0]
    t0 = theta[:, 0]
    t1 = theta[:, 1]
    r0 = theta[:, 2]
    b0, b1, b2, b3 = theta[:, 3], theta[:, 4], theta[:, 5], theta[:, 6]

    spy = int(round(1.0 / dt))
    if abs(spy * dt - 1.0) > 1e-9:
        raise ValueError(f"dt={dt} must divide one year evenly")
    if not np.all(t0 < t_end):
        raise ValueError("every t0 must precede t_end")
    if not demog.covers(float(np.min(t0)), t_end):
        raise ValueError(
            f"schedule spans [{demog.start_year}, {demog.end_year}] but the run "
            f"needs [{np.min(t0):.2f}, {t_end}]"
        )

    seed_idx = np.round(t0 * spy).astype(np.int64)
    i_start = int(np.min(seed_idx))
    i_end = t_end * spy
    n_steps = i_end - i_start

    N0 = demog.initial_population
    Z = np.full(n_draws, N0, dtype=float)
    Y = np.zeros(n_draws, dtype=float)
    r = r0.copy()
    clamped = np.zeros(n_draws, dtype=bool)

    first_out_year = int(math.ceil(np.min(t0) - 1e-9))
    out_years = np.arange(first_out_year, t_end + 1)
    n_out = len(out_years)
    prev_out = np.zeros((n_draws, n_out))
    inc_out = np.zeros((n_draws, n_out))
    mort_out = np.zeros((n_draws, n_out))

    if keep_state:
        grid = (np.arange(i_start, i_end + 1)) * dt
        Z_hist = np.zeros((n_draws, n_steps + 1))
        Y_hist = np.zeros((n_draws, n_steps + 1))

    # Prevalence at the start of the year being integrated; NaN marks
    # "no usable value yet" (pre-seed), which skips the rate update.
    rho_year_start = np.full(n_draws, np.nan)

    for j in range(n_steps + 1):
        i_abs = i_start + j

        seeding = seed_idx == i_abs
        if np.any(seeding):
            Y[seeding] = seed_prevalence * N0
            Z[seeding] = N0 - seed_prevalence * N0

        total = Z + Y
        rho = np.where(total > 0, Y / np.maximum(total, 1e-300), 0.0)
        active = seed_idx <= i_abs

        if keep_state:
            Z_hist[:, j] = Z
            Y_hist[:, j] = Y

        at_year = i_abs % spy == 0
        year = i_abs // spy
        if at_year:
            # Annual rate update from the completed year's prevalence path.
            updatable = active & np.isfinite(rho_year_start) & (rho_year_start > 0)
            if np.any(updatable):
                tail = np.maximum((year - 1) - t1[updatable], 0.0)
                gamma = np.where(
                    tail > 0,
                    (rho[updatable] - rho_year_start[updatable])
                    * tail
                    / rho_year_start[updatable],
                    0.0,
                )
                log_change = (
                    b1[updatable] * (b0[updatable] - r[updatable])
                    + b2[updatable] * rho_year_start[updatable]
                    + b3[updatable] * gamma
                )
                r_new = r[updatable] * np.exp(log_change)
                if not np.all(np.isfinite(r_new)):
                    raise ParameterRejection(
                        "infection-rate update overflowed during batch simulation"
                    )
                r[updatable] = r_new
            rho_year_start = np.where(active, rho, np.nan)

            if year >= first_out_year:
                k = year - first_out_year
                hmr = demog.hiv_mortality[demog.index(min(year, demog.end_year))]
                prev_out[:, k] = np.where(active, rho, 0.0)
                inc_out[:, k] = np.where(active, r * rho, 0.0)
                mort_out[:, k] = np.where(active, hmr * rho, 0.0)

        if j == n_steps:
            break

        di = demog.index(year)
        E = demog.entrants[di]
        mu = demog.mu[di]
        a50 = demog.a50[di]
        M = demog.migration[di]
        hmr = demog.hiv_mortality[di]

        def rhs(Zs: np.ndarray, Ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            tot = Zs + Ys
            rho_s = np.clip(
                np.where(tot > 0, Ys / np.maximum(tot, 1e-300), 0.0), 0.0, 1.0
            )
            infections = r * rho_s * Zs
            dZ = E - infections - mu * Zs - a50 * Zs + M * Zs
            dY = infections - hmr * Ys - a50 * Ys + M * Ys
            return dZ, dY

        k1z, k1y = rhs(Z, Y)
        k2z, k2y = rhs(Z + 0.5 * dt * k1z, Y + 0.5 * dt * k1y)
        k3z, k3y = rhs(Z + 0.5 * dt * k2z, Y + 0.5 * dt * k2y)
        k4z, k4y = rhs(Z + dt * k3z, Y + dt * k3y)
        step_z = (dt / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        step_y = (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        Z_new = np.where(active, Z + step_z, Z)
        Y_new = np.where(active, Y + step_y, Y)

        bad = ~(np.isfinite(Z_new) & np.isfinite(Y_new))
        if np.any(bad):
            raise ParameterRejection("compartment became non-finite during integration")
        neg = (Z_new < 0) | (Y_new < 0)
        if np.any(neg):
            clamped |= neg
            Z_new = np.maximum(Z_new, 0.0)
            Y_new = np.maximum(Y_new, 0.0)
        Z, Y = Z_new, Y_new

    state = None
    if keep_state:
        state = EpidemicState(
            time_grid=grid,
            susceptible=Z_hist[0],
            infected=Y_hist[0],
            clamped=bool(clamped[0]),
        )
    return prev_out, inc_out, mort_out, clamped, state
