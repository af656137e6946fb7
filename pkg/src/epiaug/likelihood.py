"""Probit-scale mixed-effects likelihood for sentinel surveillance data.

Each site's observed proportions are probit-transformed with a continuity
correction; the model mean is the probit of population prevalence plus a
time-invariant clinic-bias offset and a site intercept.  Site intercepts
are integrated analytically (normal-normal conjugacy) and the intercept
variance is integrated per site by Gauss-Legendre quadrature against a
truncated inverse-gamma prior, which keeps the likelihood additive across
sites.  Auxiliary pseudo-records keep the bias offset but carry no site
intercept (they encode an area mean, not a clinic); survey calibration
points carry neither.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtri
from scipy.stats import norm

from .dataio import NPBSRecord, SurveillanceDataset
from .dynamics import RTrendParams, Trajectory

__all__ = [
    "ProbitObservation",
    "InverseGammaSpec",
    "probit_transform",
    "log_likelihood",
    "calibrate_npbs",
    "AreaLikelihood",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ProbitObservation:
    """Probit-scale proportion with its fixed delta-method variance."""

    w: float
    nu: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.w) and math.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"invalid probit observation w={self.w}, nu={self.nu}")


def probit_transform(positive: int, tested: int) -> ProbitObservation:
    """Continuity-corrected probit of a binomial proportion.

    w = ndtri((y+0.5)/(n+1)); the variance is the delta-method image of the
    corrected binomial variance, nu = p(1-p) / ((n+1) * phi(w)^2).
    """
    if tested < 1:
        raise ValueError(f"tested must be >= 1, got {tested}")
    if not 0 <= positive <= tested:
        raise ValueError(f"positive must be in [0, tested], got {positive}/{tested}")
    p = (positive + 0.5) / (tested + 1.0)
    w = float(ndtri(p))
    phi = math.exp(-0.5 * w * w) / math.sqrt(2.0 * math.pi)
    nu = p * (1.0 - p) / ((tested + 1.0) * phi * phi)
    return ProbitObservation(w=w, nu=nu)


@dataclass(frozen=True)
class InverseGammaSpec:
    """Truncated inverse-gamma prior on the site-intercept variance.

    Integrated with `quad_order` Gauss-Laguerre nodes in v = rate/sigma2,
    where the density is gamma-shaped: the e^-v factor is the Laguerre
    weight, so the remaining integrand is smooth and convergence is
    spectral even though the truncated density can peak very sharply at
    the upper variance bound.  Weights are self-normalized to carry a unit
    prior mass.  lower == upper collapses to a point mass.
    """

    shape: float = 0.58
    rate: float = 93.0
    lower: float = 1e-4
    upper: float = 5.0
    quad_order: int = 30

    def __post_init__(self) -> None:
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("shape and rate must be positive")
        if not 0 < self.lower <= self.upper:
            raise ValueError("require 0 < lower <= upper")
        if self.quad_order < 1:
            raise ValueError("quad_order must be >= 1")

    @cached_property
    def nodes_logweights(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes sigma2_q and log weights carrying the prior."""
        if self.lower == self.upper:
            return np.array([self.lower]), np.array([0.0])
        a, b = self.shape, self.rate
        v_lo, v_hi = b / self.upper, b / self.lower
        t, w = np.polynomial.laguerre.laggauss(self.quad_order)
        v = v_lo + t
        with np.errstate(divide="ignore"):
            logw = np.where(
                t <= v_hi - v_lo, np.log(w) + (a - 1.0) * np.log(v), -np.inf
            )
        if not np.any(np.isfinite(logw)):
            raise ValueError(
                "truncated prior has vanishing mass on "
                f"[{self.lower}, {self.upper}]; adjust shape/rate/bounds"
            )
        logw = logw - _logsumexp(logw[None, :], axis=1)[0]
        sigma2 = np.clip(b / v, self.lower, self.upper)
        return sigma2, logw

    def doubled(self) -> "InverseGammaSpec":
        return InverseGammaSpec(
            shape=self.shape,
            rate=self.rate,
            lower=self.lower,
            upper=self.upper,
            quad_order=2 * self.quad_order,
        )


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


class AreaLikelihood:
    """Precompiled likelihood for one area's dataset.

    Splits records into sited (real) and unsited (auxiliary) groups,
    probit-transforms everything once, and exposes both a single-trajectory
    evaluation and a vectorised evaluation over many parameter draws.
    """

    def __init__(self, data: SurveillanceDataset, sigma2_prior: InverseGammaSpec | None = None):
        areas = data.areas
        if len(areas) > 1:
            raise ValueError(f"expected one area, got {areas}")
        self.area_id = areas[0] if areas else None
        self.prior = sigma2_prior or InverseGammaSpec()
        self.npbs = list(data.npbs)

        sited = [r for r in data.records if not r.is_auxiliary]
        unsited = [r for r in data.records if r.is_auxiliary]

        self.years = np.array(
            sorted({r.year for r in data.records} | {n.year for n in self.npbs}),
            dtype=int,
        )
        year_pos = {int(y): i for i, y in enumerate(self.years)}

        def compile_group(records):
            w = np.array([], dtype=float)
            tau = np.array([], dtype=float)
            yidx = np.array([], dtype=int)
            if records:
                obs = [probit_transform(r.positive, r.tested) for r in records]
                w = np.array([o.w for o in obs])
                tau = np.array([1.0 / o.nu for o in obs])
                yidx = np.array([year_pos[r.year] for r in records], dtype=int)
            return w, tau, yidx

        self.w, self.tau, self.yidx = compile_group(sited)
        site_ids = sorted({r.site_id for r in sited})
        self.site_ids = site_ids
        site_pos = {s: i for i, s in enumerate(site_ids)}
        self.site_idx = np.array([site_pos[r.site_id] for r in sited], dtype=int)
        self.n_sites = len(site_ids)

        self.aux_w, self.aux_tau, self.aux_yidx = compile_group(unsited)

        self.npbs_w = np.array([ndtri(n.prevalence) for n in self.npbs])
        phi = norm.pdf(self.npbs_w)
        self.npbs_se2 = np.array(
            [(n.std_err / p) ** 2 for n, p in zip(self.npbs, phi)]
        )
        self.npbs_yidx = np.array([year_pos[n.year] for n in self.npbs], dtype=int)

        # Per-site constants reused at every quadrature node.
        S, n = self.n_sites, len(self.w)
        self.site_onehot = np.zeros((S, n))
        if n:
            self.site_onehot[self.site_idx, np.arange(n)] = 1.0
        self.site_tau_sum = self.site_onehot @ self.tau if n else np.zeros(S)
        self.site_lognu = (
            self.site_onehot @ (-0.5 * (_LOG_2PI - np.log(self.tau)))
            if n
            else np.zeros(S)
        )
        self.aux_const = float(np.sum(-0.5 * (_LOG_2PI - np.log(self.aux_tau))))

    def loglik(self, probit_rho: np.ndarray, alpha: float) -> float:
        """Marginal log-likelihood for one trajectory's probit prevalence."""
        return float(self.loglik_batch(probit_rho[None, :], np.array([alpha]))[0])

    def loglik_batch(self, probit_rho: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """Marginal log-likelihood for B draws at once.

        probit_rho has shape (B, n_years) on this object's year grid.
        """
        B = probit_rho.shape[0]
        out = np.zeros(B)

        sigma2, logw = self.prior.nodes_logweights
        if len(self.w):
            E = self.w[None, :] - probit_rho[:, self.yidx] - alpha[:, None]
            B_site = (E * self.tau) @ self.site_onehot.T  # (B, S)
            Q_site = (E * E * self.tau) @ self.site_onehot.T
            A = 1.0 / sigma2[None, :] + self.site_tau_sum[:, None]  # (S, Q)
            log_shrink = -0.5 * np.log1p(sigma2[None, :] * self.site_tau_sum[:, None])
            per_node = (
                self.site_lognu[None, :, None]
                - 0.5 * (Q_site[:, :, None] - (B_site[:, :, None] ** 2) / A[None, :, :])
                + log_shrink[None, :, :]
            )
            out += np.sum(_logsumexp(per_node + logw[None, None, :], axis=2), axis=1)

        if len(self.aux_w):
            Ea = self.aux_w[None, :] - probit_rho[:, self.aux_yidx] - alpha[:, None]
            out += self.aux_const - 0.5 * np.sum(Ea * Ea * self.aux_tau, axis=1)

        if len(self.npbs_w):
            En = self.npbs_w[None, :] - probit_rho[:, self.npbs_yidx]
            out += np.sum(
                -0.5 * (_LOG_2PI + np.log(self.npbs_se2))[None, :]
                - 0.5 * En * En / self.npbs_se2[None, :],
                axis=1,
            )
        return out

    def site_effect_nodes(
        self, probit_rho: np.ndarray, alpha: np.ndarray, site_id: str
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Posterior over quadrature nodes and intercept moments for a site.

        For each draw: node log-probabilities p(sigma2_q | site data, draw),
        conditional intercept means m_q (B, Q), and variances v_q (Q,).
        Sites absent from the data get the prior over nodes and m = 0.
        """
        sigma2, logw = self.prior.nodes_logweights
        B = probit_rho.shape[0]
        if site_id not in self.site_ids:
            node_logp = np.broadcast_to(logw - _logsumexp(logw), (B, len(sigma2)))
            return sigma2, node_logp, np.zeros((B, len(sigma2))), sigma2.copy()
        s = self.site_ids.index(site_id)
        mask = self.site_idx == s
        w, tau, yidx = self.w[mask], self.tau[mask], self.yidx[mask]
        E = w[None, :] - probit_rho[:, yidx] - alpha[:, None]
        Bsum = (E * tau).sum(axis=1)
        Qsum = (E * E * tau).sum(axis=1)
        A = 1.0 / sigma2 + tau.sum()  # (Q,)
        log_shrink = -0.5 * np.log1p(sigma2 * tau.sum())
        per_node = (
            -0.5 * (Qsum[:, None] - (Bsum[:, None] ** 2) / A[None, :])
            + log_shrink[None, :]
            + logw[None, :]
        )
        node_logp = per_node - _logsumexp(per_node, axis=1)[:, None]
        m = Bsum[:, None] / A[None, :]
        v = 1.0 / A
        return sigma2, node_logp, m, v


def log_likelihood(
    traj: Trajectory,
    data: SurveillanceDataset,
    params: RTrendParams,
    sigma2_prior: InverseGammaSpec | None = None,
) -> float:
    """Marginal log-likelihood of one area's data given a trajectory.

    Empty data yields 0.0 (prior-only fit); years outside the trajectory
    raise.  Survey calibration points are included; see calibrate_npbs for
    the standalone increment.
    """
    if not data.records and not data.npbs:
        return 0.0
    al = AreaLikelihood(data, sigma2_prior)
    probit_rho = ndtri(np.clip(traj.at_years(al.years), 1e-12, 1.0 - 1e-12))
    return al.loglik(probit_rho, params.alpha)


def calibrate_npbs(traj: Trajectory, npbs: list[NPBSRecord]) -> float:
    """Log-density increment from survey calibration points.

    Surveys are taken as unbiased for the general population: no clinic
    offset and no site intercept, just a probit-scale normal with the
    delta-method standard error.
    """
    total = 0.0
    for rec in npbs:
        rho = float(traj.at_years(np.array([rec.year]))[0])
        mean = ndtri(min(max(rho, 1e-12), 1.0 - 1e-12))
        w = float(ndtri(rec.prevalence))
        se = rec.std_err / float(norm.pdf(w))
        total += float(norm.logpdf(w, loc=mean, scale=se))
    return total
