"""Unscented Kalman filtering with two sigma-point schemes.

Multi-member clusters use the member states themselves as sigma points, with
half the weight on the cluster mean; singletons use the standard scaled
scheme. Measurements are positions only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .model import AgentState, Cluster, Config, Goal

log = logging.getLogger(__name__)

N_STATE = 4
H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 1.0, 0.0, 0.0]])

_JITTERS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


class FactorizationError(np.linalg.LinAlgError):
    """Covariance stayed indefinite after jitter escalation."""


def sqrt_psd(P: np.ndarray) -> np.ndarray:
    """Lower-triangular factor of P, escalating additive jitter before failing."""
    for eps in _JITTERS:
        try:
            return np.linalg.cholesky(P + eps * np.eye(P.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError("covariance not PSD after jitter escalation")


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return (P + P.T) / 2.0


@dataclass(frozen=True)
class SigmaSet:
    points: np.ndarray            # (L, 4)
    mean_weights: np.ndarray      # (L,)
    cov_weights: np.ndarray       # (L,)
    scheme: str                   # "members" | "scaled"
    member_ids: tuple[int, ...] = ()  # points[1:] order for the member scheme


def sigma_points_cluster(c: Cluster, states) -> SigmaSet:
    """Member-state sigma points: chi0 = cluster mean, chi(1..m) = members.

    W0 = 0.5 carries the majority of the contribution; the member weights
    share the other half evenly regardless of cluster size.
    """
    ids = tuple(sorted(c.members))
    m = len(ids)
    if m < 2:
        raise ValueError("member-state sigma points need at least 2 members")
    pts = np.vstack([c.mean.vec] + [states[i].vec for i in ids])
    w = np.full(m + 1, 0.5 / m)
    w[0] = 0.5
    return SigmaSet(points=pts, mean_weights=w, cov_weights=w.copy(),
                    scheme="members", member_ids=ids)


def sigma_points_singleton(x: AgentState, P: np.ndarray, cfg: Config) -> SigmaSet:
    """Standard 2n+1 scaled sigma points around x with covariance P."""
    n = N_STATE
    lam = cfg.ukf_alpha ** 2 * (n + cfg.ukf_kappa) - n
    L = sqrt_psd((n + lam) * np.asarray(P, dtype=float))
    xv = x.vec
    pts = np.vstack([xv] + [xv + L[:, i] for i in range(n)] + [xv - L[:, i] for i in range(n)])
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = lam / (n + lam) + (1.0 - cfg.ukf_alpha ** 2 + cfg.ukf_beta)
    return SigmaSet(points=pts, mean_weights=wm, cov_weights=wc, scheme="scaled")


def process_noise(cfg: Config) -> np.ndarray:
    qp, qv = cfg.proc_noise_std
    return np.diag([qp * qp, qp * qp, qv * qv, qv * qv])


@dataclass(frozen=True)
class Prediction:
    points: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray
    scheme: str
    member_ids: tuple[int, ...] = ()
    redraw_scale: float | None = None  # (n + lambda) for scaled-scheme redraw


def predict(sig: SigmaSet, goal: Goal, field: dynamics.ForceField,
            cfg: Config, dt: float, steps: int = 1) -> Prediction:
    """Propagate every sigma point through the closed-loop dynamics."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    pts = sig.points.copy()
    for _ in range(steps):
        pts = dynamics.step_states(pts, goal, field, cfg, dt)
    mean = sig.mean_weights @ pts
    diff = pts - mean
    cov = (sig.cov_weights[:, None] * diff).T @ diff + process_noise(cfg)
    scale = None
    if sig.scheme == "scaled":
        lam = cfg.ukf_alpha ** 2 * (N_STATE + cfg.ukf_kappa) - N_STATE
        scale = N_STATE + lam
    return Prediction(points=pts, mean=mean, cov=_symmetrize(cov),
                      mean_weights=sig.mean_weights, cov_weights=sig.cov_weights,
                      scheme=sig.scheme, member_ids=sig.member_ids,
                      redraw_scale=scale)


@dataclass(frozen=True)
class MeasurementModel:
    """Position-only observation with diagonal noise."""

    noise_cov: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.noise_cov, dtype=float)
        if R.shape != (2, 2) or R[0, 0] <= 0 or R[1, 1] <= 0:
            raise ValueError("noise_cov must be 2x2 with positive variances")
        object.__setattr__(self, "noise_cov", R)

    @classmethod
    def from_config(cls, cfg: Config, n_observed: int = 1) -> "MeasurementModel":
        r = cfg.meas_noise_std ** 2
        if cfg.scale_meas_noise_by_members and n_observed > 1:
            r /= n_observed
        return cls(np.diag([r, r]))


def _innovation_terms(pred: Prediction, mm: MeasurementModel):
    """(z_bar, P_zz, P_xz) of the unscented measurement statistics.

    The scaled scheme regenerates its sigma points from the predicted
    (mean, cov) so the process noise enters the innovation statistics; the
    member scheme keeps the propagated points, which still carry member
    identity for redistribution.
    """
    pts = pred.points
    if pred.scheme == "scaled" and pred.redraw_scale is not None:
        L = sqrt_psd(pred.redraw_scale * pred.cov)
        n = pred.cov.shape[0]
        pts = np.vstack([pred.mean]
                        + [pred.mean + L[:, i] for i in range(n)]
                        + [pred.mean - L[:, i] for i in range(n)])
    Z = pts @ H.T
    z_bar = pred.mean_weights @ Z
    dz = Z - z_bar
    dx = pts - pred.mean
    P_zz = (pred.cov_weights[:, None] * dz).T @ dz + mm.noise_cov
    P_xz = (pred.cov_weights[:, None] * dx).T @ dz
    return z_bar, P_zz, P_xz


def _solve_gain(P_zz: np.ndarray, P_xz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        return np.linalg.solve(P_zz.T, P_xz.T).T, P_zz
    except np.linalg.LinAlgError:
        log.warning("singular innovation covariance; regularizing with 1e-9")
        P_zz = P_zz + 1e-9 * np.eye(2)
        return np.linalg.solve(P_zz.T, P_xz.T).T, P_zz


def kalman_gain(pred: Prediction, mm: MeasurementModel):
    """(gain, predicted measurement) for the given prediction."""
    z_bar, P_zz, P_xz = _innovation_terms(pred, mm)
    K, _ = _solve_gain(P_zz, P_xz)
    return K, z_bar


def update(pred: Prediction, z, mm: MeasurementModel):
    """Measurement update; returns (posterior mean, posterior covariance)."""
    z = np.asarray(z, dtype=float).reshape(2)
    if not np.isfinite(z).all():
        raise ValueError("measurement must be finite")
    z_bar, P_zz, P_xz = _innovation_terms(pred, mm)
    K, P_zz = _solve_gain(P_zz, P_xz)
    x_new = pred.mean + K @ (z - z_bar)
    P_new = _symmetrize(pred.cov - K @ P_zz @ K.T)
    return x_new, P_new


def redistribute_members(c: Cluster, posterior_mean: np.ndarray,
                         prior_points: np.ndarray) -> dict[int, AgentState]:
    """Shift the propagated member points by one common correction.

    The shift is posterior_mean minus the arithmetic mean of the propagated
    member points, so the member average lands exactly on the posterior and
    the intra-cluster formation is preserved.
    """
    ids = tuple(sorted(c.members))
    pts = np.asarray(prior_points, dtype=float).reshape(len(ids), N_STATE)
    shift = np.asarray(posterior_mean, dtype=float) - pts.mean(axis=0)
    return {i: AgentState.from_vec(pts[k] + shift) for k, i in enumerate(ids)}
