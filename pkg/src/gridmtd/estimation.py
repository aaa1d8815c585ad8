"""Noisy measurements, WLS state estimation and chi-square bad-data detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.stats import chi2

from .grid import Grid
from .powerflow import DcState, MeasurementMatrix, build_h


class ObservabilityError(RuntimeError):
    """The WLS gain matrix is singular."""


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Counter-based generator (Philox) so seeds map to reproducible streams."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class MeasurementSet:
    z: np.ndarray
    sigma: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.sigma**2


@dataclass(frozen=True)
class BddConfig:
    alpha: float
    tau: float
    dof: int


def default_sigma(z_clean: np.ndarray, fraction: float = 0.01, floor_mw: float = 1.0) -> np.ndarray:
    """Per-channel noise std: ``fraction`` of ``max(|z|, floor_mw)``."""
    return fraction * np.maximum(np.abs(z_clean), floor_mw)


def _as_h(h) -> np.ndarray:
    return h.h if isinstance(h, MeasurementMatrix) else np.asarray(h, dtype=float)


def generate_measurements(grid: Grid, state: DcState, sigma, rng_seed) -> MeasurementSet:
    h = build_h(grid).h
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (h.shape[0],)).copy()
    rng = make_rng(rng_seed)
    z = h @ state.theta + rng.standard_normal(h.shape[0]) * sigma
    return MeasurementSet(z=z, sigma=sigma)


def wls_estimate(h, w, z) -> np.ndarray:
    """``(H^T W H)^{-1} H^T W z`` for diagonal ``W`` given as a vector.

    ``z`` may be a batch of shape (trials, M).
    """
    h = _as_h(h)
    w = np.asarray(w, dtype=float)
    gain = (h.T * w) @ h
    try:
        factor = scipy.linalg.cho_factor(gain)
    except np.linalg.LinAlgError as exc:
        raise ObservabilityError("gain matrix is singular") from exc
    rhs = (np.asarray(z, dtype=float) * w) @ h
    return scipy.linalg.cho_solve(factor, rhs.T).T


def bdd_residual(z, h, theta_hat, w=None) -> np.ndarray | float:
    """``||z - H theta_hat||``; weighted by ``w`` when given."""
    r = np.asarray(z, dtype=float) - np.asarray(theta_hat) @ _as_h(h).T
    if w is not None:
        r = r * np.sqrt(w)
    return np.linalg.norm(r, axis=-1)


def calibrate_threshold(alpha: float, h, w=None) -> BddConfig:
    """Threshold on the weighted residual for false-positive rate ``alpha``.

    Under no attack the squared weighted residual is chi-square with
    ``M - rank(H)`` degrees of freedom.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    h = _as_h(h)
    dof = h.shape[0] - np.linalg.matrix_rank(h)
    return BddConfig(alpha=alpha, tau=float(np.sqrt(chi2.isf(alpha, dof))), dof=int(dof))


class BadDataDetector:
    """WLS estimator plus residual test, factorised once for repeated use."""

    def __init__(self, h, sigma, alpha: float):
        self.h = _as_h(h)
        self.sigma = np.asarray(sigma, dtype=float)
        self.w = 1.0 / self.sigma**2
        self.config = calibrate_threshold(alpha, self.h, self.w)
        gain = (self.h.T * self.w) @ self.h
        try:
            self._factor = scipy.linalg.cho_factor(gain)
        except np.linalg.LinAlgError as exc:
            raise ObservabilityError("gain matrix is singular") from exc

    @property
    def tau(self) -> float:
        return self.config.tau

    def estimate(self, z) -> np.ndarray:
        rhs = (np.asarray(z, dtype=float) * self.w) @ self.h
        return scipy.linalg.cho_solve(self._factor, rhs.T).T

    def residual(self, z) -> np.ndarray | float:
        return bdd_residual(z, self.h, self.estimate(z), self.w)

    def flags(self, z) -> np.ndarray | bool:
        return self.residual(z) > self.tau
