"""Bayesian linear regression over the outlier-head weights, fed by a feature queue.

The head scores a feature vector phi as w^T phi. Targets are fixed logits
(+3 for mined outliers, -3 for in-distribution samples) plus Gaussian noise.
Given the queue contents Phi (m x M) and targets y (M,), the posterior is

    precision = Phi Phi^T / noise_var + prior_cov^{-1}
    mean      = precision^{-1} Phi y / noise_var
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import linalg


@dataclass(frozen=True)
class TargetScheme:
    outlier_logit: float = 3.0
    id_logit: float = -3.0
    noise_sd: float = 1.0

    def __post_init__(self):
        if not self.outlier_logit > 0 > self.id_logit:
            raise ValueError("need outlier_logit > 0 > id_logit")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")


class FeatureQueue:
    """Fixed-capacity FIFO of (phi, target logit) pairs."""

    def __init__(self, capacity, dim=None):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = int(capacity)
        self.dim = dim
        self._phi = deque(maxlen=self.capacity)
        self._y = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._y)

    def push(self, phi, y_tar):
        phi = np.asarray(phi, dtype=np.float64).ravel()
        if not np.all(np.isfinite(phi)) or not np.isfinite(y_tar):
            raise ValueError("queue entries must be finite")
        if self.dim is None:
            self.dim = phi.shape[0]
        elif phi.shape[0] != self.dim:
            raise ValueError(f"feature has length {phi.shape[0]}, queue holds length {self.dim}")
        self._phi.append(phi)
        self._y.append(float(y_tar))

    def enqueue(self, phi, is_outlier, scheme, rng):
        """Append phi with a noisy fixed target; rows of a 2-D `phi` are enqueued in order.

        `is_outlier` is a flag (or one flag per row).
        """
        phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
        flags = np.broadcast_to(np.asarray(is_outlier, dtype=bool), (phi.shape[0],))
        targets = np.where(flags, scheme.outlier_logit, scheme.id_logit)
        if scheme.noise_sd > 0:
            targets = targets + scheme.noise_sd * rng.standard_normal(phi.shape[0])
        for row, y in zip(phi, targets):
            self.push(row, y)
        return self

    @property
    def phi(self):
        """Feature matrix with one column per entry, shape (m, len)."""
        if not self._phi:
            return np.zeros((self.dim or 0, 0))
        return np.stack(self._phi, axis=1)

    @property
    def y(self):
        return np.fromiter(self._y, dtype=np.float64, count=len(self._y))

    def to_arrays(self):
        """Flat arrays for checkpointing: phi (len, m) and targets (len,)."""
        return {"queue_phi": self.phi.T.copy(), "queue_y": self.y}

    @classmethod
    def from_arrays(cls, capacity, queue_phi, queue_y):
        q = cls(capacity, dim=queue_phi.shape[1] if queue_phi.ndim == 2 else None)
        for row, y in zip(queue_phi, queue_y):
            q.push(row, y)
        return q


def isotropic_prior(dim, scale=1.0):
    return scale * np.eye(dim)


@dataclass
class PosteriorState:
    prior_cov: np.ndarray
    noise_var: float
    precision: np.ndarray
    mean: np.ndarray
    factor: linalg.CholeskyFactor = field(repr=False)
    # set only when no data has been seen: Cholesky factor of prior_cov itself
    prior_factor: linalg.CholeskyFactor = field(default=None, repr=False)

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def is_prior(self):
        return self.prior_factor is not None

    def covariance(self):
        if self.is_prior:
            return self.prior_cov.copy()
        return linalg.solve_spd(self.factor, np.eye(self.dim))


def prior_state(prior_cov, noise_var):
    prior_cov = np.asarray(prior_cov, dtype=np.float64)
    return posterior_update(np.zeros((prior_cov.shape[0], 0)), np.zeros(0), prior_cov, noise_var)


def posterior_update(queue_or_phi, y_or_prior, prior_cov=None, noise_var=None):
    """Closed-form posterior from the full queue contents.

    Call as ``posterior_update(queue, prior_cov, noise_var)`` or with raw
    arrays ``posterior_update(Phi, y, prior_cov, noise_var)`` where Phi is
    (m, M).
    """
    if isinstance(queue_or_phi, FeatureQueue):
        if noise_var is not None:
            raise TypeError("pass (queue, prior_cov, noise_var)")
        Phi, y = queue_or_phi.phi, queue_or_phi.y
        prior_cov, noise_var = y_or_prior, prior_cov
    else:
        Phi = np.asarray(queue_or_phi, dtype=np.float64)
        y = np.asarray(y_or_prior, dtype=np.float64)
    prior_cov = np.asarray(prior_cov, dtype=np.float64)
    if noise_var is None or not noise_var > 0:
        raise ValueError("noise_var must be > 0")
    m = prior_cov.shape[0]
    if Phi.size == 0:
        Phi = np.zeros((m, 0))
    if Phi.shape[0] != m:
        raise ValueError(f"features have dimension {Phi.shape[0]}, prior has {m}")

    prior_factor = linalg.cholesky(prior_cov)
    prior_precision = linalg.solve_spd(prior_factor, np.eye(m))
    prior_precision = 0.5 * (prior_precision + prior_precision.T)
    precision = Phi @ Phi.T / noise_var + prior_precision
    precision = 0.5 * (precision + precision.T)
    factor = linalg.cholesky(precision)
    if not y.size:
        # no data: the posterior is the prior, returned without round-off
        return PosteriorState(prior_cov=prior_cov, noise_var=float(noise_var), precision=precision,
                              mean=np.zeros(m), factor=factor, prior_factor=prior_factor)
    mean = linalg.solve_spd(factor, Phi @ y / noise_var)
    return PosteriorState(prior_cov=prior_cov, noise_var=float(noise_var),
                          precision=precision, mean=mean, factor=factor)


def sample_weights(state, rng, size=None):
    """Draw w ~ N(mean, precision^{-1}); before any data, w ~ N(0, prior_cov) directly."""
    if state.is_prior:
        z = rng.standard_normal(state.dim if size is None else (size, state.dim))
        return state.mean + z @ state.prior_factor.L.T
    return linalg.sample_mvn(state.mean, state.factor, rng, size=size)
