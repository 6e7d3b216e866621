"""Synthetic distributions: the 2-D toy mixture, the symmetric GMM pair used by
the sample-complexity analysis, its boundary-constrained auxiliary sampler,
and the generalized (scalar-shifted) model."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr
from scipy.stats import truncnorm

from .errors import BoundViolation, DegenerateMu, RejectionStall

OUTLIER_TAG = "OUTLIER"


@dataclass
class Dataset:
    x: np.ndarray
    labels: np.ndarray = None  # 1..K; None for unlabeled sets

    def __len__(self):
        return self.x.shape[0]


@dataclass
class ToyConfig:
    class_means: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 4.0], [-3.5, -2.0], [3.5, -2.0]]))
    class_sd: float = 0.7
    box_low: float = -8.0
    box_high: float = 8.0
    exclusion_radius: float = None

    def __post_init__(self):
        self.class_means = np.asarray(self.class_means, dtype=np.float64)
        if self.exclusion_radius is None:
            self.exclusion_radius = 2.0 * self.class_sd
        if self.exclusion_radius < 0:
            raise ValueError("exclusion_radius must be >= 0")
        lo = self.class_means - self.exclusion_radius
        hi = self.class_means + self.exclusion_radius
        if np.any(lo < self.box_low) or np.any(hi > self.box_high):
            raise ValueError("outlier box must contain every exclusion disk")

    @property
    def num_classes(self):
        return self.class_means.shape[0]


def _uniform_box_outliers(cfg, count, rng, min_rate=0.01, stall_after=100_000):
    d = cfg.class_means.shape[1]
    accepted, proposed, have = [], 0, 0
    chunk = max(1024, 2 * count)
    while have < count:
        prop = rng.uniform(cfg.box_low, cfg.box_high, size=(chunk, d))
        proposed += chunk
        dist = np.linalg.norm(prop[:, None, :] - cfg.class_means[None, :, :], axis=2)
        keep = prop[np.all(dist >= cfg.exclusion_radius, axis=1)]
        accepted.append(keep)
        have += keep.shape[0]
        if proposed >= stall_after and have < min_rate * proposed:
            raise RejectionStall(
                f"outlier acceptance {have / proposed:.2e} below {min_rate:g} after {proposed} proposals")
    return np.concatenate(accepted)[:count] if count else np.zeros((0, d))


def gen_toy(cfg, count_id, count_out, rng):
    """ID points from the equal-prior class mixture; outliers uniform on the box
    outside every exclusion disk. Returns (labeled ID Dataset, outlier Dataset)."""
    if count_id < 0 or count_out < 0:
        raise ValueError("counts must be >= 0")
    labels = rng.integers(0, cfg.num_classes, size=count_id)
    x = cfg.class_means[labels] + cfg.class_sd * rng.standard_normal((count_id, cfg.class_means.shape[1]))
    outliers = _uniform_box_outliers(cfg, count_out, rng)
    return Dataset(x, labels + 1), Dataset(outliers)


@dataclass
class TheoryConfig:
    mu: np.ndarray
    sigma: float = 1.0
    n: int = 200
    n_prime: int = 200
    epsilon: float = 0.5
    v: np.ndarray = None
    s_range: float = 0.0
    g_range: float = 0.0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).ravel()
        if self.v is None:
            self.v = np.zeros_like(self.mu)
        self.v = np.asarray(self.v, dtype=np.float64).ravel()
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")

    @classmethod
    def from_snr(cls, d, r0, sigma=1.0, **kw):
        """mu along the all-ones direction with ||mu|| = r0 * sigma."""
        mu = np.full(d, r0 * sigma / np.sqrt(d))
        return cls(mu=mu, sigma=sigma, **kw)

    @property
    def d(self):
        return self.mu.shape[0]

    @property
    def mu_norm(self):
        return float(np.linalg.norm(self.mu))

    @property
    def r0(self):
        return self.mu_norm / self.sigma

    @property
    def r1(self):
        return self.d / self.n

    def check_generalized_bounds(self):
        cap = self.mu_norm / 4.0
        if np.linalg.norm(self.v) > cap:
            raise BoundViolation(f"||v|| = {np.linalg.norm(self.v):.4g} exceeds ||mu||/4 = {cap:.4g}")
        for name in ("s_range", "g_range"):
            val = getattr(self, name)
            if val < 0 or val > cap:
                raise BoundViolation(f"{name} = {val:.4g} outside [0, ||mu||/4 = {cap:.4g}]")


def _check_mu(cfg):
    if not np.any(cfg.mu):
        raise DegenerateMu("mu must be nonzero")


def gen_theory_pair(cfg, rng):
    """(n' draws from N(mu, sigma^2 I), n draws from N(-mu, sigma^2 I))."""
    _check_mu(cfg)
    x_in = cfg.mu + cfg.sigma * rng.standard_normal((cfg.n_prime, cfg.d))
    x_aux = -cfg.mu + cfg.sigma * rng.standard_normal((cfg.n, cfg.d))
    return x_in, x_aux


def constrained_acceptance(cfg):
    """P(|2 x^T mu| <= sigma^2 eps) for x ~ N(-mu, sigma^2 I)."""
    t_max = cfg.sigma ** 2 * cfg.epsilon / (2.0 * cfg.mu_norm)
    a = (-t_max + cfg.mu_norm) / cfg.sigma
    b = (t_max + cfg.mu_norm) / cfg.sigma
    # P(a <= Z <= b) for Z standard normal, in log space to survive far tails
    log_hi, log_lo = log_ndtr(-a), log_ndtr(-b)
    return float(np.exp(log_hi) * -np.expm1(log_lo - log_hi))


def gen_constrained_aux(cfg, rng, method="auto", min_rate=1e-4):
    """n draws from N(-mu, sigma^2 I) conditioned on |2 x^T mu| <= sigma^2 eps.

    The condition only involves the projection t = x^T mu / ||mu||, so the
    exact conditional law is t ~ N(-||mu||, sigma^2) truncated to
    |t| <= sigma^2 eps / (2 ||mu||), with the orthogonal part left Gaussian.
    ``method="rejection"`` draws from the unconditioned law and keeps
    accepted points; it raises RejectionStall when the acceptance rate is
    below `min_rate`. ``"projection"`` samples the conditional law directly.
    ``"auto"`` uses rejection when it is affordable and projection otherwise.
    """
    _check_mu(cfg)
    if not cfg.epsilon > 0:
        raise ValueError("epsilon must be > 0")
    rate = constrained_acceptance(cfg)
    if method == "auto":
        method = "rejection" if rate >= 0.05 else "projection"
    if method == "rejection":
        if rate < min_rate:
            raise RejectionStall(f"acceptance {rate:.3e} below {min_rate:g}; epsilon too small for r0={cfg.r0:.3g}")
        return _constrained_by_rejection(cfg, rng)
    if method != "projection":
        raise ValueError(f"unknown method {method!r}")
    if rate == 0.0:
        raise RejectionStall("constraint region has zero probability mass in double precision")
    return _constrained_by_projection(cfg, rng)


def _constrained_by_rejection(cfg, rng):
    bound = cfg.sigma ** 2 * cfg.epsilon
    out, have = [], 0
    while have < cfg.n:
        x = -cfg.mu + cfg.sigma * rng.standard_normal((max(cfg.n, 256), cfg.d))
        keep = x[np.abs(2.0 * x @ cfg.mu) <= bound]
        out.append(keep)
        have += keep.shape[0]
    return np.concatenate(out)[:cfg.n]


def _constrained_by_projection(cfg, rng):
    u = cfg.mu / cfg.mu_norm
    # shrink slightly so round-off in the orthogonal split cannot breach the hard bound
    t_max = cfg.sigma ** 2 * cfg.epsilon / (2.0 * cfg.mu_norm) * (1.0 - 1e-9)
    loc, scale = -cfg.mu_norm, cfg.sigma
    t = truncnorm.rvs((-t_max - loc) / scale, (t_max - loc) / scale, loc=loc, scale=scale,
                      size=cfg.n, random_state=rng)
    t = np.clip(t, -t_max, t_max)
    z = cfg.sigma * rng.standard_normal((cfg.n, cfg.d))
    z -= np.outer(z @ u, u)
    x = z + np.outer(t, u)
    return x


def gen_generalized(cfg, rng, n_test=None):
    """(ID set, aux set, test-OOD set) under the scalar-shifted mixture model.

    ID: s ~ U[-s_range, s_range], x ~ N((1+s) mu, sigma^2 I).
    Aux: g ~ U[-g_range, g_range], x ~ N((-1+g) mu, sigma^2 I).
    Test OOD: x ~ N(-mu + v, sigma^2 I).
    """
    _check_mu(cfg)
    cfg.check_generalized_bounds()
    n_test = cfg.n if n_test is None else n_test
    s = rng.uniform(-cfg.s_range, cfg.s_range, size=cfg.n_prime)
    x_in = np.outer(1.0 + s, cfg.mu) + cfg.sigma * rng.standard_normal((cfg.n_prime, cfg.d))
    g = rng.uniform(-cfg.g_range, cfg.g_range, size=cfg.n)
    x_aux = np.outer(-1.0 + g, cfg.mu) + cfg.sigma * rng.standard_normal((cfg.n, cfg.d))
    x_test = (-cfg.mu + cfg.v) + cfg.sigma * rng.standard_normal((n_test, cfg.d))
    return x_in, x_aux, x_test


def orthogonal_labels(x, mu):
    """Two ID classes for the single-Gaussian models: sign of the projection on a
    fixed unit direction orthogonal to mu. Returns labels in {1, 2}."""
    mu = np.asarray(mu, dtype=np.float64)
    e = np.zeros_like(mu)
    e[int(np.argmin(np.abs(mu)))] = 1.0
    direction = e - (e @ mu) / (mu @ mu) * mu
    if not np.any(direction):
        direction = np.roll(e, 1)
    return np.where(np.asarray(x) @ direction >= 0, 1, 2)


def write_csv(path, id_set=None, outliers=None):
    """One row per point: x0..x{d-1}, label (1..K or OUTLIER)."""
    blocks = [b for b in (id_set, outliers) if b is not None and len(b)]
    d = blocks[0].x.shape[1] if blocks else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(d)] + ["label"])
        if id_set is not None:
            for row, lab in zip(id_set.x, id_set.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(lab)])
        if outliers is not None:
            for row in outliers.x:
                writer.writerow([repr(float(v)) for v in row] + [OUTLIER_TAG])


def read_csv(path):
    """Inverse of write_csv: returns (ID Dataset, outlier Dataset)."""
    ids, labs, outs = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 1
        for row in reader:
            coords = [float(v) for v in row[:d]]
            if row[d] == OUTLIER_TAG:
                outs.append(coords)
            else:
                ids.append(coords)
                labs.append(int(row[d]))
    return (Dataset(np.array(ids).reshape(-1, d), np.array(labs, dtype=int)),
            Dataset(np.array(outs).reshape(-1, d)))
