"""Executable checks of the sample-complexity result for the symmetric GMM.

Setting: P_in = N(mu, s^2 I), P_aux = N(-mu, s^2 I), equal priors, linear
classifier sign(theta^T x). Its error rates are Q(mu^T theta / (s ||theta||))
where Q is the standard normal upper tail.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp, ndtr

from .errors import RegimeViolation
from .synthdata import TheoryConfig, gen_constrained_aux

MIN_SNR = 5.0


def q_function(x):
    """Upper tail of the standard normal, (1/sqrt(2 pi)) int_x^inf exp(-t^2/2) dt."""
    return ndtr(-np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class GmmOracle:
    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not np.any(self.mu):
            raise ValueError("mu must be nonzero")


def boundary_score_exact(oracle, x):
    """Ground-truth boundary score -(2 / sigma^2) |x^T mu| (rows of x, or one vector)."""
    return -(2.0 / oracle.sigma ** 2) * np.abs(np.asarray(x, dtype=np.float64) @ oracle.mu)


def outlier_logit_bayes(oracle, x):
    """log p(outlier|x) - log p(in|x) computed from the two full Gaussian log densities."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = x.shape[1]
    s2 = oracle.sigma ** 2
    log_norm = -0.5 * d * math.log(2.0 * math.pi * s2)
    d_in = np.sum((x - oracle.mu) ** 2, axis=1)
    d_out = np.sum((x + oracle.mu) ** 2, axis=1)
    log_joint_out = log_norm - d_out / (2.0 * s2) + math.log(0.5)
    log_joint_in = log_norm - d_in / (2.0 * s2) + math.log(0.5)
    log_evidence = logsumexp(np.stack([log_joint_out, log_joint_in]), axis=0)
    log_p_out = log_joint_out - log_evidence
    log_p_in = log_joint_in - log_evidence
    return log_p_out - log_p_in


def p_outlier(oracle, x):
    return expit(outlier_logit_bayes(oracle, x))


def lemma_constraint_check(samples, oracle, epsilon):
    """Whether the average boundary-score constraint holds for `samples`.

    Also evaluates the equivalent form sum |2 x^T mu| <= n sigma^2 eps and
    raises AssertionError if the two disagree.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = x.shape[0]
    if n == 0:
        raise ValueError("samples must be nonempty")
    score_form = bool(np.mean(-boundary_score_exact(oracle, x)) <= epsilon)
    if score_form != translated_constraint(x, oracle, epsilon):
        raise AssertionError("score form and translated form of the constraint disagree")
    return score_form


def translated_constraint(samples, oracle, epsilon):
    """Raw translated inequality sum |2 x^T mu| <= n sigma^2 eps, evaluated directly."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    return bool(np.sum(np.abs(2.0 * x @ oracle.mu)) <= x.shape[0] * oracle.sigma ** 2 * epsilon)


def estimator_theta(in_set, aux_set):
    """(sum of ID points - sum of aux points) / (n' + n)."""
    a = np.atleast_2d(np.asarray(in_set, dtype=np.float64))
    b = np.atleast_2d(np.asarray(aux_set, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both sets must be nonempty")
    return (a.sum(axis=0) - b.sum(axis=0)) / (a.shape[0] + b.shape[0])


def estimator_decomposition(in_set, aux_set, mu):
    """(theta_1, theta_2) with theta_hat = mu + n'/(n+n') theta_1 + n/(n+n') theta_2."""
    a = np.atleast_2d(np.asarray(in_set, dtype=np.float64))
    b = np.atleast_2d(np.asarray(aux_set, dtype=np.float64))
    theta_1 = a.mean(axis=0) - mu
    theta_2 = -b.mean(axis=0) - mu
    return theta_1, theta_2


def normalized_margin(theta, mu, sigma):
    theta = np.asarray(theta, dtype=np.float64)
    return float(mu @ theta / (sigma * np.linalg.norm(theta)))


def check_regime(cfg):
    if cfg.r0 < MIN_SNR:
        raise RegimeViolation(f"signal/noise ratio r0 = {cfg.r0:.4g} below {MIN_SNR:g}")
    if cfg.epsilon > 1.0:
        raise RegimeViolation(f"epsilon = {cfg.epsilon:g} exceeds 1")
    if cfg.epsilon < 0:
        raise RegimeViolation(f"epsilon = {cfg.epsilon:g} is negative")


def theorem_bound(cfg):
    """Lower bound on mu^T theta / (sigma ||theta||) from the sample-complexity theorem."""
    check_regime(cfg)
    m, s = cfg.mu_norm, cfg.sigma
    num = m ** 2 - math.sqrt(s) * m ** 1.5 - s ** 2 * cfg.epsilon / 2.0
    den = 2.0 * math.sqrt(s ** 2 / cfg.n * (cfg.d + 1.0 / s) + m ** 2)
    return num / den


def failure_terms(cfg):
    """The two explicit terms in the failure probability: exp(-r1 n / 8 s^2), 2 exp(-n ||mu|| / 2 s).

    The first carries an unknown multiplier (1 + c)."""
    return (math.exp(-cfg.r1 * cfg.n / (8.0 * cfg.sigma ** 2)),
            2.0 * math.exp(-0.5 * cfg.n * cfg.mu_norm / cfg.sigma))


def generalized_fpr(theta, mu, v, sigma):
    """(exact FPR under N(-mu + v, s^2 I), the upper bound Q(margin - ||mu|| / 4 s))."""
    theta = np.asarray(theta, dtype=np.float64)
    tn = np.linalg.norm(theta)
    exact = float(q_function((mu - v) @ theta / (sigma * tn)))
    bound = float(q_function(mu @ theta / (sigma * tn) - np.linalg.norm(mu) / (4.0 * sigma)))
    return exact, bound


def binomial_agreement(successes, trials, p):
    """|empirical - p| measured in binomial standard errors (inf if p is degenerate and they differ)."""
    se = math.sqrt(max(p * (1.0 - p), 0.0) / trials)
    diff = abs(successes / trials - p)
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / se


@dataclass
class TheoremReport:
    config: dict
    trials: int
    bound: float
    lhs_values: list = field(default_factory=list)
    violation_rate: float = 0.0
    stated_failure_terms: tuple = (0.0, 0.0)
    rate_checks: list = field(default_factory=list)

    @property
    def bound_values(self):
        return [self.bound] * self.trials

    def summary(self):
        lhs = np.asarray(self.lhs_values)
        return {
            "trials": self.trials,
            "bound": self.bound,
            "violation_rate": self.violation_rate,
            "lhs_min": float(lhs.min()) if lhs.size else None,
            "lhs_mean": float(lhs.mean()) if lhs.size else None,
            "max_rate_deviation_se": max((max(c["fnr_se"], c["fpr_se"]) for c in self.rate_checks),
                                         default=None),
        }

    def to_json(self, per_trial=False):
        out = {
            "schema_version": 1,
            "config": self.config,
            "stated_failure_terms": list(self.stated_failure_terms),
            "summary": self.summary(),
            "rate_checks": self.rate_checks,
        }
        if per_trial:
            out["lhs_values"] = list(self.lhs_values)
            out["bound_values"] = self.bound_values
        return json.dumps(out, sort_keys=True, indent=1)


def config_echo(cfg):
    return {"d": cfg.d, "mu_norm": cfg.mu_norm, "sigma": cfg.sigma, "n": cfg.n, "n_prime": cfg.n_prime,
            "epsilon": cfg.epsilon, "r0": cfg.r0, "r1": cfg.r1, "mu": cfg.mu.tolist()}


def verify_theorem(cfg, trials, rng, rate_check_trials=3, test_draws=100_000):
    """Monte-Carlo check of the lower bound on the normalized margin.

    Each trial draws n' ID points and n boundary-constrained aux points,
    forms theta_hat, and records its normalized margin. The first
    `rate_check_trials` trials also compare empirical FNR/FPR on
    `test_draws` fresh points with Q(margin).
    """
    bound = theorem_bound(cfg)
    report = TheoremReport(config=config_echo(cfg), trials=int(trials), bound=bound,
                           stated_failure_terms=failure_terms(cfg))
    if trials <= 0:
        return report
    seeds = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(trials)
    lhs = np.empty(trials)
    for t, seed in enumerate(seeds):
        trial_rng = np.random.default_rng(seed)
        x_in = cfg.mu + cfg.sigma * trial_rng.standard_normal((cfg.n_prime, cfg.d))
        x_aux = gen_constrained_aux(cfg, trial_rng)
        theta = estimator_theta(x_in, x_aux)
        lhs[t] = normalized_margin(theta, cfg.mu, cfg.sigma)
        if t < rate_check_trials:
            report.rate_checks.append(_rate_check(cfg, theta, lhs[t], trial_rng, test_draws))
    report.lhs_values = lhs.tolist()
    report.violation_rate = float(np.mean(lhs < bound))
    return report


def _rate_check(cfg, theta, margin, rng, draws):
    predicted = float(q_function(margin))
    x_in = cfg.mu + cfg.sigma * rng.standard_normal((draws, cfg.d))
    x_out = -cfg.mu + cfg.sigma * rng.standard_normal((draws, cfg.d))
    fn = int(np.sum(x_in @ theta < 0))
    fp = int(np.sum(x_out @ theta >= 0))
    return {"margin": float(margin), "predicted": predicted, "draws": draws,
            "fnr": fn / draws, "fpr": fp / draws,
            "fnr_se": binomial_agreement(fn, draws, predicted),
            "fpr_se": binomial_agreement(fp, draws, predicted)}
