"""Desk-scale Laplacian convergence on the circle, plus Gaussian moment oracles.

The trivial line bundle over the unit circle is the one setting where the
connection Laplacian has a closed form, so convergence of the rescaled
point-cloud operator can be checked directly: for a sample of n uniform
angles and bandwidth t_n = n^(-1/(3+alpha)),

    (1 / (t_n sqrt(4 pi t_n))) * (1/n) * sum_j w(x, x_j) (S(x) - S(x_j))

should approach (1 / (2 pi)) * (-S'') as n grows, with w the heat kernel of
the arc-length distance. Constant sections are annihilated termwise for
every n, which pins the operator's kernel exactly.

The Monte-Carlo oracles check the centered-Gaussian moment identities that
drive the bias estimates behind that convergence: vanishing first moment,
covariance a*t*I, and the t^(k+1/2) scaling of odd absolute moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import as_generator
from .sheaf import bandwidth_schedule

TWO_PI = 2.0 * np.pi

# section name -> (section, analytic image under the rescaled limit operator)
SECTIONS = {
    "sin": (np.sin, lambda th: np.sin(th) / TWO_PI),
    "cos": (np.cos, lambda th: np.cos(th) / TWO_PI),
    "sin2": (lambda th: np.sin(2.0 * th), lambda th: 4.0 * np.sin(2.0 * th) / TWO_PI),
    "constant": (lambda th: np.ones_like(th), lambda th: np.zeros_like(th)),
}


@dataclass(frozen=True)
class CircleSample:
    n: int
    angles: np.ndarray


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    t_n: float
    pointwise_error: float
    l2_error: float


def sample_circle(n: int, rng) -> CircleSample:
    """n angles drawn i.i.d. uniformly from [0, 2*pi)."""
    if n < 2:
        raise ValueError("need at least 2 sample points")
    gen = as_generator(rng)
    return CircleSample(n=n, angles=gen.uniform(0.0, TWO_PI, size=n))


def arc_distance(a, b):
    """Geodesic (arc-length) distance between angles; broadcasts."""
    gap = np.abs(np.asarray(a) - np.asarray(b)) % TWO_PI
    return np.minimum(gap, TWO_PI - gap)


def rescaled_point_cloud_laplacian_circle(sample: CircleSample, section: str,
                                          query_angles, alpha: float) -> np.ndarray:
    """Rescaled point-cloud Laplacian of a named section at the query angles."""
    if section not in SECTIONS:
        raise ValueError(f"unknown section {section!r}; choose from {sorted(SECTIONS)}")
    func = SECTIONS[section][0]
    queries = np.atleast_1d(np.asarray(query_angles, dtype=float))
    t_n = bandwidth_schedule(sample.n, 1, alpha)
    w = np.exp(-arc_distance(queries[:, None], sample.angles[None, :]) ** 2
               / (4.0 * t_n))
    diffs = func(queries)[:, None] - func(sample.angles)[None, :]
    scale = 1.0 / (t_n * np.sqrt(4.0 * np.pi * t_n))
    return scale * (w * diffs).sum(axis=1) / sample.n


def circle_convergence_row(n: int, alpha: float, section: str, rng,
                           n_queries: int = 32) -> ConvergenceRow:
    """Errors of the rescaled operator against the analytic limit.

    Queries are equispaced; pointwise_error is the mean absolute error over
    the queries and l2_error the root mean square error.
    """
    sample = sample_circle(n, rng)
    queries = TWO_PI * np.arange(n_queries) / n_queries
    est = rescaled_point_cloud_laplacian_circle(sample, section, queries, alpha)
    target = SECTIONS[section][1](queries)
    err = est - target
    return ConvergenceRow(
        n=n, t_n=bandwidth_schedule(n, 1, alpha),
        pointwise_error=float(np.abs(err).mean()),
        l2_error=float(np.sqrt((err ** 2).mean())))


@dataclass(frozen=True)
class GaussianOracleReport:
    """Monte-Carlo estimates of centered-Gaussian moment identities.

    For X ~ N(0, a*t*I_m): the first moment vanishes, the covariance is
    a*t on the diagonal and 0 off it, and E||X|| scales like sqrt(t), so
    halving t divides it by sqrt(2). Standard errors accompany every
    estimate; the off-diagonal fields are NaN when m == 1.
    """

    m: int
    a: float
    t: float
    trials: int
    mean_estimate: float
    mean_se: float
    cov_diag_estimate: float
    cov_diag_target: float
    cov_diag_se: float
    cov_offdiag_estimate: float
    cov_offdiag_se: float
    odd_ratio_estimate: float
    odd_ratio_target: float
    odd_ratio_se: float


def gaussian_identity_oracle(m: int, a: float, t: float, trials: int,
                             seed) -> GaussianOracleReport:
    """Estimate the three moment identities with ``trials`` samples each."""
    if trials < 10_000:
        raise ValueError("need at least 10^4 trials")
    if m < 1 or a <= 0.0 or t <= 0.0:
        raise ValueError("m must be >= 1 and a, t positive")
    gen = as_generator(seed)
    x = gen.normal(0.0, np.sqrt(a * t), size=(trials, m))
    mean_est = float(x[:, 0].mean())
    mean_se = float(x[:, 0].std(ddof=1) / np.sqrt(trials))
    sq = x[:, 0] ** 2
    diag_est = float(sq.mean())
    diag_se = float(sq.std(ddof=1) / np.sqrt(trials))
    if m >= 2:
        cross = x[:, 0] * x[:, 1]
        off_est = float(cross.mean())
        off_se = float(cross.std(ddof=1) / np.sqrt(trials))
    else:
        off_est = float("nan")
        off_se = float("nan")
    norms_full = np.linalg.norm(x, axis=1)
    y = gen.normal(0.0, np.sqrt(a * t / 2.0), size=(trials, m))
    norms_half = np.linalg.norm(y, axis=1)
    mu_f, mu_h = norms_full.mean(), norms_half.mean()
    ratio = float(mu_f / mu_h)
    rel_f = norms_full.std(ddof=1) / np.sqrt(trials) / mu_f
    rel_h = norms_half.std(ddof=1) / np.sqrt(trials) / mu_h
    ratio_se = float(ratio * np.sqrt(rel_f ** 2 + rel_h ** 2))
    return GaussianOracleReport(
        m=m, a=a, t=t, trials=trials,
        mean_estimate=mean_est, mean_se=mean_se,
        cov_diag_estimate=diag_est, cov_diag_target=a * t, cov_diag_se=diag_se,
        cov_offdiag_estimate=off_est, cov_offdiag_se=off_se,
        odd_ratio_estimate=ratio, odd_ratio_target=float(np.sqrt(2.0)),
        odd_ratio_se=ratio_se)
