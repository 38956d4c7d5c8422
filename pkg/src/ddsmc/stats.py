"""Densities and the two conjugate exchangeable random procedures.

The clustering model is built from two conjugate families:

- `NiwXrp`: 2-D normal with normal-inverse-Wishart prior over (mean,
  covariance). Predictive is a multivariate Student-t.
- `DmXrp`: multinomial counts with a Dirichlet prior. Predictive is the
  Dirichlet-multinomial compound pmf.

Both keep sufficient statistics only, and both support incorporate /
unincorporate as exact inverses. For the NIW that requires more than
float accumulation (float += is not invertible), so position sums are
held as exact dyadic rationals and only converted to float when a
posterior parameter is computed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ArgumentError, NumericalError, StateError

__all__ = [
    "ExactSum",
    "NiwXrp",
    "DmXrp",
    "softmax",
    "categorical_sample",
    "categorical_from_uniform",
    "binomial_sample",
    "mvt_logpdf",
    "mvt_sample",
]


# ---------------------------------------------------------------------------
# exact dyadic accumulator


class ExactSum:
    """Exact running sum of float64 values.

    Every finite double is num * 2**-shift for integers (num, shift);
    sums of those are closed under the same representation, so addition
    and subtraction commute and invert exactly. The canonical form
    (num odd or shift == 0) makes equality a plain tuple comparison.
    """

    __slots__ = ("num", "shift")

    def __init__(self, num: int = 0, shift: int = 0):
        self.num = num
        self.shift = shift

    @staticmethod
    def _canon(num: int, shift: int) -> "ExactSum":
        if num == 0:
            return ExactSum(0, 0)
        while shift > 0 and not (num & 1):
            num >>= 1
            shift -= 1
        return ExactSum(num, shift)

    @staticmethod
    def _decompose(x: float) -> tuple[int, int]:
        if not math.isfinite(x):
            raise ArgumentError(f"cannot accumulate non-finite value {x!r}")
        m, e = math.frexp(x)  # x = m * 2**e with 0.5 <= |m| < 1
        num = int(m * (1 << 53))  # exact: doubles have 53-bit mantissas
        shift = 53 - e
        if shift < 0:
            num <<= -shift
            shift = 0
        return num, shift

    def add(self, x: float) -> "ExactSum":
        n2, s2 = self._decompose(x)
        s = max(self.shift, s2)
        return self._canon((self.num << (s - self.shift)) + (n2 << (s - s2)), s)

    def sub(self, x: float) -> "ExactSum":
        n2, s2 = self._decompose(x)
        s = max(self.shift, s2)
        return self._canon((self.num << (s - self.shift)) - (n2 << (s - s2)), s)

    @property
    def value(self) -> float:
        # int/int division rounds correctly even when num exceeds 2**53
        return self.num / (1 << self.shift)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ExactSum)
            and self.num == other.num
            and self.shift == other.shift
        )

    def __hash__(self):
        return hash((self.num, self.shift))

    def __repr__(self):
        return f"ExactSum({self.num}, {self.shift})"


# ---------------------------------------------------------------------------
# densities


def softmax(v) -> np.ndarray:
    """Stable softmax; max is subtracted before exponentiation."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ArgumentError("softmax input must be finite")
    e = np.exp(v - v.max())
    return e / e.sum()


def categorical_from_uniform(weights, u: float) -> int:
    """Index i with probability weights[i]/sum, driven by one uniform.

    Shared inverse-CDF rule for scalar and vectorized callers: the result
    is the first index whose cumulative normalized weight exceeds u. If
    rounding pushes u past the final cumulative value, the last positive-
    weight index is returned.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ArgumentError("negative categorical weight")
    total = w.sum()
    if not total > 0:
        raise ArgumentError("categorical weights sum to zero")
    acc = 0.0
    target = u * total
    last_positive = -1
    for i, wi in enumerate(w):
        if wi > 0:
            last_positive = i
        acc += wi
        if target < acc:
            return i if wi > 0 else last_positive
    return last_positive


def categorical_sample(weights, rng: np.random.Generator) -> int:
    return categorical_from_uniform(weights, rng.random())


def binomial_sample(n: int, p: float, rng: np.random.Generator) -> int:
    if n < 0:
        raise ArgumentError(f"binomial trial count {n} < 0")
    if not 0.0 <= p <= 1.0:
        raise ArgumentError(f"binomial probability {p} outside [0,1]")
    return int(rng.binomial(n, p))


def _chol(scale: np.ndarray, context: str):
    try:
        return np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{context}: matrix not positive definite", detail=scale)


def mvt_logpdf(x, mu, scale, dof: float) -> float:
    """Log density of the multivariate Student-t."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if dof <= 0:
        raise ArgumentError(f"t dof {dof} <= 0")
    d = x.shape[0]
    L = _chol(scale, "mvt_logpdf scale")
    y = np.linalg.solve(L, x - mu)
    maha = float(y @ y)
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    return float(
        gammaln((dof + d) / 2.0)
        - gammaln(dof / 2.0)
        - 0.5 * d * (math.log(dof) + math.log(math.pi))
        - 0.5 * logdet
        - 0.5 * (dof + d) * math.log1p(maha / dof)
    )


def mvt_sample(mu, scale, dof: float, rng: np.random.Generator) -> np.ndarray:
    """One draw from the multivariate Student-t."""
    mu = np.asarray(mu, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    L = _chol(scale, "mvt_sample scale")
    z = rng.standard_normal(mu.shape[0])
    g = rng.chisquare(dof)
    return mu + (L @ z) * math.sqrt(dof / g)


# ---------------------------------------------------------------------------
# normal-inverse-Wishart XRP (2-D positions)


@dataclass(frozen=True)
class NiwXrp:
    """Conjugate 2-D Gaussian cluster with NIW prior.

    Persistent value: incorporate/unincorporate return new instances.
    Sufficient statistics: count, exact coordinate sums, exact scatter
    (sum of outer products).
    """

    mu0: np.ndarray
    k0: float
    nu0: float
    Lambda0: np.ndarray
    count: int = 0
    sx: ExactSum = ExactSum()
    sy: ExactSum = ExactSum()
    sxx: ExactSum = ExactSum()
    sxy: ExactSum = ExactSum()
    syy: ExactSum = ExactSum()

    @staticmethod
    def create(mu0, k0: float, nu0: float, Lambda0) -> "NiwXrp":
        mu0 = np.asarray(mu0, dtype=np.float64)
        Lambda0 = np.asarray(Lambda0, dtype=np.float64)
        if mu0.shape != (2,):
            raise ArgumentError("mu0 must be a 2-vector")
        if Lambda0.shape != (2, 2) or not np.allclose(Lambda0, Lambda0.T):
            raise ArgumentError("Lambda0 must be symmetric 2x2")
        if k0 <= 0 or nu0 <= 1.0:  # nu0 > d - 1
            raise ArgumentError("require k0 > 0 and nu0 > d-1")
        _chol(Lambda0, "NiwXrp Lambda0")
        mu0.setflags(write=False)
        Lambda0.setflags(write=False)
        return NiwXrp(mu0=mu0, k0=float(k0), nu0=float(nu0), Lambda0=Lambda0)

    def incorporate(self, x) -> "NiwXrp":
        x = np.asarray(x, dtype=np.float64)
        px, py = float(x[0]), float(x[1])
        return NiwXrp(
            self.mu0, self.k0, self.nu0, self.Lambda0,
            self.count + 1,
            self.sx.add(px), self.sy.add(py),
            self.sxx.add(px * px), self.sxy.add(px * py), self.syy.add(py * py),
        )

    def unincorporate(self, x) -> "NiwXrp":
        if self.count == 0:
            raise StateError("unincorporate on empty NiwXrp")
        x = np.asarray(x, dtype=np.float64)
        px, py = float(x[0]), float(x[1])
        return NiwXrp(
            self.mu0, self.k0, self.nu0, self.Lambda0,
            self.count - 1,
            self.sx.sub(px), self.sy.sub(py),
            self.sxx.sub(px * px), self.sxy.sub(px * py), self.syy.sub(py * py),
        )

    def posterior_params(self):
        """(mu_n, k_n, nu_n, Lambda_n) of the NIW posterior."""
        n = self.count
        kn = self.k0 + n
        nun = self.nu0 + n
        sumx = np.array([self.sx.value, self.sy.value])
        mun = (self.k0 * self.mu0 + sumx) / kn
        S = np.array(
            [[self.sxx.value, self.sxy.value], [self.sxy.value, self.syy.value]]
        )
        Lambdan = (
            self.Lambda0
            + S
            + self.k0 * np.outer(self.mu0, self.mu0)
            - kn * np.outer(mun, mun)
        )
        return mun, kn, nun, Lambdan

    def predictive_params(self):
        """(mu, scale, dof) of the posterior-predictive Student-t."""
        mun, kn, nun, Lambdan = self.posterior_params()
        dof = nun - 1.0  # nu_n - d + 1 with d = 2
        scale = Lambdan * (kn + 1.0) / (kn * dof)
        return mun, scale, dof

    def predictive_logpdf(self, x) -> float:
        mu, scale, dof = self.predictive_params()
        try:
            return mvt_logpdf(x, mu, scale, dof)
        except NumericalError as err:
            raise NumericalError(
                f"NIW predictive scale degenerate at count={self.count}",
                detail={"state": self, "scale": err.detail},
            )

    def sample_predictive(self, rng: np.random.Generator) -> np.ndarray:
        mu, scale, dof = self.predictive_params()
        return mvt_sample(mu, scale, dof, rng)

    def state_info(self):
        """(mu_n, posterior expected covariance Lambda_n/(nu_n - d - 1))."""
        mun, _, nun, Lambdan = self.posterior_params()
        if nun <= 3.0:  # d + 1
            raise StateError(f"posterior covariance undefined: nu_n={nun} <= 3")
        return mun, Lambdan / (nun - 3.0)


# ---------------------------------------------------------------------------
# Dirichlet-multinomial XRP (colour histograms)


def _validate_counts(counts, trials: int, bins: int) -> np.ndarray:
    c = np.asarray(counts)
    if c.shape != (bins,):
        raise ArgumentError(f"count vector must have {bins} bins, got shape {c.shape}")
    if not np.issubdtype(c.dtype, np.integer):
        ci = c.astype(np.int64)
        if not np.array_equal(ci, c):
            raise ArgumentError("count vector must be integral")
        c = ci
    if np.any(c < 0):
        raise ArgumentError("negative count")
    if int(c.sum()) != trials:
        raise ArgumentError(f"counts sum to {int(c.sum())}, expected {trials}")
    return c.astype(np.int64)


@dataclass(frozen=True)
class DmXrp:
    """Conjugate multinomial cluster with Dirichlet prior.

    Each observation is a full count vector over `bins` categories
    summing to `trials` (one image patch histogram).
    """

    q0: np.ndarray
    trials: int
    counts: np.ndarray
    m: int = 0  # observations incorporated

    @staticmethod
    def create(q0, trials: int) -> "DmXrp":
        q0 = np.asarray(q0, dtype=np.float64)
        if q0.ndim != 1 or np.any(q0 <= 0):
            raise ArgumentError("q0 must be a positive vector")
        if trials < 1:
            raise ArgumentError("trials must be >= 1")
        q0.setflags(write=False)
        counts = np.zeros(q0.shape[0], dtype=np.int64)
        counts.setflags(write=False)
        return DmXrp(q0=q0, trials=int(trials), counts=counts)

    @property
    def bins(self) -> int:
        return self.q0.shape[0]

    def incorporate(self, counts) -> "DmXrp":
        c = _validate_counts(counts, self.trials, self.bins)
        new = self.counts + c
        new.setflags(write=False)
        return DmXrp(self.q0, self.trials, new, self.m + 1)

    def unincorporate(self, counts) -> "DmXrp":
        if self.m == 0:
            raise StateError("unincorporate on empty DmXrp")
        c = _validate_counts(counts, self.trials, self.bins)
        new = self.counts - c
        if np.any(new < 0):
            raise StateError("unincorporate of counts never incorporated")
        new.setflags(write=False)
        return DmXrp(self.q0, self.trials, new, self.m - 1)

    def predictive_logpmf(self, counts) -> float:
        c = _validate_counts(counts, self.trials, self.bins)
        a = self.q0 + self.counts
        A = float(a.sum())
        logcoef = gammaln(self.trials + 1) - float(gammaln(c + 1).sum())
        return float(
            logcoef
            + gammaln(A)
            - gammaln(A + self.trials)
            + float((gammaln(a + c) - gammaln(a)).sum())
        )

    def sample_predictive(self, rng: np.random.Generator) -> np.ndarray:
        p = rng.dirichlet(self.q0 + self.counts)
        return rng.multinomial(self.trials, p).astype(np.int64)

    def state_info(self) -> np.ndarray:
        """Posterior Dirichlet mean on the simplex."""
        a = self.q0 + self.counts
        return a / a.sum()
