"""Sequential Monte Carlo driver.

The engine advances a whole particle population in lockstep through a
sequence of observe steps. Programs expose population-level operations
(prior probabilities, apply, gather) so model math can be vectorized
across particles; the engine itself owns proposal sampling, weight
bookkeeping, resampling, and trajectory recording.

Randomness is counter-keyed: proposal uniforms come from the stateless
(master_seed, PROPOSE, step, particle) hash and resampling from a
(master_seed, RESAMPLE, step) generator, so results are independent of
evaluation order and worker count by construction.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from . import rng
from .errors import ArgumentError, DegenerateWeightsError, ProposalSupportError

__all__ = [
    "PopulationProgram",
    "Proposal",
    "PriorProposal",
    "SmcConfig",
    "RunResult",
    "normalize_weights",
    "ess",
    "resample_multinomial",
    "resample_systematic",
    "choose_rows",
    "smc_run",
    "lineage_matrix",
    "Hooks",
]


class PopulationProgram(Protocol):
    """A sequential model advanced for all particles at once.

    Step i has a discrete choice space of some width C_i; probability
    matrices are (P, C_i) with zero columns allowed (unavailable
    choices). `apply` consumes the engine's sampled choices and returns
    the per-particle log-likelihood of the observation at step i.
    """

    n_steps: int

    def init(self, particles: int) -> None: ...

    def begin_step(self, i: int) -> None: ...

    def prior_probs(self, i: int) -> np.ndarray: ...

    def apply(self, i: int, choices: np.ndarray) -> np.ndarray: ...

    def gather(self, idx: np.ndarray) -> None: ...


class Proposal(Protocol):
    def probs(self, program, i: int, prior: np.ndarray) -> np.ndarray: ...


class PriorProposal:
    """Propose from the model's own assignment distribution."""

    kind = "prior"

    def probs(self, program, i: int, prior: np.ndarray) -> np.ndarray:
        return prior


@dataclass(frozen=True)
class SmcConfig:
    particles: int
    master_seed: int = 0
    resampler: str = "systematic"  # systematic | multinomial
    resample_policy: str = "always"  # always | ess
    ess_threshold: float = 0.5
    record_trajectories: bool = True

    def validate(self) -> "SmcConfig":
        if self.particles < 1:
            raise ArgumentError("particle count must be >= 1")
        if self.resampler not in ("systematic", "multinomial"):
            raise ArgumentError(f"unknown resampler {self.resampler!r}")
        if self.resample_policy not in ("always", "ess"):
            raise ArgumentError(f"unknown resample policy {self.resample_policy!r}")
        if not 0.0 < self.ess_threshold <= 1.0:
            raise ArgumentError("ess_threshold must lie in (0, 1]")
        return self


@dataclass
class RunResult:
    """Everything a run produces: evidence estimate, weight summaries,
    and (optionally) full trajectories for replay and harvesting."""

    config: dict
    n_steps: int
    particles: int
    log_marginal: float
    mean_final_log_weight: float
    final_log_acc: np.ndarray  # (P,) final particle log-weights, evidence scale
    final_weights: np.ndarray  # (P,) normalized
    step_log_mean_w: np.ndarray  # (N,) per-step log mean incremental weight
    ess_history: np.ndarray  # (N,)
    resampled: np.ndarray  # (N,) bool, resampling applied after step i
    choices: np.ndarray | None = None  # (N, P) int32
    ancestors: np.ndarray | None = None  # (N, P) int32
    log_incr: np.ndarray | None = None  # (N, P)
    predictions: dict | None = None  # particle rank -> per-frame snapshots
    wall_seconds: float = 0.0


def normalize_weights(log_w: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalized weights and log mean weight of a log-weight vector."""
    log_w = np.asarray(log_w, dtype=np.float64)
    if log_w.size == 0:
        raise ArgumentError("empty weight vector")
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise ArgumentError("weights must be finite or -inf")
    m = log_w.max()
    if m == -np.inf:
        raise DegenerateWeightsError(-1, "all log-weights are -inf")
    e = np.exp(log_w - m)
    total = e.sum()
    return e / total, float(m + np.log(total) - np.log(log_w.size))


def ess(w: np.ndarray) -> float:
    """Effective sample size 1 / sum(w^2) of normalized weights."""
    w = np.asarray(w, dtype=np.float64)
    return float(1.0 / np.square(w).sum())


def resample_multinomial(w: np.ndarray, count: int, gen: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(w)
    idx = np.searchsorted(cum, gen.random(count) * cum[-1], side="right")
    return np.minimum(idx, len(w) - 1).astype(np.int64)


def resample_systematic(w: np.ndarray, count: int, gen: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(w)
    positions = (np.arange(count) + gen.random()) / count
    idx = np.searchsorted(cum, positions * cum[-1], side="right")
    return np.minimum(idx, len(w) - 1).astype(np.int64)


_RESAMPLERS = {"multinomial": resample_multinomial, "systematic": resample_systematic}


def choose_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF choice per row; same tie rule as categorical_from_uniform.

    Selected index is the first whose cumulative probability exceeds
    u * row_total; rounding overshoot falls back to the last positive
    column of the row.
    """
    cum = np.cumsum(probs, axis=1)
    target = u * cum[:, -1]
    c = (cum <= target[:, None]).sum(axis=1)
    c = np.minimum(c, probs.shape[1] - 1)
    chosen_p = probs[np.arange(len(c)), c]
    for p in np.nonzero(chosen_p <= 0)[0]:
        positive = np.nonzero(probs[p] > 0)[0]
        if positive.size == 0:
            raise ArgumentError(f"row {p} has no positive probability")
        below = positive[positive <= c[p]]
        c[p] = below[-1] if below.size else positive[-1]
    return c.astype(np.int64)


def lineage_matrix(ancestors: np.ndarray) -> np.ndarray:
    """lineage[i, p] = population index at step i on final particle p's
    ancestral path. ancestors[i] maps step-i particles to their parent
    in the step-(i-1) population (identity when no resampling happened)."""
    n_steps, particles = ancestors.shape
    lin = np.empty((n_steps, particles), dtype=np.int64)
    lin[n_steps - 1] = np.arange(particles)
    for i in range(n_steps - 1, 0, -1):
        lin[i - 1] = ancestors[i][lin[i]]
    return lin


def smc_run(program, proposal, config: SmcConfig, hooks=None) -> RunResult:
    """Run SMC to completion.

    Per step: propose choices, check support against the prior, weight by
    [log prior(c) - log q(c)] + log-likelihood, update the evidence
    estimate, then resample per policy (never after the final step, so
    final weights reflect the last observation).

    Resampling resets every particle's log-weight to the log of the
    pre-resample mean weight, preserving the population total. Final
    particle log-weights therefore stay on the evidence scale: their
    log-mean equals log_marginal exactly, and mean_final_log_weight sits
    below it by the Jensen gap of the last unresampled segment.
    """
    config = config.validate()
    n_steps = program.n_steps
    if n_steps == 0:
        raise ArgumentError("program has no steps")
    P = config.particles
    t0 = time.perf_counter()
    program.init(P)
    seed = config.master_seed
    resampler = _RESAMPLERS[config.resampler]
    lanes = np.arange(P)

    log_acc = np.zeros(P)  # accumulated log W since last resample
    log_carry = 0.0  # common log-weight scale set by resampling resets
    log_marginal = 0.0
    step_log_mean = np.empty(n_steps)
    ess_hist = np.empty(n_steps)
    resampled = np.zeros(n_steps, dtype=bool)
    record = config.record_trajectories
    choices_rec = np.empty((n_steps, P), dtype=np.int32) if record else None
    ancestors_rec = np.empty((n_steps, P), dtype=np.int32) if record else None
    incr_rec = np.empty((n_steps, P)) if record else None
    if record:
        ancestors_rec[0] = lanes

    for i in range(n_steps):
        program.begin_step(i)
        prior = program.prior_probs(i)
        q = proposal.probs(program, i, prior)
        if hooks is not None:
            hooks.pre_apply(i, program, prior, q)
        u = rng.uniforms(seed, rng.PROPOSE, i, P)
        choices = choose_rows(q, u)
        prior_c = prior[lanes, choices]
        if np.any(prior_c <= 0.0):
            bad = int(np.nonzero(prior_c <= 0.0)[0][0])
            raise ProposalSupportError(
                f"proposal selected a zero-prior choice {int(choices[bad])} "
                f"for particle {bad} at step {i}"
            )
        q_c = q[lanes, choices]
        with np.errstate(divide="ignore"):
            bracket = np.log(prior_c) - np.log(q_c)
        loglik = program.apply(i, choices)
        incr = bracket + loglik
        if np.any(np.isnan(incr)):
            raise ArgumentError(f"NaN log-weight increment at step {i}")
        new_acc = log_acc + incr
        if np.all(new_acc == -np.inf):
            raise DegenerateWeightsError(i)
        # evidence update: log sum of w_prev * exp(incr), telescoped so it
        # reduces to log((1/P) sum W) right after a resample
        step_log_mean[i] = float(logsumexp(new_acc) - logsumexp(log_acc))
        log_marginal += step_log_mean[i]
        log_acc = new_acc
        w, _ = normalize_weights(log_acc)
        ess_hist[i] = ess(w)
        if record:
            choices_rec[i] = choices
            incr_rec[i] = incr
        if hooks is not None:
            hooks.post_apply(i, program, choices, incr)

        do_resample = False
        if i < n_steps - 1:
            if config.resample_policy == "always":
                do_resample = True
            else:
                do_resample = ess_hist[i] < config.ess_threshold * P
        if do_resample:
            idx = resampler(w, P, rng.generator(seed, rng.RESAMPLE, i))
            program.gather(idx)
            log_carry += float(logsumexp(log_acc) - np.log(P))
            log_acc = np.zeros(P)
            resampled[i] = True
            if record:
                ancestors_rec[i + 1] = idx
            if hooks is not None:
                hooks.post_resample(i, program, idx)
        elif record and i < n_steps - 1:
            ancestors_rec[i + 1] = lanes

    final_log_w = log_carry + log_acc
    final_w, _ = normalize_weights(final_log_w)
    result = RunResult(
        config={
            "particles": P,
            "master_seed": seed,
            "resampler": config.resampler,
            "resample_policy": config.resample_policy,
            "ess_threshold": config.ess_threshold,
        },
        n_steps=n_steps,
        particles=P,
        log_marginal=float(log_marginal),
        mean_final_log_weight=float(final_log_w.mean()),
        final_log_acc=final_log_w,
        final_weights=final_w,
        step_log_mean_w=step_log_mean,
        ess_history=ess_hist,
        resampled=resampled,
        choices=choices_rec,
        ancestors=ancestors_rec,
        log_incr=incr_rec,
        wall_seconds=time.perf_counter() - t0,
    )
    return result


class Hooks:
    """Optional observer interface for collection passes; every callback
    has a default no-op so subclasses override only what they need."""

    def pre_apply(self, i, program, prior, q):
        pass

    def post_apply(self, i, program, choices, incr):
        pass

    def post_resample(self, i, program, idx):
        pass
