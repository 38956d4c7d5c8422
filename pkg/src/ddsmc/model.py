"""Dependent Dirichlet process mixture of objects, as a sequence of SMC
observe steps over pixel records.

Generative story per frame: the urn thins and re-opens (urn_frame_init),
every surviving cluster's parameters theta move through an auxiliary-
sample transition, then each pixel picks a cluster from the urn
categorical and is scored under that cluster's position and colour
predictives. New clusters born mid-frame start from the base measure.

This module is the scalar reference used by unit tests, oracles, and
single-trajectory replay. The particle engine runs the vectorized
population equivalent in `population.py`, which is cross-checked against
this one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ProposalSupportError, StateError
from .stats import DmXrp, NiwXrp
from .urn import UrnState, urn_apply, urn_assignment_weights, urn_frame_init

__all__ = [
    "Hyper",
    "Theta",
    "PixelRecord",
    "ModelState",
    "AssignmentChoice",
    "FramePrediction",
    "base_g0",
    "transition_t",
    "frame_begin",
    "observe_pixel",
    "predict_record",
]

COLOUR_BINS = 10
PATCH_TRIALS = 49  # 7x7 patch


@dataclass(frozen=True)
class Hyper:
    """Model hyperparameters. Defaults follow the original derivation on
    normalized video coordinates; synthetic pixel-scale scenes override
    them through the experiment config."""

    alpha: float = 0.1
    rho: float = 0.32
    mu0: tuple[float, float] = (0.0, 0.0)
    k0: float = 0.00370790649926
    nu0: float = 7336.3104796
    lambda0_diag: tuple[float, float] = (193.362493995, 40.6543682123)
    q0: float = 10.0
    m_aux: int = 10
    trials: int = PATCH_TRIALS

    def validate(self) -> "Hyper":
        if self.alpha <= 0:
            raise ArgumentError("alpha must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ArgumentError("rho must lie in [0,1]")
        if self.k0 <= 0 or self.nu0 <= 1.0:
            raise ArgumentError("k0 > 0 and nu0 > 1 required")
        if min(self.lambda0_diag) <= 0:
            raise ArgumentError("lambda0 diagonal must be positive")
        if self.q0 <= 0:
            raise ArgumentError("q0 must be positive")
        if self.m_aux < 0 or self.trials < 1:
            raise ArgumentError("m_aux >= 0 and trials >= 1 required")
        return self

    def position_prior(self) -> NiwXrp:
        return NiwXrp.create(
            np.asarray(self.mu0, dtype=np.float64),
            self.k0,
            self.nu0,
            np.diag(self.lambda0_diag).astype(np.float64),
        )

    def colour_prior(self) -> DmXrp:
        return DmXrp.create(np.full(COLOUR_BINS, self.q0), self.trials)


@dataclass(frozen=True)
class Theta:
    positions: NiwXrp
    colours: DmXrp


@dataclass(frozen=True)
class PixelRecord:
    t: int
    n: int
    pos: np.ndarray  # (2,)
    col: np.ndarray  # (10,) ints summing to trials

    @staticmethod
    def create(t: int, n: int, pos, col, trials: int = PATCH_TRIALS) -> "PixelRecord":
        if t < 1 or n < 1:
            raise ArgumentError(f"frame/pixel indices start at 1, got t={t} n={n}")
        pos = np.asarray(pos, dtype=np.float64)
        if pos.shape != (2,) or not np.all(np.isfinite(pos)):
            raise ArgumentError("pos must be a finite 2-vector")
        col = np.asarray(col)
        if col.shape != (COLOUR_BINS,) or np.any(col < 0):
            raise ArgumentError(f"col must be {COLOUR_BINS} nonnegative counts")
        col = col.astype(np.int64)
        if int(col.sum()) != trials:
            raise ArgumentError(f"colour counts sum to {int(col.sum())}, expected {trials}")
        pos.setflags(write=False)
        col.setflags(write=False)
        return PixelRecord(t=t, n=n, pos=pos, col=col)


@dataclass(frozen=True)
class AssignmentChoice:
    """A proposal's sampled cluster id and its log proposal probability
    under the density actually used for importance correction."""

    c: int
    log_q: float


@dataclass(frozen=True)
class ModelState:
    urn: UrnState = UrnState()
    thetas: dict[int, Theta] = field(default_factory=dict)
    frame: int = 0
    n_seen: int = 0


def base_g0(hyper: Hyper) -> Theta:
    return Theta(positions=hyper.position_prior(), colours=hyper.colour_prior())


def transition_t(prev: Theta, hyper: Hyper, rng: np.random.Generator) -> Theta:
    """Auxiliary-sample transition: the new parameters incorporate m_aux
    pseudo-observations drawn exchangeably from the previous cluster's
    predictive (each draw is incorporated before the next is taken).
    Exchangeable draws are what make the base measure stationary under
    the transition."""
    pos_new = hyper.position_prior()
    pos_scratch = prev.positions
    for _ in range(hyper.m_aux):
        x = pos_scratch.sample_predictive(rng)
        pos_scratch = pos_scratch.incorporate(x)
        pos_new = pos_new.incorporate(x)
    col_new = hyper.colour_prior()
    col_scratch = prev.colours
    for _ in range(hyper.m_aux):
        c = col_scratch.sample_predictive(rng)
        col_scratch = col_scratch.incorporate(c)
        col_new = col_new.incorporate(c)
    return Theta(positions=pos_new, colours=col_new)


def frame_begin(state: ModelState, hyper: Hyper, rng: np.random.Generator) -> ModelState:
    """Advance to the next frame: thin the urn, move surviving thetas,
    drop dead ones."""
    urn = urn_frame_init(state.urn, hyper.rho, rng)
    thetas: dict[int, Theta] = {}
    for k, m in enumerate(urn.ms):
        if m > 0:
            if k not in state.thetas:
                raise StateError(f"surviving cluster {k} has no parameters")
            thetas[k] = transition_t(state.thetas[k], hyper, rng)
    return ModelState(urn=urn, thetas=thetas, frame=state.frame + 1, n_seen=0)


def prior_assignment_probs(state: ModelState, hyper: Hyper) -> np.ndarray:
    w = urn_assignment_weights(state.urn, hyper.alpha)
    return w / w.sum()


def observe_pixel(
    state: ModelState, hyper: Hyper, px: PixelRecord, choice: AssignmentChoice
) -> tuple[ModelState, float]:
    """Score one pixel under the chosen cluster and update the state.

    Returns the log weight increment
        [log p_prior(c) - log q(c)] + position logpdf + colour logpmf.
    When the proposal is the prior the caller passes log q = log p_prior(c)
    and the bracket is exactly 0.0.
    """
    if px.t != state.frame:
        raise StateError(f"pixel record t={px.t} but state frame={state.frame}")
    if px.n != state.n_seen + 1:
        raise StateError(f"pixel record n={px.n} out of order (expected {state.n_seen + 1})")
    probs = prior_assignment_probs(state, hyper)
    c = choice.c
    if not 0 <= c < len(probs):
        raise ArgumentError(f"assignment {c} outside [0, {len(probs) - 1}]")
    if probs[c] == 0.0:
        raise ProposalSupportError(
            f"proposal chose dead cluster {c} at t={px.t} n={px.n}; "
            "q must assign probability 0 there"
        )
    bracket = float(np.log(probs[c])) - choice.log_q
    theta = state.thetas.get(c)
    if theta is None:
        if c != state.urn.K:
            raise StateError(f"active cluster {c} missing parameters")
        theta = base_g0(hyper)
    incr = (
        bracket
        + theta.positions.predictive_logpdf(px.pos)
        + theta.colours.predictive_logpmf(px.col)
    )
    new_theta = Theta(
        positions=theta.positions.incorporate(px.pos),
        colours=theta.colours.incorporate(px.col),
    )
    thetas = dict(state.thetas)
    thetas[c] = new_theta
    return (
        ModelState(
            urn=urn_apply(state.urn, c),
            thetas=thetas,
            frame=state.frame,
            n_seen=state.n_seen + 1,
        ),
        float(incr),
    )


@dataclass(frozen=True)
class FramePrediction:
    """End-of-frame snapshot used for detection extraction and run files."""

    t: int
    cs: tuple[int, ...]
    K: int
    ms: tuple[int, ...]
    clusters: tuple[dict, ...]  # per active cluster: k, mu, Sigma, ps, assigned


def predict_record(state: ModelState) -> FramePrediction:
    clusters = []
    for k in state.urn.active_ids():
        mu, Sigma = state.thetas[k].positions.state_info()
        clusters.append(
            {
                "k": k,
                "mu": mu,
                "Sigma": Sigma,
                "ps": state.thetas[k].colours.state_info(),
            }
        )
    return FramePrediction(
        t=state.frame,
        cs=state.urn.cs,
        K=state.urn.K,
        ms=state.urn.ms,
        clusters=tuple(clusters),
    )
