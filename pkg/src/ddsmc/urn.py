"""Generalized Polya urn over time-varying cluster assignments.

Between frames each cluster loses members by a Binomial(m, rho) deletion;
within a frame assignments follow a CRP-style categorical over cluster
sizes plus a new-cluster slot weighted alpha. Clusters whose size reaches
0 at a frame boundary keep their index forever with weight exactly 0, so
cluster ids stay stable for parameter lookup and metrics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .stats import binomial_sample

__all__ = ["UrnState", "urn_frame_init", "urn_assignment_weights", "urn_apply"]


@dataclass(frozen=True)
class UrnState:
    """cs: assignments made in the current frame; ms: current size per
    cluster id (length = total clusters ever created, zeros persist)."""

    cs: tuple[int, ...] = ()
    ms: tuple[int, ...] = ()

    @property
    def K(self) -> int:
        return len(self.ms)

    @property
    def total(self) -> int:
        return sum(self.ms)

    def active_ids(self) -> list[int]:
        return [k for k, m in enumerate(self.ms) if m > 0]


def urn_frame_init(prev: UrnState, rho: float, rng: np.random.Generator) -> UrnState:
    """Start a new frame: clear cs, thin every cluster binomially."""
    if not 0.0 <= rho <= 1.0:
        raise ArgumentError(f"rho {rho} outside [0,1]")
    ms = tuple(
        m - binomial_sample(m, rho, rng) if m > 0 else 0 for m in prev.ms
    )
    return UrnState(cs=(), ms=ms)


def urn_assignment_weights(state: UrnState, alpha: float) -> np.ndarray:
    """Unnormalized weights over K existing clusters plus one new slot."""
    if alpha <= 0:
        raise ArgumentError(f"alpha {alpha} must be positive")
    return np.array(list(state.ms) + [alpha], dtype=np.float64)


def urn_apply(state: UrnState, c: int) -> UrnState:
    """Assign the next pixel to cluster c; c == K creates a cluster."""
    K = state.K
    if not 0 <= c <= K:
        raise ArgumentError(f"assignment {c} outside [0, {K}]")
    if c == K:
        ms = state.ms + (1,)
    else:
        ms = state.ms[:c] + (state.ms[c] + 1,) + state.ms[c + 1 :]
    return UrnState(cs=state.cs + (c,), ms=ms)
