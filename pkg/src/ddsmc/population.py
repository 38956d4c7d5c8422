"""Vectorized DDPMO population program.

Advances all P particles in lockstep through the pixel sequence with
numpy array operations; cluster slots live in padded (P, K_cap) arrays
that grow on demand. Semantically equivalent to the scalar operations in
`model.py` (cross-checked in tests); this is the path the engine and all
experiments run.

Arrays per cluster slot: urn size ms, NIW sufficient statistics
(n, sx, sy, sxx, sxy, syy) and Dirichlet-multinomial statistics
(dmc counts, dmm observation count). Slots at index >= kcount[p] or with
ms == 0 hold all-zero statistics; an all-zero slot is exactly the base
measure, which is what makes mid-frame births free.

gammaln is needed per observation but only ever at integer offsets from
the hyperparameters, so lookup tables over those integer grids replace
special-function calls on the hot path.
"""
from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from . import rng
from .errors import ArgumentError, StateError
from .model import COLOUR_BINS, Hyper, PixelRecord

__all__ = ["DdpmoPopulation"]


class _GammalnGrid:
    """gammaln(offset + step * j) for integer j, extended on demand."""

    def __init__(self, offset: float, step: float, size: int = 512):
        self.offset = offset
        self.step = step
        self.table = gammaln(offset + step * np.arange(size))

    def take(self, j: np.ndarray) -> np.ndarray:
        top = int(j.max(initial=0))
        if top >= self.table.size:
            size = max(self.table.size * 2, top + 64)
            self.table = gammaln(self.offset + self.step * np.arange(size))
        return self.table[j]


class DdpmoPopulation:
    """PopulationProgram over a validated, (t, n)-sorted pixel sequence."""

    def __init__(
        self,
        records: list[PixelRecord],
        hyper: Hyper,
        master_seed: int,
        collect_predictions: bool = False,
        k_cap: int = 8,
    ):
        if not records:
            raise ArgumentError("empty pixel sequence")
        hyper.validate()
        self.hyper = hyper
        self.seed = master_seed
        self.collect_predictions = collect_predictions
        self.n_steps = len(records)

        self.pos = np.array([r.pos for r in records], dtype=np.float64)
        self.col = np.array([r.col for r in records], dtype=np.int64)
        self.t = np.array([r.t for r in records], dtype=np.int64)
        # log multinomial coefficient of each observed histogram
        self.colcoef = gammaln(hyper.trials + 1) - gammaln(self.col + 1).sum(axis=1)
        prev_t = np.concatenate([[0], self.t[:-1]])
        self.frame_advance = (self.t - prev_t).astype(np.int64)
        if np.any(self.frame_advance < 0):
            raise ArgumentError("records not sorted by frame")
        self.frame_end = np.zeros(self.n_steps, dtype=bool)
        self.frame_end[:-1] = self.t[:-1] != self.t[1:]
        self.frame_end[-1] = True

        self.mu0 = np.asarray(hyper.mu0, dtype=np.float64)
        self.Lambda0 = np.diag(hyper.lambda0_diag).astype(np.float64)
        # gammaln grids, all indexed by integer observation counts
        nu0 = hyper.nu0
        self._g_dof_hi = _GammalnGrid((nu0 + 1.0) / 2.0, 0.5)  # (dof+2)/2 at n=j
        self._g_dof_lo = _GammalnGrid((nu0 - 1.0) / 2.0, 0.5)  # dof/2 at n=j
        q_total = hyper.q0 * COLOUR_BINS
        self._g_a_total = _GammalnGrid(q_total, float(hyper.trials))  # gammaln(A) at m=j
        self._g_a_bin = _GammalnGrid(hyper.q0, 1.0)  # gammaln(q0 + count)

        self.particles = 0
        self.cur_frame = 0
        self.snapshots: list[dict] = []

    # -- allocation -------------------------------------------------------

    def init(self, particles: int) -> None:
        self.particles = particles
        self.k_cap = 8
        self.cur_frame = 0
        self.snapshots = []
        self._lanes = np.arange(particles)
        P, K = particles, self.k_cap
        self.ms = np.zeros((P, K))
        self.kcount = np.zeros(P, dtype=np.int64)
        self.n = np.zeros((P, K))
        self.sx = np.zeros((P, K))
        self.sy = np.zeros((P, K))
        self.sxx = np.zeros((P, K))
        self.sxy = np.zeros((P, K))
        self.syy = np.zeros((P, K))
        self.dmc = np.zeros((P, K, COLOUR_BINS), dtype=np.int64)
        self.dmm = np.zeros((P, K), dtype=np.int64)

    def _grow(self) -> None:
        old = self.k_cap
        self.k_cap = old * 2
        pad2 = ((0, 0), (0, old))
        self.ms = np.pad(self.ms, pad2)
        self.n = np.pad(self.n, pad2)
        self.sx = np.pad(self.sx, pad2)
        self.sy = np.pad(self.sy, pad2)
        self.sxx = np.pad(self.sxx, pad2)
        self.sxy = np.pad(self.sxy, pad2)
        self.syy = np.pad(self.syy, pad2)
        self.dmc = np.pad(self.dmc, ((0, 0), (0, old), (0, 0)))
        self.dmm = np.pad(self.dmm, pad2)

    # -- posterior parameter blocks ---------------------------------------

    def _posterior_mean(self, n, sx, sy):
        kn = self.hyper.k0 + n
        return (self.hyper.k0 * self.mu0[0] + sx) / kn, (
            self.hyper.k0 * self.mu0[1] + sy
        ) / kn

    def _posterior_lambda(self, n, sx, sy, sxx, sxy, syy, munx, muny):
        h = self.hyper
        kn = h.k0 + n
        k0mx, k0my = h.k0 * self.mu0[0], h.k0 * self.mu0[1]
        Lxx = self.Lambda0[0, 0] + sxx + k0mx * self.mu0[0] - kn * munx * munx
        Lxy = self.Lambda0[0, 1] + sxy + k0mx * self.mu0[1] - kn * munx * muny
        Lyy = self.Lambda0[1, 1] + syy + k0my * self.mu0[1] - kn * muny * muny
        return Lxx, Lxy, Lyy

    def _predictive_blocks(self, n, sx, sy, sxx, sxy, syy):
        """(munx, muny, Sxx, Sxy, Syy, dof) of the Student-t predictive."""
        h = self.hyper
        kn = h.k0 + n
        munx, muny = self._posterior_mean(n, sx, sy)
        Lxx, Lxy, Lyy = self._posterior_lambda(n, sx, sy, sxx, sxy, syy, munx, muny)
        dof = h.nu0 + n - 1.0
        factor = (kn + 1.0) / (kn * dof)
        return munx, muny, Lxx * factor, Lxy * factor, Lyy * factor, dof

    def _t_logpdf(self, dx, dy, Sxx, Sxy, Syy, dof, n_int):
        det = Sxx * Syy - Sxy * Sxy
        if np.any(det <= 0):
            raise StateError("degenerate predictive scale in population state")
        maha = (dx * dx * Syy - 2.0 * dx * dy * Sxy + dy * dy * Sxx) / det
        return (
            self._g_dof_hi.take(n_int)
            - self._g_dof_lo.take(n_int)
            - np.log(dof)
            - np.log(np.pi)
            - 0.5 * np.log(det)
            - 0.5 * (dof + 2.0) * np.log1p(maha / dof)
        )

    def _t_sample(self, gen, munx, muny, Sxx, Sxy, Syy, dof):
        l11 = np.sqrt(Sxx)
        l21 = Sxy / l11
        l22 = np.sqrt(Syy - l21 * l21)
        z = gen.standard_normal(munx.shape + (2,))
        g = gen.chisquare(dof)
        s = np.sqrt(dof / g)
        x = munx + l11 * z[..., 0] * s
        y = muny + (l21 * z[..., 0] + l22 * z[..., 1]) * s
        return x, y

    # -- frame transition ---------------------------------------------------

    def begin_step(self, i: int) -> None:
        for sub in range(int(self.frame_advance[i])):
            self._frame_transition(rng.generator(self.seed, rng.MODEL, i, sub))
            self.cur_frame += 1

    def _frame_transition(self, gen: np.random.Generator) -> None:
        h = self.hyper
        ms_int = self.ms.astype(np.int64)
        survivors = ms_int - gen.binomial(ms_int, h.rho)
        survive = survivors > 0
        gone = (ms_int > 0) & ~survive
        self.ms = survivors.astype(np.float64)

        rows, cols = np.nonzero(survive)
        if rows.size and h.m_aux > 0:
            # positions: draw m_aux pseudo-points exchangeably from the old
            # cluster's predictive, accumulate them as the new statistics
            scr = [a[rows, cols].copy() for a in (self.n, self.sx, self.sy, self.sxx, self.sxy, self.syy)]
            acc = [np.zeros(rows.size) for _ in range(5)]
            for _ in range(h.m_aux):
                munx, muny, Sxx, Sxy, Syy, dof = self._predictive_blocks(*scr)
                px, py = self._t_sample(gen, munx, muny, Sxx, Sxy, Syy, dof)
                for target in (scr[1:], acc):
                    target[0] += px
                    target[1] += py
                    target[2] += px * px
                    target[3] += px * py
                    target[4] += py * py
                scr[0] += 1.0
            self.n[rows, cols] = float(h.m_aux)
            for arr, a in zip((self.sx, self.sy, self.sxx, self.sxy, self.syy), acc):
                arr[rows, cols] = a
            # colours: same scheme with Dirichlet-multinomial draws
            scr_c = self.dmc[rows, cols].astype(np.float64)
            acc_c = np.zeros_like(scr_c)
            for _ in range(h.m_aux):
                a = h.q0 + scr_c
                gam = gen.standard_gamma(a)
                p = gam / gam.sum(axis=1, keepdims=True)
                draws = gen.multinomial(h.trials, p)
                scr_c += draws
                acc_c += draws
            self.dmc[rows, cols] = acc_c.astype(np.int64)
            self.dmm[rows, cols] = h.m_aux
        elif rows.size:
            # m_aux = 0: surviving clusters restart from the base measure
            self._zero_slots(rows, cols)

        g_rows, g_cols = np.nonzero(gone)
        if g_rows.size:
            self._zero_slots(g_rows, g_cols)

    def _zero_slots(self, rows, cols) -> None:
        for arr in (self.n, self.sx, self.sy, self.sxx, self.sxy, self.syy, self.dmm):
            arr[rows, cols] = 0
        self.dmc[rows, cols] = 0

    # -- engine protocol ----------------------------------------------------

    def prior_probs(self, i: int) -> np.ndarray:
        # growth keeps kcount < k_cap, so the new-cluster column always fits
        w = self.ms.copy()
        w[self._lanes, self.kcount] = self.hyper.alpha
        return w / w.sum(axis=1, keepdims=True)

    def apply(self, i: int, choices: np.ndarray) -> np.ndarray:
        lanes = self._lanes
        x, y = self.pos[i]
        colv = self.col[i]
        births = choices == self.kcount

        n_c = self.n[lanes, choices]
        loglik = self._t_logpdf(
            *self._chosen_t_blocks(lanes, choices, x, y),
            n_int=n_c.astype(np.int64),
        )
        loglik += self._dm_logpmf_chosen(i, lanes, choices)

        # incorporate the observation into the chosen slot
        self.ms[lanes, choices] += 1.0
        self.n[lanes, choices] += 1.0
        self.sx[lanes, choices] += x
        self.sy[lanes, choices] += y
        self.sxx[lanes, choices] += x * x
        self.sxy[lanes, choices] += x * y
        self.syy[lanes, choices] += y * y
        self.dmc[lanes, choices] += colv
        self.dmm[lanes, choices] += 1
        self.kcount += births

        if self.collect_predictions and self.frame_end[i]:
            self._take_snapshot(i)
        if int(self.kcount.max()) >= self.k_cap:
            self._grow()
        return loglik

    def _chosen_t_blocks(self, lanes, choices, x, y):
        n = self.n[lanes, choices]
        sx = self.sx[lanes, choices]
        sy = self.sy[lanes, choices]
        sxx = self.sxx[lanes, choices]
        sxy = self.sxy[lanes, choices]
        syy = self.syy[lanes, choices]
        munx, muny, Sxx, Sxy, Syy, dof = self._predictive_blocks(n, sx, sy, sxx, sxy, syy)
        return x - munx, y - muny, Sxx, Sxy, Syy, dof

    def _dm_logpmf_chosen(self, i, lanes, choices):
        counts = self.dmc[lanes, choices]  # (P, 10)
        m = self.dmm[lanes, choices]
        per_bin = (self._g_a_bin.take(counts + self.col[i]) - self._g_a_bin.take(counts)).sum(axis=1)
        return self.colcoef[i] + self._g_a_total.take(m) - self._g_a_total.take(m + 1) + per_bin

    def gather(self, idx: np.ndarray) -> None:
        self.ms = self.ms[idx]
        self.kcount = self.kcount[idx]
        self.n = self.n[idx]
        self.sx = self.sx[idx]
        self.sy = self.sy[idx]
        self.sxx = self.sxx[idx]
        self.sxy = self.sxy[idx]
        self.syy = self.syy[idx]
        self.dmc = self.dmc[idx]
        self.dmm = self.dmm[idx]

    # -- features for learned proposals --------------------------------------

    def features(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(features (P,43), available (P,), nearest ids (P,3)).

        Distances are raw pixels; any rescaling is the proposal's concern.
        Rows with fewer than 3 active clusters have `available` False and
        zeroed features.
        """
        P = self.particles
        x, y = self.pos[i]
        active = self.ms > 0
        k_active = active.sum(axis=1)
        ok = k_active >= 3

        munx, muny = self._posterior_mean(self.n, self.sx, self.sy)
        d2 = (munx - x) ** 2 + (muny - y) ** 2
        d2[~active] = np.inf
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :3]
        rows3 = self._lanes[:, None]
        dists = np.sqrt(d2[rows3, nearest])
        dists[~ok] = 0.0
        nearest = np.where(ok[:, None], nearest, 0)

        a = self.hyper.q0 + self.dmc[rows3, nearest]  # (P, 3, 10)
        ps = a / a.sum(axis=2, keepdims=True)
        ps[~ok] = 0.0

        feat = np.zeros((P, 43))
        for j in range(3):
            feat[:, j * 11 : j * 11 + 10] = ps[:, j]
            feat[:, j * 11 + 10] = dists[:, j]
        feat[:, 33:] = self.col[i] / float(self.hyper.trials)
        feat[~ok, 33:] = 0.0
        return feat, ok, nearest

    # -- prediction snapshots -------------------------------------------------

    def _take_snapshot(self, i: int) -> None:
        kmax = int(self.kcount.max())
        sl = slice(0, kmax)
        n, sx, sy = self.n[:, sl], self.sx[:, sl], self.sy[:, sl]
        munx, muny = self._posterior_mean(n, sx, sy)
        Lxx, Lxy, Lyy = self._posterior_lambda(
            n, sx, sy, self.sxx[:, sl], self.sxy[:, sl], self.syy[:, sl], munx, muny
        )
        denom = self.hyper.nu0 + n - 3.0
        active = self.ms[:, sl] > 0
        if np.any(active & (denom <= 0)):
            raise StateError("posterior covariance undefined: nu_n <= d + 1")
        denom = np.where(denom > 0, denom, 1.0)
        a = self.hyper.q0 + self.dmc[:, sl]
        self.snapshots.append(
            {
                "t": self.cur_frame,
                "step": i,
                "ms": self.ms[:, sl].astype(np.int64),
                "kcount": self.kcount.copy(),
                "mu": np.stack([munx, muny], axis=-1),
                "Sigma": np.stack([Lxx / denom, Lxy / denom, Lyy / denom], axis=-1),
                "ps": a / a.sum(axis=2, keepdims=True),
            }
        )

    # -- invariants (used by tests) -------------------------------------------

    def check_invariants(self) -> None:
        assert np.all(self.ms >= 0)
        unborn = np.arange(self.k_cap)[None, :] >= self.kcount[:, None]
        assert np.all(self.ms[unborn] == 0)
        assert np.all(self.n[unborn] == 0)
        zero_stat = self.n == 0
        for arr in (self.sx, self.sy, self.sxx, self.sxy, self.syy):
            assert np.all(arr[zero_stat] == 0)
        assert np.all(self.dmc.sum(axis=2) == self.dmm * self.hyper.trials)
