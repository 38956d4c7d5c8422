"""Shared builders for model-level tests."""
import numpy as np

from ddsmc.model import Hyper, PixelRecord

# rho=0 and m_aux=0 make frame transitions deterministic, so particle
# trajectories can be replayed through the scalar model exactly.
STATIC = Hyper(
    alpha=1.5,
    rho=0.0,
    k0=1.0,
    nu0=9.0,
    lambda0_diag=(25.0, 25.0),
    q0=2.0,
    m_aux=0,
)


def make_records(n_frames, per_frame, seed=0, trials=49, span=100.0):
    g = np.random.default_rng(seed)
    recs = []
    for t in range(1, n_frames + 1):
        for n in range(1, per_frame + 1):
            pos = g.uniform(0, span, size=2)
            col = g.multinomial(trials, g.dirichlet(np.ones(10)))
            recs.append(PixelRecord.create(t, n, pos, col, trials=trials))
    return recs
