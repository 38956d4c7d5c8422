"""Step through the time-dependent urn that governs object identities.

Within a frame the urn behaves like a Chinese restaurant process whose
table sizes were carried over from the previous frame; between frames
every ball survives independently with probability 1 - rho, so stale
objects fade out instead of accumulating forever. The demo thins one
urn by hand, then simulates the first frame enough times to check the
expected number of clusters against the known harmonic-sum formula.
"""
import numpy as np

from ddsmc.stats import categorical_sample
from ddsmc.urn import UrnState, urn_apply, urn_assignment_weights, urn_frame_init

ALPHA = 1.0
RHO = 0.32


def main() -> None:
    rng = np.random.default_rng(3)

    print("== one frame transition ==")
    state = UrnState(ms=(25, 18, 3))  # cluster sizes at the end of frame t
    print(f"  end of frame t:   cluster sizes {state.ms}")
    state = urn_frame_init(state, RHO, rng)
    print(f"  start of t+1:     cluster sizes {state.ms}")
    print(f"  (each member survived with prob {1 - RHO:.2f}; "
          f"a size can reach 0 but the id persists)\n")

    print("== assigning five pixels ==")
    for pixel in range(5):
        w = urn_assignment_weights(state, ALPHA)
        probs = w / w.sum()
        c = categorical_sample(w, rng)
        label = "new cluster" if c == state.K else f"cluster {c}"
        print(f"  pixel {pixel}: probs {np.array2string(probs, precision=3)} -> {label}")
        state = urn_apply(state, c)
    print(f"  frame assignments {state.cs}, cluster sizes {state.ms}\n")

    print("== fresh-urn cluster count vs analytic value ==")
    # with no carried mass the urn is a CRP; E[K] for n=5, alpha=1
    # is 1 + 1/2 + 1/3 + 1/4 + 1/5 = 137/60
    sims, n = 20000, 5
    ks = np.empty(sims)
    for s in range(sims):
        st = UrnState()
        for _ in range(n):
            c = categorical_sample(urn_assignment_weights(st, ALPHA), rng)
            st = urn_apply(st, c)
        ks[s] = st.K
    exact = sum(1.0 / i for i in range(1, n + 1))
    print(f"  simulated E[K] = {ks.mean():.4f}   analytic 137/60 = {exact:.4f}")


if __name__ == "__main__":
    main()
