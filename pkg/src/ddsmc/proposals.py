"""Data-driven assignment proposals.

The assignment choice at each pixel is compressed to five classes: the
three nearest live clusters by posterior mean, "some other live cluster",
and "new cluster". A proposal produces a distribution over those classes
(a small neural net, or a fixed hand-tuned vector), which is then mapped
back onto the concrete per-particle choice columns and mixed with the
model prior so support is never lost.

Training data is harvested from the surviving lineages of a completed
run: every ancestral node contributes (features, chosen class) weighted
by the total final weight of its descendants.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import rng
from .engine import Hooks, RunResult, lineage_matrix
from .errors import ArgumentError, FormatError, TrainingDivergedError
from .model import COLOUR_BINS, Hyper, ModelState, PixelRecord

__all__ = [
    "N_FEATURES",
    "N_CLASSES",
    "DEFAULT_P_STAR",
    "DEFAULT_HANDTUNED_P",
    "extract_features",
    "apply_distance_scaling",
    "ProposalNet",
    "nn_init",
    "nn_forward",
    "nn_loss_and_grad",
    "nn_train",
    "save_net",
    "load_net",
    "TrainingSet",
    "HarvestHooks",
    "replay_with_hooks",
    "harvest_training_data",
    "save_training_set",
    "load_training_set",
    "map_to_choice_probs",
    "HandtunedProposal",
    "LearnedProposal",
]

N_FEATURES = 43
N_CLASSES = 5  # nearest-1, nearest-2, nearest-3, other live, new
HIDDEN = 100
DISTANCE_COLS = (10, 21, 32)
DISTANCE_SCALE = 100.0

DEFAULT_P_STAR = 0.8
# rounded class frequencies of a reference harvested corpus
DEFAULT_HANDTUNED_P = (0.85, 0.097, 0.02, 0.003, 0.03)


# ---------------------------------------------------------------------------
# features


def extract_features(state: ModelState, hyper: Hyper, px: PixelRecord):
    """Scalar feature extractor: (features (43,), nearest ids (3,)) or
    None when fewer than 3 clusters are live.

    Distances stay in raw position units; `apply_distance_scaling` is
    applied at net boundaries.
    """
    alive = [k for k, m in enumerate(state.urn.ms) if m > 0]
    if len(alive) < 3:
        return None
    dists = np.array(
        [float(np.linalg.norm(state.thetas[k].positions.posterior_params()[0] - px.pos)) for k in alive]
    )
    order = np.argsort(dists, kind="stable")[:3]
    feat = np.zeros(N_FEATURES)
    nearest = []
    for j, o in enumerate(order):
        k = alive[int(o)]
        nearest.append(k)
        feat[j * 11 : j * 11 + COLOUR_BINS] = state.thetas[k].colours.state_info()
        feat[j * 11 + COLOUR_BINS] = dists[int(o)]
    feat[33:] = px.col / float(hyper.trials)
    return feat, np.array(nearest, dtype=np.int64)


def apply_distance_scaling(feat: np.ndarray, normalize_distances: bool) -> np.ndarray:
    if not normalize_distances:
        return feat
    out = feat.copy()
    out[..., DISTANCE_COLS] = out[..., DISTANCE_COLS] / DISTANCE_SCALE
    return out


# ---------------------------------------------------------------------------
# the net: 43 -> 100 tanh -> 5 softmax


@dataclass
class ProposalNet:
    W1: np.ndarray  # (100, 43)
    b1: np.ndarray  # (100,)
    W2: np.ndarray  # (5, 100)
    b2: np.ndarray  # (5,)
    normalize_distances: bool = True

    def copy(self) -> "ProposalNet":
        return ProposalNet(
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
            self.normalize_distances,
        )


def nn_init(seed: int, normalize_distances: bool = True) -> ProposalNet:
    g = rng.generator(seed, rng.TRAIN, 0)
    lim1 = np.sqrt(6.0 / (N_FEATURES + HIDDEN))
    lim2 = np.sqrt(6.0 / (HIDDEN + N_CLASSES))
    return ProposalNet(
        W1=g.uniform(-lim1, lim1, size=(HIDDEN, N_FEATURES)),
        b1=np.zeros(HIDDEN),
        W2=g.uniform(-lim2, lim2, size=(N_CLASSES, HIDDEN)),
        b2=np.zeros(N_CLASSES),
        normalize_distances=normalize_distances,
    )


def nn_forward(net: ProposalNet, feats: np.ndarray) -> np.ndarray:
    """Class probabilities, rows on the simplex. `feats` is (M, 43),
    already distance-scaled."""
    h = np.tanh(feats @ net.W1.T + net.b1)
    logits = h @ net.W2.T + net.b2
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def nn_loss_and_grad(net: ProposalNet, feats, classes, weights):
    """Weighted negative log likelihood of the chosen classes and its
    gradient, normalized by total weight."""
    M = feats.shape[0]
    wsum = float(weights.sum())
    h = np.tanh(feats @ net.W1.T + net.b1)
    logits = h @ net.W2.T + net.b2
    logits -= logits.max(axis=1, keepdims=True)
    loge = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    loss = -float(np.sum(weights * loge[np.arange(M), classes])) / wsum

    p = np.exp(loge)
    dlogits = p
    dlogits[np.arange(M), classes] -= 1.0
    dlogits *= (weights / wsum)[:, None]
    gW2 = dlogits.T @ h
    gb2 = dlogits.sum(axis=0)
    dh = (dlogits @ net.W2) * (1.0 - h * h)
    gW1 = dh.T @ feats
    gb1 = dh.sum(axis=0)
    return loss, ProposalNet(gW1, gb1, gW2, gb2, net.normalize_distances)


def nn_train(
    data: "TrainingSet",
    epochs: int = 50,
    lr: float = 0.5,
    seed: int = 0,
    batch: int = 64,
    normalize_distances: bool = True,
) -> tuple[ProposalNet, list[float]]:
    """Minibatch SGD on the harvested corpus; returns the net and the
    per-epoch loss trace.

    Divergence means the epoch loss went non-finite or blew up past 100x
    the untrained baseline; both indicate the step size is too large.
    """
    if data.features.shape[0] == 0:
        raise ArgumentError("empty training set")
    net = nn_init(seed, normalize_distances)
    feats = apply_distance_scaling(data.features, normalize_distances)
    M = feats.shape[0]
    baseline, _ = nn_loss_and_grad(net, feats, data.classes, data.weights)
    ceiling = 100.0 * max(baseline, 1.0)
    g = rng.generator(seed, rng.TRAIN, 1)
    trace = []
    for epoch in range(epochs):
        order = g.permutation(M)
        for lo in range(0, M, batch):
            idx = order[lo : lo + batch]
            _, grad = nn_loss_and_grad(net, feats[idx], data.classes[idx], data.weights[idx])
            net.W1 -= lr * grad.W1
            net.b1 -= lr * grad.b1
            net.W2 -= lr * grad.W2
            net.b2 -= lr * grad.b2
        loss, _ = nn_loss_and_grad(net, feats, data.classes, data.weights)
        if not np.isfinite(loss) or loss > ceiling:
            raise TrainingDivergedError(
                f"loss {loss:.3g} at epoch {epoch + 1} (baseline {baseline:.3g}); "
                "lower the learning rate"
            )
        trace.append(loss)
    return net, trace


# ---------------------------------------------------------------------------
# net file format (versioned text)

NET_MAGIC = "ddsmc-net-v1"


def save_net(net: ProposalNet, path: str) -> None:
    buf = io.StringIO()
    buf.write(f"{NET_MAGIC}\n")
    buf.write(f"dims {N_FEATURES} {HIDDEN} {N_CLASSES}\n")
    buf.write(f"normalize_distances {int(net.normalize_distances)}\n")
    for name in ("W1", "b1", "W2", "b2"):
        arr = getattr(net, name)
        buf.write(f"{name} {' '.join(str(d) for d in arr.shape)}\n")
        for row in np.atleast_2d(arr):
            buf.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_net(path: str) -> ProposalNet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != NET_MAGIC:
        raise FormatError(path, 1, f"expected header {NET_MAGIC!r}")
    try:
        dims = tuple(int(v) for v in lines[1].split()[1:])
        if dims != (N_FEATURES, HIDDEN, N_CLASSES):
            raise FormatError(path, 2, f"unsupported dims {dims}")
        norm = bool(int(lines[2].split()[1]))
        arrays = {}
        ln = 3
        for name in ("W1", "b1", "W2", "b2"):
            head = lines[ln].split()
            if head[0] != name:
                raise FormatError(path, ln + 1, f"expected array {name!r}")
            shape = tuple(int(v) for v in head[1:])
            rows = shape[0] if len(shape) == 2 else 1
            block = [[float(v) for v in lines[ln + 1 + r].split()] for r in range(rows)]
            ln += 1 + rows
            arrays[name] = np.array(block).reshape(shape)
    except FormatError:
        raise
    except (IndexError, ValueError) as err:
        raise FormatError(path, ln + 1, f"malformed net file: {err}")
    return ProposalNet(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"], norm)


# ---------------------------------------------------------------------------
# harvesting

@dataclass
class TrainingSet:
    features: np.ndarray  # (M, 43) raw distances
    classes: np.ndarray  # (M,) in [0, 5)
    weights: np.ndarray  # (M,) positive


class HarvestHooks(Hooks):
    """Capture per-step features and chosen classes during a run."""

    def __init__(self):
        self.feats: list[np.ndarray] = []
        self.ok: list[np.ndarray] = []
        self.classes: list[np.ndarray] = []
        self._nearest = None
        self._kcount = None

    def pre_apply(self, i, program, prior, q):
        feat, ok, nearest = program.features(i)
        self.feats.append(feat.astype(np.float32))
        self.ok.append(ok)
        self._nearest = nearest
        self._kcount = program.kcount.copy()

    def post_apply(self, i, program, choices, incr):
        cls = np.full(choices.shape, 3, dtype=np.int8)  # other live
        for j in range(3):
            cls[choices == self._nearest[:, j]] = j
        cls[choices == self._kcount] = 4  # new cluster
        self.classes.append(cls)


def replay_with_hooks(program, result: RunResult, hooks: Hooks) -> None:
    """Drive a program through a recorded run, firing hooks as the live
    engine would.

    The program must be built exactly as for the original run (same
    records, hyper, master seed) so its frame transitions replay
    bit-identically; choices and resampling indices come from the
    recording.
    """
    if result.choices is None or result.ancestors is None:
        raise ArgumentError("run was made without trajectory recording")
    program.init(result.particles)
    for i in range(result.n_steps):
        program.begin_step(i)
        prior = program.prior_probs(i)
        hooks.pre_apply(i, program, prior, prior)
        choices = result.choices[i]
        incr = program.apply(i, choices)
        hooks.post_apply(i, program, choices, incr)
        if result.resampled[i]:
            idx = result.ancestors[i + 1]
            program.gather(idx)
            hooks.post_resample(i, program, idx)


def harvest_training_data(hooks: HarvestHooks, result: RunResult) -> TrainingSet:
    """Fold a hooked run into weighted training examples.

    Each surviving ancestral node (step i, particle j) yields one example
    weighted by the summed final weight of the final particles descended
    from it; nodes with no surviving descendants or fewer than 3 live
    clusters are dropped.
    """
    if result.ancestors is None or result.choices is None:
        raise ArgumentError("run was made without trajectory recording")
    lin = lineage_matrix(result.ancestors)
    P = result.particles
    feats, classes, weights = [], [], []
    for i in range(result.n_steps):
        node_w = np.bincount(lin[i], weights=result.final_weights, minlength=P)
        keep = (node_w > 0) & hooks.ok[i]
        if not np.any(keep):
            continue
        feats.append(hooks.feats[i][keep].astype(np.float64))
        classes.append(hooks.classes[i][keep].astype(np.int64))
        weights.append(node_w[keep])
    if not feats:
        return TrainingSet(
            np.zeros((0, N_FEATURES)), np.zeros(0, dtype=np.int64), np.zeros(0)
        )
    return TrainingSet(
        np.concatenate(feats), np.concatenate(classes), np.concatenate(weights)
    )


TRAINING_MAGIC = "ddsmc-training-v1"


def save_training_set(data: TrainingSet, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"{TRAINING_MAGIC}\n")
        fh.write(f"features {N_FEATURES} classes {N_CLASSES}\n")
        fh.write(f"count {data.features.shape[0]}\n")
        for row, cls, w in zip(data.features, data.classes, data.weights):
            fh.write(" ".join(f"{v:.17g}" for v in row) + f" {cls} {w:.17g}\n")


def load_training_set(path: str) -> TrainingSet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != TRAINING_MAGIC:
        raise FormatError(path, 1, f"expected header {TRAINING_MAGIC!r}")
    try:
        count = int(lines[2].split()[1])
    except (IndexError, ValueError):
        raise FormatError(path, 3, "expected 'count <n>'")
    feats = np.zeros((count, N_FEATURES))
    classes = np.zeros(count, dtype=np.int64)
    weights = np.zeros(count)
    for r in range(count):
        ln = 3 + r
        try:
            parts = lines[ln].split()
            if len(parts) != N_FEATURES + 2:
                raise ValueError(f"expected {N_FEATURES + 2} fields, got {len(parts)}")
            feats[r] = [float(v) for v in parts[:N_FEATURES]]
            classes[r] = int(parts[N_FEATURES])
            weights[r] = float(parts[N_FEATURES + 1])
        except (IndexError, ValueError) as err:
            raise FormatError(path, ln + 1, str(err))
    if np.any(classes < 0) or np.any(classes >= N_CLASSES):
        raise FormatError(path, 4, "class labels outside [0, 5)")
    return TrainingSet(feats, classes, weights)


# ---------------------------------------------------------------------------
# class distribution -> concrete choice columns


def map_to_choice_probs(class_p, nearest, ok, program, prior):
    """Spread 5-class probabilities over the (P, C) choice grid.

    Classes 0-2 land on the nearest ids, class 4 on the new-cluster
    column, class 3 evenly over remaining live clusters (renormalized
    away when there are none). Rows with `ok` False fall back to the
    prior row unchanged.
    """
    P, C = prior.shape
    lanes = np.arange(P)
    q = np.zeros_like(prior)
    q[lanes[:, None], nearest] = class_p[:, :3]
    q[lanes, program.kcount] += class_p[:, 4]

    other = program.ms > 0
    other[lanes[:, None], nearest] = False
    n_other = other.sum(axis=1)
    has_other = n_other > 0
    share = np.where(has_other, class_p[:, 3] / np.maximum(n_other, 1), 0.0)
    q += other * share[:, None]
    # no fourth live cluster: drop that mass and renormalize the rest
    q[~has_other] /= (1.0 - class_p[~has_other, 3])[:, None]
    q[~ok] = prior[~ok]
    return q


def _mix(q, prior, ok, p_star):
    out = np.where(ok[:, None], p_star * q + (1.0 - p_star) * prior, prior)
    return out


class HandtunedProposal:
    """Fixed 5-class probabilities, mapped and mixed like the learned net."""

    kind = "handtuned"

    def __init__(self, class_p=DEFAULT_HANDTUNED_P, p_star: float = DEFAULT_P_STAR):
        class_p = np.asarray(class_p, dtype=np.float64)
        if class_p.shape != (N_CLASSES,) or np.any(class_p <= 0):
            raise ArgumentError("hand-tuned class probabilities must be 5 positive values")
        if not 0.0 <= p_star <= 1.0:
            raise ArgumentError("p_star must lie in [0, 1]")
        self.class_p = class_p / class_p.sum()
        self.p_star = p_star

    def probs(self, program, i: int, prior: np.ndarray) -> np.ndarray:
        feat, ok, nearest = program.features(i)
        if not np.any(ok):
            return prior
        class_p = np.broadcast_to(self.class_p, (prior.shape[0], N_CLASSES))
        q = map_to_choice_probs(class_p, nearest, ok, program, prior)
        return _mix(q, prior, ok, self.p_star)


class LearnedProposal:
    """Net-driven 5-class probabilities, mapped and mixed with the prior."""

    kind = "nn"

    def __init__(self, net: ProposalNet, p_star: float = DEFAULT_P_STAR):
        if not 0.0 <= p_star <= 1.0:
            raise ArgumentError("p_star must lie in [0, 1]")
        self.net = net
        self.p_star = p_star

    def probs(self, program, i: int, prior: np.ndarray) -> np.ndarray:
        feat, ok, nearest = program.features(i)
        if not np.any(ok):
            return prior
        class_p = nn_forward(self.net, apply_distance_scaling(feat, self.net.normalize_distances))
        q = map_to_choice_probs(class_p, nearest, ok, program, prior)
        return _mix(q, prior, ok, self.p_star)
