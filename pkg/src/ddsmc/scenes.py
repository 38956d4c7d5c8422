"""Synthetic multi-object scenes and the on-disk dataset formats.

A scene is a set of objects moving on piecewise-linear paths through a
2-D field.
Every live object emits a Gaussian cloud of pixels per frame, each pixel
carrying a colour histogram drawn from the object's colour profile;
clutter pixels are uniform in position and colour. Ground truth boxes
span 2 object sigmas around the true center.

Files are plain CSV with headers:
    dataset: t,n,x,y,c1..c10   (frame, pixel index, position, histogram)
    truth:   t,track_id,x_min,y_min,x_max,y_max
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ArgumentError, FormatError
from .metrics import Box
from .model import COLOUR_BINS, Hyper, PATCH_TRIALS, PixelRecord

__all__ = [
    "ObjectSpec",
    "SceneConfig",
    "generate_scene",
    "default_train_scene",
    "default_test_scene",
    "benchmark_hyper",
    "save_dataset",
    "load_dataset",
    "save_truth",
    "load_truth",
]


@dataclass(frozen=True)
class ObjectSpec:
    """Piecewise-linear path through (frame, x, y) knots, alive from the
    first knot frame through the last, with a colour profile peaked on two
    bins over a flat background."""

    path: tuple[tuple[int, float, float], ...]
    colour_bins: tuple[int, int]
    peak_weights: tuple[float, float] = (0.45, 0.28)

    @property
    def birth(self) -> int:
        return self.path[0][0]

    @property
    def death(self) -> int:
        return self.path[-1][0]

    def center(self, t) -> np.ndarray:
        frames = [k[0] for k in self.path]
        return np.array([
            np.interp(t, frames, [k[1] for k in self.path]),
            np.interp(t, frames, [k[2] for k in self.path]),
        ])

    def colour_profile(self) -> np.ndarray:
        p = np.full(COLOUR_BINS, 0.02)
        p[self.colour_bins[0]] += self.peak_weights[0]
        p[self.colour_bins[1]] += self.peak_weights[1]
        return p / p.sum()


def _remap(frame: int, n_frames: int) -> int:
    """Rescale a knot frame defined on the canonical 30-frame timeline."""
    return 1 + round((frame - 1) * (n_frames - 1) / 29)


def _standard_objects(n_frames: int, variant: str) -> tuple[ObjectSpec, ...]:
    """Four objects forming two crossing pairs plus one late birth.

    Each pair shares its two colour bins with swapped peak weights, so the
    members look alike but remain statistically distinct, and the pair's
    paths braid: they weave across each other several times while running
    close together, then drift apart gradually before the final split.
    Assignments inside such a window are individually cheap to get wrong
    but poison the cluster statistics that every later frame is scored
    against, which is what makes proposal quality matter. The train and
    test variants use different trajectories over the same palette, so a
    proposal fitted on one cannot memorize the other.
    """
    if variant == "train":
        knots = (
            ((
                (1, 14, 50), (5, 36, 57), (8, 52, 59), (11, 68, 57),
                (14, 84, 59), (17, 100, 57), (20, 116, 59), (23, 132, 63),
                (26, 148, 70), (30, 168, 82),
            ), (0, 1)),
            ((
                (1, 14, 66), (5, 36, 59), (8, 52, 57), (11, 68, 59),
                (14, 84, 57), (17, 100, 59), (20, 116, 57), (23, 132, 51),
                (26, 148, 42), (30, 166, 24),
            ), (1, 0)),
            ((
                (1, 188, 30), (6, 160, 26), (9, 142, 24), (11, 130, 22),
                (14, 116, 20), (17, 102, 22), (20, 88, 20), (23, 74, 22),
                (25, 66, 24), (27, 58, 30), (30, 46, 44),
            ), (5, 6)),
            ((
                (9, 128, 8), (11, 132, 20), (14, 116, 22), (17, 102, 20),
                (20, 88, 22), (23, 74, 20), (25, 66, 16), (27, 56, 12),
                (30, 44, 10),
            ), (6, 5)),
        )
    elif variant == "test":
        knots = (
            ((
                (1, 10, 40), (4, 27, 46), (7, 44, 48), (10, 61, 46),
                (13, 78, 48), (16, 95, 46), (19, 112, 48), (22, 129, 46),
                (24, 140, 46), (26, 151, 50), (28, 162, 58), (30, 174, 74),
            ), (0, 1)),
            ((
                (1, 10, 54), (4, 27, 48), (7, 44, 46), (10, 61, 48),
                (13, 78, 46), (16, 95, 48), (19, 112, 46), (22, 129, 48),
                (24, 140, 48), (26, 151, 44), (28, 162, 36), (30, 172, 20),
            ), (1, 0)),
            ((
                (1, 192, 78), (5, 168, 73), (8, 150, 70), (10, 138, 68),
                (13, 124, 70), (16, 110, 68), (19, 96, 70), (22, 82, 68),
                (25, 68, 70), (27, 60, 74), (30, 48, 84),
            ), (5, 6)),
            ((
                (8, 162, 86), (10, 140, 70), (13, 124, 68), (16, 110, 70),
                (19, 96, 68), (22, 82, 70), (25, 68, 68), (27, 58, 64),
                (30, 46, 48),
            ), (6, 5)),
        )
    else:
        raise ArgumentError(f"unknown scene variant {variant!r}")
    return tuple(
        ObjectSpec(_remap_path(path, n_frames), bins) for path, bins in knots
    )


def _remap_path(path, n_frames: int):
    """Remap knot frames to a new timeline, collapsing knots that land on
    the same frame (first wins, except the death knot keeps its position)."""
    mapped = [(_remap(f, n_frames), x, y) for f, x, y in path]
    dedup = [mapped[0]]
    for knot in mapped[1:]:
        if knot[0] > dedup[-1][0]:
            dedup.append(knot)
    if dedup[-1][0] == mapped[-1][0]:
        dedup[-1] = mapped[-1]
    return tuple(dedup)


@dataclass(frozen=True)
class SceneConfig:
    n_frames: int = 30
    width: float = 200.0
    height: float = 100.0
    pixels_per_object: int = 25
    clutter: int = 5
    sigma: float = 3.0
    motion_noise: float = 1.0
    trials: int = PATCH_TRIALS
    objects: tuple[ObjectSpec, ...] = ()

    def validate(self) -> "SceneConfig":
        if self.n_frames < 1 or self.pixels_per_object < 1:
            raise ArgumentError("n_frames and pixels_per_object must be >= 1")
        if self.clutter < 0 or self.sigma <= 0 or self.motion_noise < 0:
            raise ArgumentError("clutter >= 0, sigma > 0 and motion_noise >= 0 required")
        for o in self.objects:
            frames = [k[0] for k in o.path]
            if any(nxt <= prev for nxt, prev in zip(frames[1:], frames)):
                raise ArgumentError("path knot frames must strictly increase")
            if not 1 <= o.birth <= o.death <= self.n_frames:
                raise ArgumentError(f"object lifetime [{o.birth}, {o.death}] outside scene")
        return self

    def with_standard_objects(self, variant: str) -> "SceneConfig":
        return SceneConfig(
            self.n_frames, self.width, self.height, self.pixels_per_object,
            self.clutter, self.sigma, self.motion_noise, self.trials,
            _standard_objects(self.n_frames, variant),
        )


def default_train_scene() -> tuple[SceneConfig, int]:
    return SceneConfig().with_standard_objects("train").validate(), 101


def default_test_scene() -> tuple[SceneConfig, int]:
    return SceneConfig().with_standard_objects("test").validate(), 202


def benchmark_hyper(trials: int = PATCH_TRIALS) -> Hyper:
    """Hyperparameters matched to pixel-scale synthetic scenes.

    The defaults in `Hyper` assume normalized video coordinates; these
    rescale the position prior so a fresh cluster's predictive roughly
    covers the field while a fitted cluster tracks one object.
    """
    nu0 = 20.0
    sigma0 = 4.0
    return Hyper(
        alpha=1.0,
        rho=0.32,
        mu0=(100.0, 50.0),
        k0=0.02,
        nu0=nu0,
        lambda0_diag=(sigma0**2 * (nu0 - 3.0), sigma0**2 * (nu0 - 3.0)),
        q0=1.0,
        m_aux=10,
        trials=trials,
    )


def generate_scene(config: SceneConfig, seed: int):
    """(records, gt_tracks): the pixel sequence and per-object truth boxes."""
    config.validate()
    g = rng.generator(seed, rng.SCENE)
    records: list[PixelRecord] = []
    gt: dict[int, dict[int, Box]] = {}
    clutter_p = np.full(COLOUR_BINS, 1.0 / COLOUR_BINS)
    for t in range(1, config.n_frames + 1):
        pos_rows = []
        col_rows = []
        for tid, obj in enumerate(config.objects):
            if not obj.birth <= t <= obj.death:
                continue
            c = obj.center(t)
            if config.motion_noise > 0:
                c = c + g.normal(0.0, config.motion_noise, size=2)
            pos_rows.append(g.normal(c, config.sigma, size=(config.pixels_per_object, 2)))
            col_rows.append(
                g.multinomial(config.trials, obj.colour_profile(), size=config.pixels_per_object)
            )
            h = 2.0 * config.sigma
            gt.setdefault(tid, {})[t] = Box(c[0] - h, c[1] - h, c[0] + h, c[1] + h)
        if config.clutter:
            u = g.uniform(0.0, 1.0, size=(config.clutter, 2))
            pos_rows.append(u * [config.width, config.height])
            col_rows.append(g.multinomial(config.trials, clutter_p, size=config.clutter))
        if not pos_rows:
            continue
        pos = np.concatenate(pos_rows)
        col = np.concatenate(col_rows)
        order = g.permutation(pos.shape[0])
        for n, o in enumerate(order, start=1):
            records.append(
                PixelRecord.create(t, n, pos[o], col[o], trials=config.trials)
            )
    return records, gt


# ---------------------------------------------------------------------------
# file formats

DATASET_HEADER = ["t", "n", "x", "y"] + [f"c{i}" for i in range(1, COLOUR_BINS + 1)]
TRUTH_HEADER = ["t", "track_id", "x_min", "y_min", "x_max", "y_max"]


def save_dataset(records: list[PixelRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for r in records:
            w.writerow(
                [r.t, r.n, f"{r.pos[0]:.17g}", f"{r.pos[1]:.17g}"] + [int(c) for c in r.col]
            )


def load_dataset(path: str, trials: int = PATCH_TRIALS) -> list[PixelRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != DATASET_HEADER:
        raise FormatError(path, 1, f"expected header {','.join(DATASET_HEADER)}")
    records = []
    prev_t, prev_n = 0, 0
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            if len(row) != 4 + COLOUR_BINS:
                raise ValueError(f"expected {4 + COLOUR_BINS} fields, got {len(row)}")
            t, n = int(row[0]), int(row[1])
            pos = (float(row[2]), float(row[3]))
            col = [int(v) for v in row[4:]]
            rec = PixelRecord.create(t, n, pos, col, trials=trials)
        except (ValueError, ArgumentError) as err:
            raise FormatError(path, ln, str(err))
        if t < prev_t:
            raise FormatError(path, ln, f"frame {t} after frame {prev_t}")
        expected = prev_n + 1 if t == prev_t else 1
        if t == prev_t and n != expected or t > prev_t and n != 1:
            raise FormatError(path, ln, f"pixel index {n}, expected {expected if t == prev_t else 1}")
        prev_t, prev_n = t, n
        records.append(rec)
    if not records:
        raise FormatError(path, 1, "dataset holds no pixel rows")
    return records


def save_truth(gt: dict[int, dict[int, Box]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRUTH_HEADER)
        for tid in sorted(gt):
            for t in sorted(gt[tid]):
                b = gt[tid][t]
                w.writerow(
                    [t, tid]
                    + [f"{v:.17g}" for v in (b.x_min, b.y_min, b.x_max, b.y_max)]
                )


def load_truth(path: str) -> dict[int, dict[int, Box]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRUTH_HEADER:
        raise FormatError(path, 1, f"expected header {','.join(TRUTH_HEADER)}")
    gt: dict[int, dict[int, Box]] = {}
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            if len(row) != 6:
                raise ValueError(f"expected 6 fields, got {len(row)}")
            t, tid = int(row[0]), int(row[1])
            box = Box(*(float(v) for v in row[2:]))
        except ValueError as err:
            raise FormatError(path, ln, str(err))
        if t < 1:
            raise FormatError(path, ln, f"frame index {t} < 1")
        if box.x_max <= box.x_min or box.y_max <= box.y_min:
            raise FormatError(path, ln, "degenerate box")
        if t in gt.get(tid, {}):
            raise FormatError(path, ln, f"duplicate row for track {tid} frame {t}")
        gt.setdefault(tid, {})[t] = box
    return gt
