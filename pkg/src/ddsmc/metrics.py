"""Tracking quality metrics over axis-aligned boxes.

Frame-level: detections and ground truth boxes are matched one to one by
maximizing total IoU; frame detection accuracy is the matched IoU mass
over the mean object count. Sequence-level: whole tracks are matched one
to one on their temporal IoU overlap, giving STDA and its normalized
form ATA.

Detections come from end-of-frame cluster snapshots: every cluster with
at least `min_size` assigned pixels becomes a box centered on its
posterior mean spanning 2 posterior standard deviations per axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .engine import RunResult, lineage_matrix
from .errors import ArgumentError

__all__ = [
    "Box",
    "iou",
    "frame_detection_accuracy",
    "sequence_fda",
    "track_to_track_overlap",
    "sequence_ata",
    "boxes_from_snapshot_row",
    "particle_tracks",
    "evaluate_run",
    "DEFAULT_MIN_SIZE",
]

DEFAULT_MIN_SIZE = 3


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def area(self) -> float:
        return max(0.0, self.x_max - self.x_min) * max(0.0, self.y_max - self.y_min)


def iou(a: Box, b: Box) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union if union > 0 else 0.0


def _match_matrix(score: np.ndarray):
    """Maximum-total-score one-to-one matching; returns row/col indices."""
    if score.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return linear_sum_assignment(-score)


def frame_detection_accuracy(gt: list[Box], det: list[Box]) -> float:
    """Matched IoU mass over the mean of object counts. Both empty: 1."""
    if not gt and not det:
        return 1.0
    if not gt or not det:
        return 0.0
    score = np.array([[iou(g, d) for d in det] for g in gt])
    rows, cols = _match_matrix(score)
    return float(score[rows, cols].sum()) / ((len(gt) + len(det)) / 2.0)


def sequence_fda(gt: dict[int, list[Box]], det: dict[int, list[Box]]) -> float:
    """Mean frame detection accuracy over frames where anything exists."""
    frames = sorted(set(gt) | set(det))
    scored = [
        frame_detection_accuracy(gt.get(t, []), det.get(t, []))
        for t in frames
        if gt.get(t) or det.get(t)
    ]
    return float(np.mean(scored)) if scored else 1.0


def track_to_track_overlap(a: dict[int, Box], b: dict[int, Box]) -> float:
    """Mean IoU over the union of the two tracks' lifetimes."""
    union = set(a) | set(b)
    if not union:
        return 0.0
    total = sum(iou(a[t], b[t]) for t in set(a) & set(b))
    return total / len(union)


def sequence_ata(
    gt_tracks: dict[int, dict[int, Box]], det_tracks: dict[int, dict[int, Box]]
) -> tuple[float, float]:
    """(ATA, STDA): matched track overlap mass, raw and normalized by the
    mean track count. No tracks on either side: ATA = 1."""
    if not gt_tracks and not det_tracks:
        return 1.0, 0.0
    if not gt_tracks or not det_tracks:
        return 0.0, 0.0
    gids = sorted(gt_tracks)
    dids = sorted(det_tracks)
    score = np.array(
        [[track_to_track_overlap(gt_tracks[g], det_tracks[d]) for d in dids] for g in gids]
    )
    rows, cols = _match_matrix(score)
    stda = float(score[rows, cols].sum())
    ata = stda / ((len(gids) + len(dids)) / 2.0)
    return ata, stda


# ---------------------------------------------------------------------------
# detections out of run snapshots


def boxes_from_snapshot_row(snap: dict, row: int, min_size: int) -> dict[int, Box]:
    """Cluster id -> box for one particle's end-of-frame state."""
    if min_size < 1:
        raise ArgumentError("min_size must be >= 1")
    out: dict[int, Box] = {}
    ms = snap["ms"][row]
    for k in np.nonzero(ms >= min_size)[0]:
        mx, my = snap["mu"][row, k]
        sxx, _, syy = snap["Sigma"][row, k]
        hx, hy = 2.0 * np.sqrt(sxx), 2.0 * np.sqrt(syy)
        out[int(k)] = Box(mx - hx, my - hy, mx + hx, my + hy)
    return out


def particle_tracks(
    snapshots: list[dict], result: RunResult, p: int, min_size: int = DEFAULT_MIN_SIZE
) -> dict[int, dict[int, Box]]:
    """Detected tracks (cluster id -> {frame -> box}) along the ancestral
    path of final particle `p`.

    Cluster ids are stable along a lineage: the urn never reuses a slot,
    so slot k at different frames is the same logical track.
    """
    if result.ancestors is None:
        raise ArgumentError("run was made without trajectory recording")
    lin = lineage_matrix(result.ancestors)
    tracks: dict[int, dict[int, Box]] = {}
    for snap in snapshots:
        row = int(lin[snap["step"], p])
        for k, box in boxes_from_snapshot_row(snap, row, min_size).items():
            tracks.setdefault(k, {})[snap["t"]] = box
    return tracks


def _tracks_to_frames(tracks: dict[int, dict[int, Box]]) -> dict[int, list[Box]]:
    frames: dict[int, list[Box]] = {}
    for _, per_frame in sorted(tracks.items()):
        for t, box in per_frame.items():
            frames.setdefault(t, []).append(box)
    return frames


def evaluate_run(
    snapshots: list[dict],
    result: RunResult,
    gt_tracks: dict[int, dict[int, Box]],
    min_size: int = DEFAULT_MIN_SIZE,
    mode: str = "map",
) -> dict:
    """Score a run against ground truth tracks.

    mode "map": the single highest-weight final particle's tracks.
    mode "weighted": final-weight average of per-particle scores, with
    shared lineages computed once.
    """
    if mode not in ("map", "weighted"):
        raise ArgumentError(f"unknown evaluation mode {mode!r}")
    gt_frames = _tracks_to_frames(gt_tracks)

    def score_particle(p: int) -> tuple[float, float, float, int]:
        tracks = particle_tracks(snapshots, result, p, min_size)
        sfda = sequence_fda(gt_frames, _tracks_to_frames(tracks))
        ata, stda = sequence_ata(gt_tracks, tracks)
        return sfda, ata, stda, len(tracks)

    if mode == "map":
        p = int(np.argmax(result.final_weights))
        sfda, ata, stda, n_tracks = score_particle(p)
        return {
            "mode": mode,
            "sfda": sfda,
            "ata": ata,
            "stda": stda,
            "mean_final_log_weight": result.mean_final_log_weight,
            "log_marginal": result.log_marginal,
            "n_gt_tracks": len(gt_tracks),
            "n_det_tracks": n_tracks,
        }

    lin = lineage_matrix(result.ancestors)
    ends = np.array([s["step"] for s in snapshots], dtype=np.int64)
    memo: dict[tuple, tuple] = {}
    acc = np.zeros(3)
    mean_tracks = 0.0
    for p in range(result.particles):
        w = float(result.final_weights[p])
        if w == 0.0:
            continue
        key = tuple(lin[ends, p])
        if key not in memo:
            memo[key] = score_particle(p)
        sfda, ata, stda, n_tracks = memo[key]
        acc += w * np.array([sfda, ata, stda])
        mean_tracks += w * n_tracks
    return {
        "mode": mode,
        "sfda": float(acc[0]),
        "ata": float(acc[1]),
        "stda": float(acc[2]),
        "mean_final_log_weight": result.mean_final_log_weight,
        "log_marginal": result.log_marginal,
        "n_gt_tracks": len(gt_tracks),
        "n_det_tracks": mean_tracks,
    }
