"""Globally optimal assignment of detected person boxes to ground-truth instances.

Semantics: among matchings over admissible (truth, detection) edges, take the
ones of maximum cardinality, among those the maximum total edge weight, and
among those the lexicographically smallest sorted pair list. An edge is
admissible iff IoU(body-from-head(truth), detection box) >= tau_iou; its
weight is lambda * normalized detection score + (1 - lambda) * that IoU,
with scores min-max normalized per photo (constant scores map to 0.5).

Maximizing cardinality first keeps the matching monotone under admissibility
tightening (raising tau_iou can only remove pairs, never add them), which a
pure maximum-weight objective does not guarantee.

The solver reduces to a rectangular linear sum assignment by adding a
constant bonus to every admissible edge large enough that one extra pair
always beats any redistribution of weights. A brute-force enumerator with
identical semantics serves as the test oracle for small photos.

Detection file format: line-delimited, tab-separated, UTF-8; per detection:
photo_id, detection_id, person box x/y/w/h, score, then repeated groups of
(part_id, patch x/y/w/h, activation_score).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import GLOBAL_PART_ID, Instance, atomic_write_text
from .geometry import BBox, BodyExtrapolation, DEFAULT_BODY_EXTRAPOLATION, body_from_head, iou

__all__ = [
    "Assignment",
    "Detection",
    "activations_per_instance",
    "load_detections",
    "match_bruteforce",
    "match_detections",
    "normalize_scores",
    "write_detections",
]

_WEIGHT_EPS = 1e-9


@dataclass(frozen=True)
class Detection:
    """One detector proposal: a person box with part activations."""

    detection_id: int
    person_box: BBox
    score: float
    activations: tuple[tuple[int, BBox, float], ...] = ()

    def __post_init__(self) -> None:
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")
        part_ids = [a[0] for a in self.activations]
        if len(part_ids) != len(set(part_ids)):
            raise ValueError("a part may appear at most once per detection")


@dataclass(frozen=True)
class Assignment:
    """Result of matching one photo; every id appears in at most one pair."""

    pairs: tuple[tuple[int, int], ...]  # (truth instance_id, detection_id), sorted
    unmatched_truths: tuple[int, ...]
    unmatched_detections: tuple[int, ...]
    total_weight: float = field(default=0.0, compare=False)


def normalize_scores(scores: np.ndarray) -> np.ndarray:
    """Min-max normalize detection scores within a photo; constant maps to 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return scores
    lo, hi = float(scores.min()), float(scores.max())
    if hi - lo == 0.0:
        return np.full_like(scores, 0.5)
    return (scores - lo) / (hi - lo)


def _edge_weights(
    truths: list[Instance],
    detections: list[Detection],
    tau_iou: float,
    lam: float,
    body_cfg: BodyExtrapolation,
) -> tuple[np.ndarray, np.ndarray]:
    """(admissible mask, weight matrix) over truths x detections, id-sorted."""
    if not (0.0 <= tau_iou <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("tau_iou and lambda must lie in [0, 1]")
    n, m = len(truths), len(detections)
    adm = np.zeros((n, m), dtype=bool)
    W = np.zeros((n, m))
    norm = normalize_scores(np.asarray([d.score for d in detections]))
    for i, t in enumerate(truths):
        body = body_from_head(t.head, body_cfg)
        for j, d in enumerate(detections):
            overlap = iou(body, d.person_box)
            if overlap >= tau_iou:
                adm[i, j] = True
                W[i, j] = lam * norm[j] + (1.0 - lam) * overlap
    return adm, W


def _sorted_inputs(
    truths: list[Instance], detections: list[Detection]
) -> tuple[list[Instance], list[Detection]]:
    return sorted(truths, key=lambda t: t.instance_id), sorted(detections, key=lambda d: d.detection_id)


def _assignment_from_pairs(
    pairs: list[tuple[int, int]],
    truths: list[Instance],
    detections: list[Detection],
    weight: float,
) -> Assignment:
    pairs = sorted(pairs)
    used_t = {p[0] for p in pairs}
    used_d = {p[1] for p in pairs}
    return Assignment(
        tuple(pairs),
        tuple(t.instance_id for t in truths if t.instance_id not in used_t),
        tuple(d.detection_id for d in detections if d.detection_id not in used_d),
        total_weight=weight,
    )


def _augmented(adm: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Admissible edges lifted by a bonus so cardinality dominates weight."""
    bonus = float(min(adm.shape)) + 1.0
    return np.where(adm, W + bonus, 0.0)


def _opt_value(aug: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> float:
    if rows.size == 0 or cols.size == 0:
        return 0.0
    sub = aug[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub, maximize=True)
    return float(sub[r, c].sum())


def match_detections(
    truths: list[Instance],
    detections: list[Detection],
    tau_iou: float = 0.3,
    lam: float = 0.5,
    body_cfg: BodyExtrapolation = DEFAULT_BODY_EXTRAPOLATION,
) -> Assignment:
    """Optimal truth-to-detection assignment for one photo.

    Deterministic: among optimal matchings, returns the one whose sorted
    (truth_id, detection_id) pair list is lexicographically smallest, found
    by greedily forcing the smallest pair that keeps optimality attainable.
    """
    if not (0.0 <= tau_iou <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("tau_iou and lambda must lie in [0, 1]")
    truths, detections = _sorted_inputs(truths, detections)
    if not truths or not detections:
        return _assignment_from_pairs([], truths, detections, 0.0)

    adm, W = _edge_weights(truths, detections, tau_iou, lam, body_cfg)
    aug = _augmented(adm, W)
    n, m = aug.shape
    opt = _opt_value(aug, np.arange(n), np.arange(m))

    forced: list[tuple[int, int]] = []  # (row, col) indices
    forced_sum = 0.0
    free_rows = np.ones(n, dtype=bool)
    free_cols = np.ones(m, dtype=bool)
    for i in range(n):
        if not free_rows[i]:
            continue
        for j in range(m):
            if not (free_cols[j] and adm[i, j]):
                continue
            rows = np.flatnonzero(free_rows & (np.arange(n) != i))
            cols = np.flatnonzero(free_cols & (np.arange(m) != j))
            total = forced_sum + aug[i, j] + _opt_value(aug, rows, cols)
            if total >= opt - _WEIGHT_EPS:
                forced.append((i, j))
                forced_sum += aug[i, j]
                free_rows[i] = False
                free_cols[j] = False
                break

    pairs = [(truths[i].instance_id, detections[j].detection_id) for i, j in forced]
    weight = float(sum(W[i, j] for i, j in forced))
    return _assignment_from_pairs(pairs, truths, detections, weight)


def match_bruteforce(
    truths: list[Instance],
    detections: list[Detection],
    tau_iou: float = 0.3,
    lam: float = 0.5,
    body_cfg: BodyExtrapolation = DEFAULT_BODY_EXTRAPOLATION,
) -> Assignment:
    """Exhaustive-enumeration oracle with the same semantics as match_detections.

    Refuses inputs larger than 8 truths or 8 detections.
    """
    if len(truths) > 8 or len(detections) > 8:
        raise ValueError("match_bruteforce is limited to 8 truths and 8 detections")
    if not (0.0 <= tau_iou <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("tau_iou and lambda must lie in [0, 1]")
    truths, detections = _sorted_inputs(truths, detections)
    if not truths or not detections:
        return _assignment_from_pairs([], truths, detections, 0.0)

    adm, W = _edge_weights(truths, detections, tau_iou, lam, body_cfg)
    n, m = adm.shape
    best: dict = {"card": -1, "weight": -1.0, "pairs": None}

    def id_pairs(pairs: list[tuple[int, int]]) -> list[tuple[int, int]]:
        return sorted((truths[i].instance_id, detections[j].detection_id) for i, j in pairs)

    def consider(pairs: list[tuple[int, int]], weight: float) -> None:
        card = len(pairs)
        if card < best["card"]:
            return
        if card == best["card"]:
            if weight < best["weight"] - _WEIGHT_EPS:
                return
            if weight <= best["weight"] + _WEIGHT_EPS:
                # weight tie: keep the lexicographically smaller pair list
                if id_pairs(pairs) >= id_pairs(best["pairs"]):
                    return
                weight = max(weight, best["weight"])
        best.update(card=card, weight=weight, pairs=list(pairs))

    def recurse(i: int, used_cols: list[bool], pairs: list[tuple[int, int]], weight: float) -> None:
        if i == n:
            consider(pairs, weight)
            return
        # bound: even matching every remaining truth cannot beat best's cardinality
        if len(pairs) + (n - i) < best["card"]:
            return
        for j in range(m):
            if adm[i, j] and not used_cols[j]:
                used_cols[j] = True
                pairs.append((i, j))
                recurse(i + 1, used_cols, pairs, weight + W[i, j])
                pairs.pop()
                used_cols[j] = False
        recurse(i + 1, used_cols, pairs, weight)

    recurse(0, [False] * m, [], 0.0)
    pairs = [(truths[i].instance_id, detections[j].detection_id) for i, j in best["pairs"]]
    return _assignment_from_pairs(pairs, truths, detections, best["weight"])


def activations_per_instance(
    assignment: Assignment,
    truths: list[Instance],
    detections: list[Detection],
    body_cfg: BodyExtrapolation = DEFAULT_BODY_EXTRAPOLATION,
) -> dict[int, list[tuple[int, BBox, float]]]:
    """Part activation table: instance_id -> [(part_id, patch box, score)].

    Every truth gets the global part (patch = extrapolated body box); matched
    truths additionally inherit their detection's part activations.
    """
    det_by_id = {d.detection_id: d for d in detections}
    matched = dict(assignment.pairs)
    table: dict[int, list[tuple[int, BBox, float]]] = {}
    for t in sorted(truths, key=lambda t: t.instance_id):
        rows = [(GLOBAL_PART_ID, body_from_head(t.head, body_cfg), 1.0)]
        det_id = matched.get(t.instance_id)
        if det_id is not None:
            for part_id, patch, act_score in det_by_id[det_id].activations:
                rows.append((part_id, patch, act_score))
        rows.sort(key=lambda r: r[0])
        table[t.instance_id] = rows
    return table


def _format_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_detections(path: str | Path, by_photo: dict[int, list[Detection]]) -> None:
    lines = []
    for photo_id in sorted(by_photo):
        for d in sorted(by_photo[photo_id], key=lambda d: d.detection_id):
            fields = [
                str(photo_id),
                str(d.detection_id),
                _format_num(d.person_box.x),
                _format_num(d.person_box.y),
                _format_num(d.person_box.w),
                _format_num(d.person_box.h),
                repr(float(d.score)),
            ]
            for part_id, patch, act in d.activations:
                fields += [
                    str(part_id),
                    _format_num(patch.x),
                    _format_num(patch.y),
                    _format_num(patch.w),
                    _format_num(patch.h),
                    repr(float(act)),
                ]
            lines.append("\t".join(fields))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_detections(path: str | Path) -> dict[int, list[Detection]]:
    by_photo: dict[int, list[Detection]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        f = line.split("\t")
        if len(f) < 7 or (len(f) - 7) % 6 != 0:
            raise ValueError(f"{path}:{lineno}: malformed detection record")
        photo_id, det_id = int(f[0]), int(f[1])
        box = BBox(float(f[2]), float(f[3]), float(f[4]), float(f[5]))
        score = float(f[6])
        acts = []
        for k in range(7, len(f), 6):
            acts.append(
                (
                    int(f[k]),
                    BBox(float(f[k + 1]), float(f[k + 2]), float(f[k + 3]), float(f[k + 4])),
                    float(f[k + 5]),
                )
            )
        by_photo.setdefault(photo_id, []).append(Detection(det_id, box, score, tuple(acts)))
    for dets in by_photo.values():
        dets.sort(key=lambda d: d.detection_id)
    return by_photo
