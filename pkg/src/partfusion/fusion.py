"""Sparsity filling, linear late fusion, and mixing-weight learning.

The model: each part i yields a distribution P_i(y|X) over identities, dense
after sparsity filling. The fused score is s(X, y) = sum_i w_i P_i(y|X) and
the prediction is argmax_y s(X, y).

Sparsity filling replaces what a part cannot know with global-model mass:
a part that did not activate contributes the global row unchanged; a part
that activated but was trained on a subset F_i of identities contributes

    P_i(y|X) = P(y in F_i) * p_hat_i(y|X) + P(y not in F_i) * P_0(y|X)

with P(y in F_i) = sum_{y' in F_i} P_0(y'|X). Both branches preserve
normalization exactly.

File formats owned here:

* probability table (binary): magic ``PPT1``, part_id u32 LE, |Y| u32 LE,
  n u32 LE; then n rows of (instance_id u64 LE, activation flag u8,
  |Y| x float32 LE).
* fusion weights (text): one ``part_id<TAB>weight`` line per part in part_id
  order, then a trailing ``bias<TAB>value`` line. UTF-8, LF.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import atomic_write_bytes, atomic_write_text
from .svm import TrainConfig, mix_seed, train_binary

__all__ = [
    "FusionWeights",
    "ProbabilityTable",
    "WeightLearningInfo",
    "coverage_mass",
    "fill_sparsity",
    "fill_sparsity_rows",
    "fuse",
    "fuse_matrix",
    "learn_weights",
    "predict",
    "read_prob_table",
    "read_weights",
    "write_prob_table",
    "write_weights",
]

_TABLE_MAGIC = b"PPT1"


@dataclass
class ProbabilityTable:
    """Per-part identity distributions for a set of instances.

    ``P[j]`` is a distribution over the protocol's identity set for instance
    ``instance_ids[j]``; ``activated[j]`` records whether the part fired on
    that instance (pre-filling provenance; filled rows are dense either way).
    """

    part_id: int
    instance_ids: np.ndarray  # (n,) int64, strictly increasing
    P: np.ndarray  # (n, |Y|) float64
    activated: np.ndarray  # (n,) bool

    def __post_init__(self) -> None:
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64)
        self.P = np.asarray(self.P, dtype=np.float64)
        self.activated = np.asarray(self.activated, dtype=bool)
        n = self.instance_ids.shape[0]
        if self.P.ndim != 2 or self.P.shape[0] != n or self.activated.shape != (n,):
            raise ValueError("instance_ids, P, activated disagree on row count")
        order = np.argsort(self.instance_ids, kind="stable")
        if not np.array_equal(order, np.arange(n)):
            self.instance_ids = self.instance_ids[order]
            self.P = self.P[order]
            self.activated = self.activated[order]
        if n and np.any(np.diff(self.instance_ids) == 0):
            raise ValueError(f"duplicate instance ids in table for part {self.part_id}")
        if np.any(self.P < -1e-9) or np.any(self.P > 1.0 + 1e-9):
            raise ValueError("probability entries outside [0, 1]")
        sums = self.P.sum(axis=1)
        if n and np.max(np.abs(sums - 1.0)) > 1e-6:
            raise ValueError("stored rows must sum to 1 within 1e-6")

    @property
    def n_identities(self) -> int:
        return self.P.shape[1]

    def row_index(self, instance_id: int) -> int:
        pos = int(np.searchsorted(self.instance_ids, instance_id))
        if pos >= self.instance_ids.shape[0] or self.instance_ids[pos] != instance_id:
            raise KeyError(f"part {self.part_id}: no row for instance {instance_id}")
        return pos

    def row(self, instance_id: int) -> np.ndarray:
        return self.P[self.row_index(instance_id)]


def write_prob_table(path: str | Path, table: ProbabilityTable) -> None:
    n, n_y = table.P.shape
    header = _TABLE_MAGIC + struct.pack("<III", table.part_id, n_y, n)
    rec = np.dtype([("id", "<u8"), ("act", "u1"), ("p", "<f4", (n_y,))])
    body = np.empty(n, dtype=rec)
    body["id"] = table.instance_ids.astype(np.uint64)
    body["act"] = table.activated.astype(np.uint8)
    body["p"] = table.P.astype(np.float32)
    atomic_write_bytes(path, header + body.tobytes())


def read_prob_table(path: str | Path) -> ProbabilityTable:
    buf = Path(path).read_bytes()
    if buf[:4] != _TABLE_MAGIC:
        raise ValueError(f"{path}: bad magic {buf[:4]!r}")
    part_id, n_y, n = struct.unpack("<III", buf[4:16])
    rec = np.dtype([("id", "<u8"), ("act", "u1"), ("p", "<f4", (n_y,))])
    body = np.frombuffer(buf[16:], dtype=rec)
    if body.shape[0] != n:
        raise ValueError(f"{path}: expected {n} rows, found {body.shape[0]}")
    P = body["p"].astype(np.float64)
    # float32 storage nudges sums off 1; renormalize within the format tolerance
    sums = P.sum(axis=1, keepdims=True)
    if n and np.max(np.abs(sums - 1.0)) > 1e-3:
        raise ValueError(f"{path}: stored rows are not distributions")
    P = P / sums
    return ProbabilityTable(part_id, body["id"].astype(np.int64), P, body["act"].astype(bool))


def coverage_mass(p0_row: np.ndarray, F_i: np.ndarray) -> float:
    """Global-model probability mass on the identities covered by part i."""
    p0_row = np.asarray(p0_row, dtype=np.float64)
    F_i = np.asarray(F_i, dtype=np.int64)
    if F_i.size == 0:
        return 0.0
    return float(p0_row[F_i].sum())


def fill_sparsity(
    p_hat: np.ndarray | None,
    p0_row: np.ndarray,
    F_i: np.ndarray,
    activated: bool,
) -> np.ndarray:
    """Densify one part's prediction for one instance.

    Not activated: the global row, exactly. Activated: blend p_hat (supported
    on F_i, zero elsewhere) with the global row, weighted by how much global
    mass sits on F_i. Raises if p_hat carries mass outside F_i.
    """
    p0_row = np.asarray(p0_row, dtype=np.float64)
    if not activated:
        return p0_row.copy()
    if p_hat is None:
        raise ValueError("activated fill needs a part prediction")
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p_hat.shape != p0_row.shape:
        raise ValueError("p_hat and p0_row must share the identity set")
    outside = np.ones(p_hat.shape[0], dtype=bool)
    outside[np.asarray(F_i, dtype=np.int64)] = False
    if np.any(p_hat[outside] != 0.0):
        raise ValueError("p_hat has mass outside the part's coverage set")
    mass = coverage_mass(p0_row, F_i)
    return mass * p_hat + (1.0 - mass) * p0_row


def fill_sparsity_rows(
    P_hat: np.ndarray,
    P0: np.ndarray,
    F_i: np.ndarray,
    activated: np.ndarray,
) -> np.ndarray:
    """Vectorized `fill_sparsity` over a block of instances.

    ``P_hat`` rows are consulted only where ``activated`` is set; inactive
    rows copy the global rows.
    """
    P0 = np.asarray(P0, dtype=np.float64)
    out = P0.copy()
    act = np.asarray(activated, dtype=bool)
    if not np.any(act):
        return out
    F_i = np.asarray(F_i, dtype=np.int64)
    mass = P0[act][:, F_i].sum(axis=1) if F_i.size else np.zeros(int(act.sum()))
    out[act] = mass[:, None] * np.asarray(P_hat, dtype=np.float64)[act] + (1.0 - mass)[:, None] * P0[act]
    return out


@dataclass(frozen=True)
class FusionWeights:
    """Per-part mixing weights, indexed by part_id; part 0 is the global part.

    The bias comes along from the trained SVM but plays no role in fused
    scoring (a constant shift cannot move an argmax over identities).
    """

    w: np.ndarray  # (K+1,) float64
    bias: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        if self.w.ndim != 1:
            raise ValueError("w must be a vector")
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.bias)):
            raise ValueError("non-finite fusion weights")

    def __len__(self) -> int:
        return self.w.shape[0]


def write_weights(path: str | Path, fw: FusionWeights) -> None:
    lines = [f"{i}\t{w!r}" for i, w in enumerate(fw.w.tolist())]
    lines.append(f"bias\t{float(fw.bias)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_weights(path: str | Path) -> FusionWeights:
    w: dict[int, float] = {}
    bias = 0.0
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        key, value = line.split("\t")
        if key == "bias":
            bias = float(value)
        else:
            w[int(key)] = float(value)
    if sorted(w) != list(range(len(w))):
        raise ValueError(f"{path}: part ids must be contiguous from 0")
    return FusionWeights(np.asarray([w[i] for i in range(len(w))]), bias)


def fuse(
    tables: dict[int, ProbabilityTable],
    fw: FusionWeights,
    instance_id: int,
) -> np.ndarray:
    """Fused identity scores s(X, .) for one instance from filled tables.

    Every table must hold a (filled) row for the instance; scores are a
    weighted sum of distributions, deliberately not renormalized.
    """
    s: np.ndarray | None = None
    for part_id in sorted(tables):
        table = tables[part_id]
        if part_id >= len(fw):
            raise ValueError(f"no fusion weight for part {part_id}")
        row = table.row(instance_id)  # raises KeyError if the row is missing
        s = fw.w[part_id] * row if s is None else s + fw.w[part_id] * row
    if s is None:
        raise ValueError("fuse needs at least one table")
    return s


def fuse_matrix(prob: dict[int, np.ndarray], fw: FusionWeights) -> np.ndarray:
    """Weighted sum of per-part probability matrices (rows aligned across parts)."""
    s: np.ndarray | None = None
    for part_id, P in sorted(prob.items()):
        s = fw.w[part_id] * P if s is None else s + fw.w[part_id] * P
    if s is None:
        raise ValueError("fuse needs at least one part")
    return s


def predict(s: np.ndarray) -> int:
    """Identity with the highest fused score; ties go to the lowest id."""
    s = np.asarray(s)
    if s.size == 0:
        raise ValueError("empty score vector")
    return int(np.argmax(s))


@dataclass(frozen=True)
class WeightLearningInfo:
    """Bookkeeping from learn_weights: the grid search trace."""

    best_C: float
    grid_scores: tuple[tuple[float, float], ...]  # (C, balanced accuracy on held-out pairs)
    n_pairs: int


def _pair_dataset(
    tables: dict[int, ProbabilityTable],
    labels_of: dict[int, int],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build the (instance, label)-pair dataset for weight learning.

    One example per (instance j, identity y): feature vector
    [P_0(y|X_j), ..., P_K(y|X_j)], label +1 iff y is j's identity. Returns
    (features, labels, pair instance ids) in (instance, identity) order.
    """
    part_ids = sorted(tables)
    base = tables[part_ids[0]]
    ids = base.instance_ids
    n_y = base.n_identities
    for pid in part_ids[1:]:
        t = tables[pid]
        if not np.array_equal(t.instance_ids, ids) or t.n_identities != n_y:
            raise ValueError("tables disagree on instances or identity set")
    stack = np.stack([tables[pid].P for pid in part_ids], axis=2)  # (n, |Y|, K+1)
    X = stack.reshape(-1, len(part_ids))
    truth = np.asarray([labels_of[i] for i in ids.tolist()], dtype=np.int64)
    y = np.where(np.arange(n_y)[None, :] == truth[:, None], 1, -1).reshape(-1)
    pair_owner = np.repeat(ids, n_y)
    return X, y, pair_owner


def _balanced_accuracy(y_true_pm: np.ndarray, y_pred_pm: np.ndarray) -> float:
    pos = y_true_pm > 0
    tpr = float(np.mean(y_pred_pm[pos] > 0)) if np.any(pos) else 0.0
    tnr = float(np.mean(y_pred_pm[~pos] < 0)) if np.any(~pos) else 0.0
    return 0.5 * (tpr + tnr)


def learn_weights(
    tables: dict[int, ProbabilityTable],
    labels_of: dict[int, int],
    halves: dict[int, int],
    C_grid: tuple[float, ...] = tuple(2.0**k for k in range(-8, 9, 2)),
    seed: int = 0,
    epochs: int = 30,
    clamp_nonnegative: bool = False,
) -> tuple[FusionWeights, WeightLearningInfo]:
    """Learn per-part mixing weights from filled validation tables.

    The tables must already follow the half-split protocol (each instance's
    probabilities produced by models trained on the opposite half; ``halves``
    maps instance_id to 0 or 1). C is grid-searched by training the pair
    classifier on half-0 pairs and scoring balanced accuracy on half-1 pairs;
    the final weights come from retraining on all pairs at the best C
    (ties: smaller C).
    """
    if not C_grid:
        raise ValueError("empty C grid")
    if not tables:
        raise ValueError("no probability tables")
    n_y = tables[sorted(tables)[0]].n_identities
    if n_y < 2:
        raise ValueError("need at least 2 identities to learn weights")

    X, y, owner = _pair_dataset(tables, labels_of)
    half_of_pair = np.asarray([halves[i] for i in owner.tolist()], dtype=np.int64)
    fit_idx = np.flatnonzero(half_of_pair == 0)
    held_idx = np.flatnonzero(half_of_pair == 1)
    if fit_idx.size == 0 or held_idx.size == 0:
        raise ValueError("both halves must contribute pairs")

    grid_scores: list[tuple[float, float]] = []
    best_C, best_score = float(C_grid[0]), -1.0
    for k, C in enumerate(C_grid):
        cfg = TrainConfig(C=C, epochs=epochs, seed=mix_seed(seed, 1, k), class_weighting="inverse-frequency")
        model = train_binary(X[fit_idx], y[fit_idx], cfg)
        pred = np.where(model.scores(X[held_idx])[:, 0] > 0.0, 1, -1)
        acc = _balanced_accuracy(y[held_idx], pred)
        grid_scores.append((float(C), acc))
        if acc > best_score + 1e-12:
            best_C, best_score = float(C), acc

    cfg = TrainConfig(C=best_C, epochs=epochs, seed=mix_seed(seed, 2, 0), class_weighting="inverse-frequency")
    final = train_binary(X, y, cfg)
    w = final.W[0].copy()
    if clamp_nonnegative:
        w = np.maximum(w, 0.0)
    fw = FusionWeights(w, float(final.b[0]))
    return fw, WeightLearningInfo(best_C, tuple(grid_scores), int(X.shape[0]))
