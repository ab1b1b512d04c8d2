"""Evaluation protocols: half-split recognition, ablations, one-shot, retrieval.

The recognition protocol splits an evaluation set into two stratified halves,
trains every part's SVM on each half, scores the other half, sparsity-fills
the part predictions against the global model, fuses them with the learned
mixing weights, and averages the two halves' accuracies. The ablation,
face/non-face, one-shot, and retrieval protocols reuse the same machinery.

Reports serialize as a flat key-value text file (``key<TAB>value`` lines)
plus, for protocols with a curve, a CSV with header ``x,mean,sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    FeatureMatrix,
    GLOBAL_PART_ID,
    Instance,
    PartRegistry,
    atomic_write_text,
)
from .fusion import (
    FusionWeights,
    ProbabilityTable,
    WeightLearningInfo,
    fill_sparsity_rows,
    fuse_matrix,
    learn_weights,
)
from .svm import LinearModel, TrainConfig, mix_seed, softmax, train_multiclass

__all__ = [
    "DEFAULT_TRAIN_CFG",
    "EvalReport",
    "HalfSplit",
    "ReferenceModels",
    "build_identity_embedding",
    "compute_validation_tables",
    "curve_csv",
    "eval_ablation",
    "eval_faces_split",
    "eval_oneshot",
    "eval_recognition",
    "eval_recognition_no_fill",
    "eval_retrieval",
    "half_split_training",
    "HalfSplitArtifacts",
    "learn_fusion_weights",
    "report_text",
    "run_retrieval_protocol",
    "stratified_half_split",
    "train_reference_models",
    "write_report",
]

DEFAULT_TRAIN_CFG = TrainConfig(C=10.0, epochs=30)


@dataclass(frozen=True)
class HalfSplit:
    """Stratified two-way split of an evaluation set.

    Every identity with >= 2 instances lands in both halves; smaller
    identities are excluded and listed.
    """

    assignment: dict[int, int]  # instance_id -> 0 or 1
    seed: int
    excluded_identities: tuple[int, ...]


def stratified_half_split(instances: list[Instance], seed: int) -> HalfSplit:
    by_identity: dict[int, list[int]] = {}
    for inst in instances:
        by_identity.setdefault(inst.identity, []).append(inst.instance_id)
    assignment: dict[int, int] = {}
    excluded: list[int] = []
    for ident in sorted(by_identity):
        ids = sorted(by_identity[ident])
        if len(ids) < 2:
            excluded.append(ident)
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, ident]))
        for pos, idx in enumerate(rng.permutation(len(ids))):
            assignment[ids[idx]] = pos % 2
    return HalfSplit(assignment, seed, tuple(excluded))


@dataclass
class EvalReport:
    """Outcome of one protocol run; accuracy-style or curve-style."""

    protocol: str
    component_mask: str
    seed: int
    n_train: int
    n_test: int
    n_identities: int
    accuracy: float | None = None
    half_accuracies: tuple[float, float] | None = None
    curve: tuple[tuple[float, float, float], ...] | None = None  # (x, mean, sigma)
    excluded_identities: int = 0
    excluded_instances: int = 0
    flags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.accuracy is not None and not (0.0 <= self.accuracy <= 1.0):
            raise ValueError("accuracy must lie in [0, 1]")


def report_text(report: EvalReport) -> str:
    lines = [
        f"protocol\t{report.protocol}",
        f"component_mask\t{report.component_mask}",
        f"seed\t{report.seed}",
        f"n_train\t{report.n_train}",
        f"n_test\t{report.n_test}",
        f"n_identities\t{report.n_identities}",
    ]
    if report.accuracy is not None:
        lines.append(f"accuracy\t{report.accuracy!r}")
    if report.half_accuracies is not None:
        lines.append(f"half_accuracy_0\t{report.half_accuracies[0]!r}")
        lines.append(f"half_accuracy_1\t{report.half_accuracies[1]!r}")
    lines.append(f"excluded_identities\t{report.excluded_identities}")
    lines.append(f"excluded_instances\t{report.excluded_instances}")
    for key in sorted(report.flags):
        lines.append(f"{key}\t{report.flags[key]}")
    return "\n".join(lines) + "\n"


def curve_csv(report: EvalReport) -> str:
    if report.curve is None:
        raise ValueError("report has no curve")
    lines = ["x,mean,sigma"]
    for x, mean, sigma in report.curve:
        lines.append(f"{x!r},{mean!r},{sigma!r}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, text_path: str | Path, csv_path: str | Path | None = None) -> None:
    atomic_write_text(text_path, report_text(report))
    if csv_path is not None and report.curve is not None:
        atomic_write_text(csv_path, curve_csv(report))


def _kept_instances(
    instances: list[Instance], min_per_identity: int
) -> tuple[list[Instance], dict[int, int], int, int]:
    """Drop identities too small for the protocol; relabel the rest densely.

    Returns (kept instances, split-identity -> local id, excluded identity
    count, excluded instance count).
    """
    counts: dict[int, int] = {}
    for inst in instances:
        counts[inst.identity] = counts.get(inst.identity, 0) + 1
    keep = sorted(ident for ident, c in counts.items() if c >= min_per_identity)
    local_of = {ident: k for k, ident in enumerate(keep)}
    kept = [inst for inst in instances if inst.identity in local_of]
    return kept, local_of, len(counts) - len(keep), len(instances) - len(kept)


def _normalized(features: dict[int, FeatureMatrix]) -> dict[int, FeatureMatrix]:
    return {pid: fm.normalized_copy() for pid, fm in features.items()}


def _train_part_models(
    part_ids: tuple[int, ...],
    features: dict[int, FeatureMatrix],
    train_ids: np.ndarray,
    label_of: dict[int, int],
    cfg: TrainConfig,
    seed_parts: tuple[int, ...],
) -> dict[int, LinearModel | None]:
    """Train one multiclass SVM per part on its activated training rows.

    A part whose training activations cover fewer than 2 identities gets no
    model (treated downstream as never activating). The global part must
    cover every training instance by construction.
    """
    models: dict[int, LinearModel | None] = {}
    for pid in part_ids:
        fm = features[pid]
        present = fm.contains(train_ids)
        ids = train_ids[present]
        if pid == GLOBAL_PART_ID and ids.size != train_ids.size:
            raise ValueError("global part must carry a feature row for every instance")
        labels = np.asarray([label_of[i] for i in ids.tolist()], dtype=np.int64)
        if np.unique(labels).size < 2:
            models[pid] = None
            continue
        part_cfg = replace(cfg, seed=mix_seed(*seed_parts, pid, cfg.seed))
        models[pid] = train_multiclass(fm.rows(ids), labels, part_cfg, row_ids=ids)
    return models


def _part_probabilities(
    models: dict[int, LinearModel | None],
    features: dict[int, FeatureMatrix],
    eval_ids: np.ndarray,
    n_y: int,
    mask_ids: tuple[int, ...],
    fill: bool,
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Per-part dense probability matrices over the evaluation rows.

    Returns (matrices keyed by part id, feature-level activation masks).
    With ``fill`` the matrices follow the sparsity-filling rule against the
    global row (uniform when the global part is masked out); without it,
    non-activated rows are all-zero and activated rows carry the raw part
    distribution embedded over the full identity set.
    """
    n_eval = eval_ids.shape[0]
    if GLOBAL_PART_ID in models and models[GLOBAL_PART_ID] is not None:
        global_model = models[GLOBAL_PART_ID]
        P0 = softmax(global_model.scores(features[GLOBAL_PART_ID].rows(eval_ids)))
        # embed in case the training half covered fewer identities than n_y
        if global_model.n_classes != n_y:
            full = np.zeros((n_eval, n_y))
            full[:, global_model.class_index] = P0
            P0 = full
    else:
        P0 = np.full((n_eval, n_y), 1.0 / n_y)

    matrices: dict[int, np.ndarray] = {}
    activations: dict[int, np.ndarray] = {}
    for pid in mask_ids:
        if pid == GLOBAL_PART_ID:
            matrices[pid] = P0.copy()
            activations[pid] = np.ones(n_eval, dtype=bool)
            continue
        fm = features[pid]
        act = fm.contains(eval_ids)
        activations[pid] = act
        model = models.get(pid)
        usable = act if model is not None else np.zeros(n_eval, dtype=bool)
        P_hat = np.zeros((n_eval, n_y))
        if model is not None and np.any(usable):
            probs = softmax(model.scores(fm.rows(eval_ids[usable])))
            P_hat[np.ix_(np.flatnonzero(usable), model.class_index)] = probs
        if fill:
            F_i = model.class_index if model is not None else np.zeros(0, dtype=np.int64)
            matrices[pid] = fill_sparsity_rows(P_hat, P0, F_i, usable)
        else:
            matrices[pid] = P_hat
    return matrices, activations


@dataclass
class _RecognitionRun:
    preds: dict[int, int]
    truth: dict[int, int]
    half_of: dict[int, int]
    half_accuracies: tuple[float, float]
    accuracy: float
    n_y: int
    n_kept: int
    excluded_identities: int
    excluded_instances: int
    face_activated: dict[int, bool]
    tables: dict[int, ProbabilityTable] | None
    models_by_train_half: dict[int, dict[int, LinearModel | None]] = field(default_factory=dict)


def _run_recognition(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    fw: FusionWeights,
    split: str,
    seed: int,
    component_mask: str | None,
    cfg: TrainConfig,
    fill: bool,
    halves: HalfSplit | None = None,
    collect_tables: bool = False,
) -> _RecognitionRun:
    mask_ids = registry.resolve_mask(component_mask)
    needed = tuple(sorted(set(mask_ids) | set(registry.part_ids))) if collect_tables else mask_ids
    features = _normalized(features)
    instances = dataset.split_instances(split)
    kept, local_of, excl_ids, excl_insts = _kept_instances(instances, 2)
    if len(local_of) < 2:
        raise ValueError(f"split {split!r} has fewer than 2 usable identities")
    n_y = len(local_of)
    if halves is None:
        halves = stratified_half_split(kept, seed)
    kept = [inst for inst in kept if inst.instance_id in halves.assignment]
    label_of = {inst.instance_id: local_of[inst.identity] for inst in kept}

    face_parts = registry.ids_of_kind("face")
    face_activated: dict[int, bool] = {}
    preds: dict[int, int] = {}
    half_accs: list[float] = []
    fold_tables: dict[int, list[ProbabilityTable]] = {pid: [] for pid in needed}
    models_by_train_half: dict[int, dict[int, LinearModel | None]] = {}

    for eval_half in (0, 1):
        train_ids = np.asarray(
            sorted(i for i, h in halves.assignment.items() if h == 1 - eval_half), dtype=np.int64
        )
        eval_ids = np.asarray(
            sorted(i for i, h in halves.assignment.items() if h == eval_half), dtype=np.int64
        )
        models = _train_part_models(needed, features, train_ids, label_of, cfg, (seed, eval_half))
        models_by_train_half[1 - eval_half] = models
        matrices, activations = _part_probabilities(models, features, eval_ids, n_y, needed, fill)
        fused = fuse_matrix({pid: matrices[pid] for pid in mask_ids}, fw)
        fold_preds = np.argmax(fused, axis=1)
        truth = np.asarray([label_of[i] for i in eval_ids.tolist()], dtype=np.int64)
        half_accs.append(float(np.mean(fold_preds == truth)))
        for k, iid in enumerate(eval_ids.tolist()):
            preds[iid] = int(fold_preds[k])
            face_activated[iid] = bool(any(activations[p][k] for p in face_parts if p in activations))
        if collect_tables:
            for pid in needed:
                fold_tables[pid].append(
                    ProbabilityTable(pid, eval_ids, matrices[pid], activations[pid])
                )

    tables = None
    if collect_tables:
        tables = {}
        for pid in needed:
            a, b = fold_tables[pid]
            tables[pid] = ProbabilityTable(
                pid,
                np.concatenate([a.instance_ids, b.instance_ids]),
                np.concatenate([a.P, b.P], axis=0),
                np.concatenate([a.activated, b.activated]),
            )

    return _RecognitionRun(
        preds=preds,
        truth={inst.instance_id: label_of[inst.instance_id] for inst in kept},
        half_of=dict(halves.assignment),
        half_accuracies=(half_accs[0], half_accs[1]),
        accuracy=float(np.mean(half_accs)),
        n_y=n_y,
        n_kept=len(kept),
        excluded_identities=excl_ids,
        excluded_instances=excl_insts,
        face_activated=face_activated,
        tables=tables,
        models_by_train_half=models_by_train_half,
    )


def eval_recognition(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    fw: FusionWeights,
    split: str = "test",
    seed: int = 0,
    component_mask: str | None = None,
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
    halves: HalfSplit | None = None,
) -> EvalReport:
    """Half-split recognition accuracy with sparsity filling and fusion.

    ``component_mask`` (e.g. ``"global"`` or ``"global,face"``) restricts the
    fused parts; a masked-out global part is replaced by the uniform
    distribution as the filling source.
    """
    run = _run_recognition(
        dataset, features, registry, fw, split, seed, component_mask, train_cfg, fill=True, halves=halves
    )
    return EvalReport(
        protocol="recognition",
        component_mask=component_mask or "all",
        seed=seed,
        n_train=run.n_kept,
        n_test=run.n_kept,
        n_identities=run.n_y,
        accuracy=run.accuracy,
        half_accuracies=run.half_accuracies,
        excluded_identities=run.excluded_identities,
        excluded_instances=run.excluded_instances,
    )


def eval_recognition_no_fill(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    fw: FusionWeights,
    split: str = "test",
    seed: int = 0,
    component_mask: str | None = None,
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
    halves: HalfSplit | None = None,
) -> EvalReport:
    """Recognition without sparsity filling: sparse rows contribute zeros."""
    run = _run_recognition(
        dataset, features, registry, fw, split, seed, component_mask, train_cfg, fill=False, halves=halves
    )
    return EvalReport(
        protocol="recognition-no-fill",
        component_mask=component_mask or "all",
        seed=seed,
        n_train=run.n_kept,
        n_test=run.n_kept,
        n_identities=run.n_y,
        accuracy=run.accuracy,
        half_accuracies=run.half_accuracies,
        excluded_identities=run.excluded_identities,
        excluded_instances=run.excluded_instances,
    )


def eval_faces_split(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    fw: FusionWeights,
    split: str = "test",
    seed: int = 0,
    component_mask: str | None = None,
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
    face_mask: dict[int, bool] | None = None,
) -> tuple[EvalReport, EvalReport]:
    """Recognition accuracy restricted to face-activated instances and the rest.

    ``face_mask`` overrides which instances count as face-activated; by
    default an instance does when the face part carries a feature row for it.
    """
    run = _run_recognition(
        dataset, features, registry, fw, split, seed, component_mask, train_cfg, fill=True
    )
    is_face = face_mask if face_mask is not None else run.face_activated

    def subset_report(name: str, want_face: bool) -> EvalReport:
        ids = [i for i in run.preds if bool(is_face.get(i, False)) == want_face]
        flags: dict[str, str] = {}
        if ids:
            acc = float(np.mean([run.preds[i] == run.truth[i] for i in ids]))
        else:
            acc = None
            flags["empty_subset"] = "true"
        return EvalReport(
            protocol=name,
            component_mask=component_mask or "all",
            seed=seed,
            n_train=run.n_kept,
            n_test=len(ids),
            n_identities=run.n_y,
            accuracy=acc,
            excluded_identities=run.excluded_identities,
            excluded_instances=run.excluded_instances,
            flags=flags,
        )

    return subset_report("recognition-faces", True), subset_report("recognition-nonfaces", False)


def eval_ablation(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    fw: FusionWeights,
    masks: tuple[str, ...] = ("all", "global", "poselets", "face"),
    split: str = "test",
    seed: int = 0,
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
) -> dict[str, EvalReport]:
    """Recognition accuracy per component mask (plus the no-fill variant)."""
    out: dict[str, EvalReport] = {}
    for mask in masks:
        out[mask] = eval_recognition(
            dataset, features, registry, fw, split, seed, None if mask == "all" else mask, train_cfg
        )
    out["no-fill"] = eval_recognition_no_fill(
        dataset, features, registry, fw, split, seed, None, train_cfg
    )
    return out


def eval_oneshot(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    fw: FusionWeights,
    split: str = "test",
    shots: tuple[int, ...] = (1, 2, 3),
    repeats: int = 10,
    seed: int = 0,
    component_mask: str | None = None,
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
) -> EvalReport:
    """Few-shot recognition: sample `shots` training instances per identity.

    Per repeat, identities with at least shots+1 instances contribute; the
    sampled instances train the part SVMs and the rest are scored. The curve
    holds (shots, mean accuracy, sample sigma) per shot count.
    """
    if repeats < 2:
        raise ValueError("need repeats >= 2 to report a sigma")
    mask_ids = registry.resolve_mask(component_mask)
    features = _normalized(features)
    instances = dataset.split_instances(split)

    curve: list[tuple[float, float, float]] = []
    flags: dict[str, str] = {}
    max_kept = 0
    max_n_y = 0
    for s in shots:
        kept, local_of, excl_ids, _ = _kept_instances(instances, s + 1)
        if len(local_of) < 2:
            raise ValueError(f"shot count {s}: fewer than 2 usable identities")
        flags[f"excluded_identities_shot_{s}"] = str(excl_ids)
        max_kept = max(max_kept, len(kept))
        max_n_y = max(max_n_y, len(local_of))
        by_identity: dict[int, list[int]] = {}
        for inst in kept:
            by_identity.setdefault(local_of[inst.identity], []).append(inst.instance_id)
        label_of = {inst.instance_id: local_of[inst.identity] for inst in kept}

        accs = []
        for r in range(repeats):
            rng = np.random.default_rng(np.random.SeedSequence([seed, s, r]))
            train_list: list[int] = []
            for ident in sorted(by_identity):
                ids = np.asarray(sorted(by_identity[ident]), dtype=np.int64)
                train_list.extend(rng.choice(ids, size=s, replace=False).tolist())
            train_ids = np.asarray(sorted(train_list), dtype=np.int64)
            eval_ids = np.asarray(
                sorted(set(label_of) - set(train_ids.tolist())), dtype=np.int64
            )
            models = _train_part_models(
                mask_ids, features, train_ids, label_of, train_cfg, (seed, s, r)
            )
            matrices, _ = _part_probabilities(
                models, features, eval_ids, len(local_of), mask_ids, fill=True
            )
            fused = fuse_matrix(matrices, fw)
            truth = np.asarray([label_of[i] for i in eval_ids.tolist()], dtype=np.int64)
            accs.append(float(np.mean(np.argmax(fused, axis=1) == truth)))
        curve.append((float(s), float(np.mean(accs)), float(np.std(accs, ddof=1))))

    return EvalReport(
        protocol="oneshot",
        component_mask=component_mask or "all",
        seed=seed,
        n_train=int(shots[-1]) * max_n_y,
        n_test=max_kept,
        n_identities=max_n_y,
        curve=tuple(curve),
        flags=flags,
    )


@dataclass
class ReferenceModels:
    """Part SVMs trained on half 0 of a reference split, for embeddings."""

    models: dict[int, LinearModel | None]
    n_identities: int
    split: str
    seed: int


def train_reference_models(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    split: str = "val",
    seed: int = 0,
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
) -> ReferenceModels:
    """Train all part SVMs on half 0 of the given split's stratified halves."""
    features = _normalized(features)
    instances = dataset.split_instances(split)
    kept, local_of, _, _ = _kept_instances(instances, 2)
    if len(local_of) < 2:
        raise ValueError(f"split {split!r} has fewer than 2 usable identities")
    halves = stratified_half_split(kept, seed)
    label_of = {
        inst.instance_id: local_of[inst.identity]
        for inst in kept
        if inst.instance_id in halves.assignment
    }
    train_ids = np.asarray(
        sorted(i for i, h in halves.assignment.items() if h == 0), dtype=np.int64
    )
    models = _train_part_models(
        registry.part_ids, features, train_ids, label_of, train_cfg, (seed, 7)
    )
    return ReferenceModels(models, len(local_of), split, seed)


def build_identity_embedding(
    instance_id: int,
    features: dict[int, FeatureMatrix],
    ref: ReferenceModels,
    fw: FusionWeights,
    component_mask: str | None = None,
    registry: PartRegistry | None = None,
) -> np.ndarray:
    """Fused probability vector over the reference identities for one instance."""
    mask_ids = (
        registry.resolve_mask(component_mask)
        if registry is not None
        else tuple(sorted(ref.models))
    )
    return _build_embeddings(np.asarray([instance_id], dtype=np.int64), features, ref, fw, mask_ids)[0]


def _build_embeddings(
    ids: np.ndarray,
    features: dict[int, FeatureMatrix],
    ref: ReferenceModels,
    fw: FusionWeights,
    mask_ids: tuple[int, ...],
) -> np.ndarray:
    if ref.models.get(GLOBAL_PART_ID) is None:
        raise ValueError("reference models must include a trained global model")
    features = _normalized(features)
    matrices, _ = _part_probabilities(
        ref.models, features, ids, ref.n_identities, mask_ids, fill=True
    )
    return fuse_matrix(matrices, fw)


def eval_retrieval(
    embeddings: np.ndarray,
    labels: np.ndarray,
    instance_ids: np.ndarray,
    K_list: tuple[int, ...] = (1, 2, 5, 10, 20),
    seed: int = 0,
    component_mask: str = "all",
) -> EvalReport:
    """Recall@K of same-identity retrieval by Euclidean distance.

    Queries are the instances whose identity occurs at least twice; the
    corpus is every instance (a query never retrieves itself). Distance ties
    break toward the lower instance_id. K beyond the corpus is clamped and
    flagged.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    instance_ids = np.asarray(instance_ids, dtype=np.int64)
    n = embeddings.shape[0]
    if n < 2:
        raise ValueError("retrieval needs at least 2 instances")

    uniq, counts = np.unique(labels, return_counts=True)
    count_of = dict(zip(uniq.tolist(), counts.tolist()))
    query_idx = [k for k in range(n) if count_of[int(labels[k])] >= 2]
    n_singletons = n - len(query_idx)
    if not query_idx:
        raise ValueError("no identity has 2 or more instances")

    diffs = embeddings[:, None, :] - embeddings[None, :, :]
    dists = np.sqrt(np.sum(diffs * diffs, axis=2))

    flags: dict[str, str] = {}
    if n_singletons:
        flags["singleton_identities_instances"] = str(n_singletons)
    max_k = n - 1
    curve: list[tuple[float, float, float]] = []
    neighbor_ranks = {}
    for q in query_idx:
        order = np.lexsort((instance_ids, dists[q]))
        order = order[order != q]
        neighbor_ranks[q] = labels[order] == labels[q]
    for K in K_list:
        k = min(int(K), max_k)
        if k != K:
            flags[f"k_clamped_{K}"] = str(k)
        hits = sum(bool(np.any(neighbor_ranks[q][:k])) for q in query_idx)
        curve.append((float(K), hits / len(query_idx), 0.0))

    return EvalReport(
        protocol="retrieval",
        component_mask=component_mask,
        seed=seed,
        n_train=0,
        n_test=len(query_idx),
        n_identities=len(count_of),
        curve=tuple(curve),
        flags=flags,
    )


def run_retrieval_protocol(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    fw: FusionWeights,
    val_split: str = "val",
    test_split: str = "test",
    seed: int = 0,
    K_list: tuple[int, ...] = (1, 2, 5, 10, 20),
    component_mask: str | None = None,
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
) -> EvalReport:
    """End-to-end retrieval: reference models on val, embeddings and recall on test."""
    ref = train_reference_models(dataset, features, registry, val_split, seed, train_cfg)
    mask_ids = registry.resolve_mask(component_mask)
    insts = sorted(dataset.split_instances(test_split), key=lambda i: i.instance_id)
    ids = np.asarray([i.instance_id for i in insts], dtype=np.int64)
    labels = np.asarray([i.identity for i in insts], dtype=np.int64)
    emb = _build_embeddings(ids, features, ref, fw, mask_ids)
    report = eval_retrieval(emb, labels, ids, K_list, seed, component_mask or "all")
    report.n_train = len(dataset.split_instances(val_split))
    report.flags["embedding_dim"] = str(ref.n_identities)
    return report


@dataclass
class HalfSplitArtifacts:
    """Everything the half-split training pass produces for one split."""

    tables: dict[int, ProbabilityTable]  # filled, rows from opposite-half models
    labels_of: dict[int, int]  # instance_id -> local identity
    halves: dict[int, int]  # instance_id -> 0/1
    models: dict[int, dict[int, LinearModel | None]]  # train half -> part -> model
    n_identities: int
    excluded_identities: int
    excluded_instances: int


def half_split_training(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    split: str = "val",
    seed: int = 0,
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
) -> HalfSplitArtifacts:
    """Train per-part SVMs on both halves and tabulate filled probabilities."""
    fw_ones = FusionWeights(np.ones(len(registry.parts)))
    run = _run_recognition(
        dataset,
        features,
        registry,
        fw_ones,
        split,
        seed,
        None,
        train_cfg,
        fill=True,
        collect_tables=True,
    )
    assert run.tables is not None
    return HalfSplitArtifacts(
        tables=run.tables,
        labels_of=run.truth,
        halves=run.half_of,
        models=run.models_by_train_half,
        n_identities=run.n_y,
        excluded_identities=run.excluded_identities,
        excluded_instances=run.excluded_instances,
    )


def compute_validation_tables(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    split: str = "val",
    seed: int = 0,
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
) -> tuple[dict[int, ProbabilityTable], dict[int, int], dict[int, int]]:
    """Filled probability tables for weight learning, per the half-split rule.

    Each instance's row comes from models trained on the opposite half.
    Returns (tables per part, instance -> local identity, instance -> half).
    """
    art = half_split_training(dataset, features, registry, split, seed, train_cfg)
    return art.tables, art.labels_of, art.halves


def learn_fusion_weights(
    dataset: Dataset,
    features: dict[int, FeatureMatrix],
    registry: PartRegistry,
    split: str = "val",
    seed: int = 0,
    C_grid: tuple[float, ...] = tuple(2.0**k for k in range(-8, 9, 2)),
    train_cfg: TrainConfig = DEFAULT_TRAIN_CFG,
    clamp_nonnegative: bool = False,
) -> tuple[FusionWeights, WeightLearningInfo]:
    """Full weight-learning pipeline on a validation split."""
    tables, labels_of, halves = compute_validation_tables(
        dataset, features, registry, split, seed, train_cfg
    )
    return learn_weights(
        tables,
        labels_of,
        halves,
        C_grid=C_grid,
        seed=mix_seed(seed, 3),
        clamp_nonnegative=clamp_nonnegative,
    )
