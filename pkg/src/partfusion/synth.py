"""Deterministic synthetic benchmark standing in for externally computed features.

The generative model is prototype-plus-noise: each (part, identity) pair gets
a Gaussian prototype, and an activated part observes the prototype plus
isotropic Gaussian noise. Whether a part activates on an instance depends
only on the instance's latent pose state (and a coin flip), never on its
identity, so the activation pattern is statistically independent of identity
by construction. The global part activates on every instance; the face part
activates at a fixed rate regardless of pose.

A fixed seed makes every derived quantity reproducible, and the writer emits
byte-identical files on reruns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    FeatureMatrix,
    GLOBAL_PART_ID,
    Instance,
    PartRegistry,
    atomic_write_text,
    make_registry,
    write_features,
    write_index,
)
from .geometry import BBox, body_from_head
from .matching import Detection, write_detections

__all__ = [
    "SynthConfig",
    "SynthData",
    "config_from_json",
    "generate",
    "planted_config",
    "write_synth",
]


@dataclass(frozen=True)
class SynthConfig:
    """Benchmark shape and noise model.

    ``n_identities`` applies to each split in ``splits`` separately, so the
    default emits disjoint validation and test identity sets of 40 each.
    Per-part sequences run in part_id order (global, poselets..., face);
    scalars broadcast. ``activation_prob`` of None draws each (poselet, pose)
    rate uniformly from [activation_low, activation_high] under the seed.
    """

    n_identities: int = 40
    instances_min: int = 20
    instances_max: int = 20
    n_poselets: int = 8
    include_face: bool = True
    feature_dim: int = 32
    pose_states: int = 4
    activation_low: float = 0.05
    activation_high: float = 0.6
    face_activation: float = 0.52
    activation_prob: float | tuple[tuple[float, ...], ...] | None = None
    informativeness: float | tuple[float, ...] = 1.0
    noise_sigma: float | tuple[float, ...] | None = None
    noise_sigma_global: float = 1.3
    noise_sigma_poselet: float = 0.8
    noise_sigma_face: float = 0.5
    detection_miss: float = 0.05
    n_uploaders: int = 10
    splits: tuple[str, ...] = ("val", "test")
    seed: int = 42

    def __post_init__(self) -> None:
        if self.n_identities < 2:
            raise ValueError("need at least 2 identities per split")
        if self.instances_min < 2:
            raise ValueError("every identity needs at least 2 instances")
        if self.instances_max < self.instances_min:
            raise ValueError("instances_max below instances_min")
        if self.feature_dim < 1 or self.pose_states < 1 or self.n_poselets < 1:
            raise ValueError("dimensions and counts must be at least 1")
        for p in (
            self.activation_low,
            self.activation_high,
            self.face_activation,
            self.detection_miss,
        ):
            if not (0.0 <= p <= 1.0):
                raise ValueError("probabilities must lie in [0, 1]")
        if self.activation_high < self.activation_low:
            raise ValueError("activation_high below activation_low")

    @property
    def n_parts(self) -> int:
        return 1 + self.n_poselets + (1 if self.include_face else 0)

    def registry(self) -> PartRegistry:
        return make_registry(self.n_poselets, self.include_face)

    def _per_part(self, value: float | tuple[float, ...], name: str) -> np.ndarray:
        if isinstance(value, (int, float)):
            return np.full(self.n_parts, float(value))
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != (self.n_parts,):
            raise ValueError(f"{name} must have one entry per part ({self.n_parts})")
        return arr

    def sigma_vector(self) -> np.ndarray:
        if self.noise_sigma is not None:
            return self._per_part(self.noise_sigma, "noise_sigma")
        sig = np.full(self.n_parts, self.noise_sigma_poselet)
        sig[GLOBAL_PART_ID] = self.noise_sigma_global
        if self.include_face:
            sig[-1] = self.noise_sigma_face
        return sig

    def informativeness_vector(self) -> np.ndarray:
        return self._per_part(self.informativeness, "informativeness")

    def activation_matrix(self) -> np.ndarray:
        """Per (part, pose) activation probability; global row is all ones."""
        A = np.empty((self.n_parts, self.pose_states))
        A[GLOBAL_PART_ID] = 1.0
        if self.activation_prob is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1]))
            A[1 : 1 + self.n_poselets] = rng.uniform(
                self.activation_low, self.activation_high, (self.n_poselets, self.pose_states)
            )
            if self.include_face:
                A[-1] = self.face_activation
        elif isinstance(self.activation_prob, (int, float)):
            A[1:] = float(self.activation_prob)
        else:
            M = np.asarray(self.activation_prob, dtype=np.float64)
            if M.shape != (self.n_parts, self.pose_states):
                raise ValueError("activation_prob matrix must be (n_parts, pose_states)")
            A = M.copy()
            A[GLOBAL_PART_ID] = 1.0
        if np.any(A < 0.0) or np.any(A > 1.0):
            raise ValueError("activation probabilities must lie in [0, 1]")
        return A


def planted_config(informative_part: int, seed: int, **overrides) -> SynthConfig:
    """Config where exactly one part is informative and the rest are pure noise."""
    base = SynthConfig(seed=seed)
    n_parts = base.n_parts
    if not (0 <= informative_part < n_parts):
        raise ValueError("informative_part out of range")
    info = tuple(1.0 if i == informative_part else 0.0 for i in range(n_parts))
    defaults = dict(
        informativeness=info,
        noise_sigma=0.6,
        activation_prob=0.7,
        n_identities=16,
        instances_min=12,
        instances_max=12,
        splits=("val",),
    )
    defaults.update(overrides)
    return replace(base, **defaults)


@dataclass
class SynthData:
    """Everything the generator produced, in memory."""

    config: SynthConfig
    registry: PartRegistry
    records: list[tuple]  # write_index records
    dataset: Dataset
    features: dict[int, FeatureMatrix]
    detections: dict[int, list[Detection]]
    coverage: dict[str, dict[int, list[str]]]  # split -> part -> covered labels
    poses: dict[int, int]  # instance_id -> pose state
    activation_prob: np.ndarray


def _label(split: str, idx: int) -> str:
    return f"{split}_{idx:04d}"


def generate(cfg: SynthConfig) -> SynthData:
    registry = cfg.registry()
    sigma = cfg.sigma_vector()
    info = cfg.informativeness_vector()
    act_prob = cfg.activation_matrix()
    n_parts, d = cfg.n_parts, cfg.feature_dim

    records: list[tuple] = []
    poses: dict[int, int] = {}
    active: dict[int, np.ndarray] = {}  # instance_id -> bool per part
    feat_ids: dict[int, list[int]] = {p: [] for p in range(n_parts)}
    feat_rows: dict[int, list[np.ndarray]] = {p: [] for p in range(n_parts)}
    detections: dict[int, list[Detection]] = {}
    coverage: dict[str, dict[int, set[str]]] = {}

    next_instance = 1
    next_photo = 1
    next_detection = 1

    for split_idx, split in enumerate(cfg.splits):
        rng_count = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, split_idx]))
        rng_pose = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, split_idx]))
        rng_act = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4, split_idx]))
        rng_photo = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5, split_idx]))
        rng_det = np.random.default_rng(np.random.SeedSequence([cfg.seed, 6, split_idx]))
        rng_noise = {
            p: np.random.default_rng(np.random.SeedSequence([cfg.seed, 7, split_idx, p]))
            for p in range(n_parts)
        }
        rng_proto = np.random.default_rng(np.random.SeedSequence([cfg.seed, 8, split_idx]))
        # prototypes per part: (n_identities, d), scaled by that part's informativeness
        protos = {
            p: rng_proto.normal(0.0, 1.0, (cfg.n_identities, d)) * info[p]
            for p in range(n_parts)
        }

        counts = rng_count.integers(cfg.instances_min, cfg.instances_max + 1, cfg.n_identities)
        coverage[split] = {p: set() for p in range(n_parts)}
        split_instances: list[tuple[int, int, str]] = []  # (instance_id, identity idx, label)

        for ident in range(cfg.n_identities):
            label = _label(split, ident)
            for _k in range(int(counts[ident])):
                iid = next_instance
                next_instance += 1
                pose = int(rng_pose.integers(cfg.pose_states))
                poses[iid] = pose
                mask = rng_act.random(n_parts) < act_prob[:, pose]
                mask[GLOBAL_PART_ID] = True
                active[iid] = mask
                for p in range(n_parts):
                    if mask[p]:
                        row = protos[p][ident] + rng_noise[p].normal(0.0, sigma[p], d)
                        feat_ids[p].append(iid)
                        feat_rows[p].append(row)
                        coverage[split][p].add(label)
                split_instances.append((iid, ident, label))

        # uploaders round-robin over the instance stream; photos group 1-3
        # same-uploader instances, never repeating an identity inside a photo
        uploader_base = split_idx * cfg.n_uploaders
        by_uploader: dict[int, list[tuple[int, int, str]]] = {}
        uploader_of: dict[int, int] = {}
        for pos, item in enumerate(split_instances):
            uid = uploader_base + (pos % cfg.n_uploaders)
            uploader_of[item[0]] = uid
            by_uploader.setdefault(uid, []).append(item)

        for uid in sorted(by_uploader):
            pool = by_uploader[uid]
            pos = 0
            while pos < len(pool):
                size = int(rng_photo.integers(1, 4))
                group: list[tuple[int, int, str]] = []
                seen_idents: set[int] = set()
                while pos < len(pool) and len(group) < size:
                    if pool[pos][1] in seen_idents:
                        break
                    group.append(pool[pos])
                    seen_idents.add(pool[pos][1])
                    pos += 1
                photo_id = next_photo
                next_photo += 1
                album_id = uid * 1000 + (photo_id % 7)
                dets: list[Detection] = []
                for slot, (iid, ident, label) in enumerate(group):
                    w = float(rng_photo.uniform(18.0, 30.0))
                    h = w * float(rng_photo.uniform(0.9, 1.2))
                    x = 10.0 + 70.0 * slot + float(rng_photo.uniform(-5.0, 5.0))
                    y = 15.0 + float(rng_photo.uniform(-5.0, 5.0))
                    head = BBox(x, y, w, h)
                    records.append((iid, photo_id, album_id, uid, head, label, split))
                    if rng_det.random() < cfg.detection_miss:
                        continue
                    body = body_from_head(head)
                    jx = float(rng_det.uniform(-0.05, 0.05)) * body.w
                    jy = float(rng_det.uniform(-0.05, 0.05)) * body.h
                    person = BBox(body.x + jx, body.y + jy, body.w, body.h)
                    acts = []
                    for p in range(1, n_parts):
                        if active[iid][p]:
                            patch = BBox(
                                person.x + (p % 3) * person.w / 3.0,
                                person.y + (p // 3) * person.h / 4.0,
                                person.w / 3.0,
                                person.h / 4.0,
                            )
                            acts.append((p, patch, float(rng_det.uniform(0.5, 1.0))))
                    dets.append(
                        Detection(
                            next_detection,
                            person,
                            float(rng_det.uniform(0.5, 1.0)),
                            tuple(acts),
                        )
                    )
                    next_detection += 1
                if dets:
                    detections[photo_id] = dets

    features = {
        p: FeatureMatrix(
            p,
            np.asarray(feat_ids[p], dtype=np.int64),
            np.asarray(feat_rows[p], dtype=np.float64).reshape(len(feat_rows[p]), d),
            normalized=False,
        ).normalized_copy()
        for p in range(n_parts)
    }
    dataset = _dataset_from_records(records)
    cov_lists = {
        split: {p: sorted(v) for p, v in parts.items()} for split, parts in coverage.items()
    }
    return SynthData(
        config=cfg,
        registry=registry,
        records=records,
        dataset=dataset,
        features=features,
        detections=detections,
        coverage=cov_lists,
        poses=poses,
        activation_prob=act_prob,
    )


def _dataset_from_records(records: list[tuple]) -> Dataset:
    """Build the Dataset exactly as load_index would, without touching disk."""
    label_maps: dict[str, dict[str, int]] = {}
    identity_labels: dict[str, tuple[str, ...]] = {}
    splits = sorted({r[6] for r in records})
    for split in splits:
        labels = sorted({r[5] for r in records if r[6] == split})
        label_maps[split] = {lab: i for i, lab in enumerate(labels)}
        identity_labels[split] = tuple(labels)
    instances = [
        Instance(iid, pid, aid, uid, head, label_maps[split][label], split, label)
        for iid, pid, aid, uid, head, label, split in records
    ]
    instances.sort(key=lambda i: i.instance_id)
    return Dataset(instances, identity_labels)


def write_synth(data: SynthData, out_dir: str | Path) -> list[Path]:
    """Write the benchmark to disk in the library's file formats.

    Emits index.tsv, detections.tsv, coverage.json, and one feature file per
    part under features/. Returns the written paths (sorted).
    """
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []

    index_path = out / "index.tsv"
    write_index(index_path, data.records)
    paths.append(index_path)

    det_path = out / "detections.tsv"
    write_detections(det_path, data.detections)
    paths.append(det_path)

    cov_path = out / "coverage.json"
    atomic_write_text(cov_path, json.dumps(data.coverage, sort_keys=True, indent=2) + "\n")
    paths.append(cov_path)

    for pid in sorted(data.features):
        p = out / "features" / f"part_{pid:03d}.pfv"
        write_features(p, data.features[pid])
        paths.append(p)

    return sorted(paths)


def config_from_json(path: str | Path) -> SynthConfig:
    """Load a SynthConfig from a JSON object file; absent keys keep defaults."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    kwargs = {}
    valid = {f.name for f in SynthConfig.__dataclass_fields__.values()}
    for key, value in raw.items():
        if key not in valid:
            raise ValueError(f"{path}: unknown config key {key!r}")
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    return SynthConfig(**kwargs)
