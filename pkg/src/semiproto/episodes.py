"""Datasets, labeled/unlabeled splits, synthetic data and episode sampling."""
import json
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from semiproto.errors import ConfigurationError, DatasetFormatError

PARTITIONS = ("train", "val", "test")
MAGIC = b"FSLDS1"


@dataclass
class Dataset:
    """Items with integer class ids and a class-level train/val/test partition.

    ``inputs`` is float32 with shape ``(n_items, *input_shape)``.
    ``categories`` optionally gives a category id per class.
    """

    inputs: np.ndarray
    labels: np.ndarray
    class_names: list
    partition: dict
    name: str = "dataset"
    categories: list = None
    _by_class: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.partition = {p: [int(c) for c in self.partition.get(p, [])] for p in PARTITIONS}
        seen = [c for p in PARTITIONS for c in self.partition[p]]
        if len(seen) != len(set(seen)):
            raise ConfigurationError("class partitions overlap")
        if set(seen) != set(range(len(self.class_names))):
            raise ConfigurationError("every class must belong to exactly one partition")

    @property
    def input_shape(self):
        return tuple(self.inputs.shape[1:])

    @property
    def num_classes(self):
        return len(self.class_names)

    def items_of(self, class_id):
        if self._by_class is None:
            order = np.argsort(self.labels, kind="stable")
            bounds = np.searchsorted(self.labels[order], np.arange(self.num_classes + 1))
            self._by_class = {c: order[bounds[c] : bounds[c + 1]] for c in range(self.num_classes)}
        return self._by_class[class_id]

    def equals(self, other):
        return (
            self.name == other.name
            and self.class_names == other.class_names
            and self.partition == other.partition
            and self.categories == other.categories
            and self.inputs.shape == other.inputs.shape
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.labels, other.labels)
        )


# ------------------------------------------------------------------ synthetic


@dataclass
class SyntheticSpec:
    """Hierarchical Gaussian data: categories -> classes -> items.

    Only the first ``signal_dim`` coordinates carry category/class structure;
    the remaining ones are pure per-item noise with scale ``nuisance_scale``.
    """

    num_categories: int = 34
    classes_per_category: int = 18
    items_per_class: int = 100
    input_dim: int = 32
    category_center_scale: float = 1.0
    class_center_scale: float = 0.5
    within_class_noise: float = 0.3
    signal_dim: int = None
    nuisance_scale: float = 0.0
    split_categories: tuple = (20, 6, 8)
    seed: int = 0

    def __post_init__(self):
        if self.signal_dim is None:
            self.signal_dim = self.input_dim
        self.split_categories = tuple(int(n) for n in self.split_categories)
        for key in ("num_categories", "classes_per_category", "items_per_class", "input_dim", "signal_dim"):
            if int(getattr(self, key)) < 1:
                raise ConfigurationError(f"synthetic.{key} must be >= 1", key=f"synthetic.{key}")
        for key in ("category_center_scale", "class_center_scale"):
            if getattr(self, key) < 0:
                raise ConfigurationError(f"synthetic.{key} must be >= 0", key=f"synthetic.{key}")
        if self.within_class_noise < 0 or self.nuisance_scale < 0:
            raise ConfigurationError("noise scales must be non-negative", key="synthetic.within_class_noise")
        if self.signal_dim > self.input_dim:
            raise ConfigurationError("signal_dim cannot exceed input_dim", key="synthetic.signal_dim")
        if len(self.split_categories) != 3 or sum(self.split_categories) != self.num_categories:
            raise ConfigurationError(
                "split_categories must give train/val/test category counts summing to num_categories",
                key="synthetic.split_categories",
            )


def gen_synthetic(spec):
    rng = np.random.default_rng(spec.seed)
    ds, n_cls, n_items = spec.signal_dim, spec.classes_per_category, spec.items_per_class
    cat_centers = rng.normal(0.0, spec.category_center_scale, size=(spec.num_categories, ds))
    class_centers = cat_centers[:, None, :] + rng.normal(
        0.0, spec.class_center_scale, size=(spec.num_categories, n_cls, ds)
    )
    class_centers = class_centers.reshape(-1, ds)
    n_classes = class_centers.shape[0]
    labels = np.repeat(np.arange(n_classes), n_items)
    inputs = np.empty((labels.size, spec.input_dim))
    inputs[:, :ds] = class_centers[labels] + rng.normal(0.0, spec.within_class_noise, size=(labels.size, ds))
    if spec.input_dim > ds:
        inputs[:, ds:] = rng.normal(0.0, spec.nuisance_scale, size=(labels.size, spec.input_dim - ds))

    categories = np.repeat(np.arange(spec.num_categories), n_cls)
    cat_order = rng.permutation(spec.num_categories)
    n_train, n_val, _ = spec.split_categories
    cat_part = {}
    for i, cat in enumerate(cat_order):
        cat_part[int(cat)] = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
    partition = {p: [c for c in range(n_classes) if cat_part[int(categories[c])] == p] for p in PARTITIONS}
    names = [f"cat{categories[c]:02d}/class{c:04d}" for c in range(n_classes)]
    return Dataset(
        inputs.astype(np.float32),
        labels,
        names,
        partition,
        name=f"synthetic-{spec.seed}",
        categories=[int(c) for c in categories],
    )


# ----------------------------------------------------------------- file format


def save_dataset(dataset, path):
    """Write FSLDS1: magic, u32 header length, JSON header, f32 inputs, u32 labels, CRC32."""
    header = {
        "format_version": 1,
        "name": dataset.name,
        "num_items": int(dataset.labels.size),
        "input_shape": list(dataset.input_shape),
        "class_names": list(dataset.class_names),
        "partition": dataset.partition,
        "categories": dataset.categories,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(
        [
            MAGIC,
            struct.pack("<I", len(head)),
            head,
            dataset.inputs.astype("<f4").tobytes(order="C"),
            dataset.labels.astype("<u4").tobytes(order="C"),
        ]
    )
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)
    return path


def load_dataset(path):
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8:
        raise DatasetFormatError("file too short for an FSLDS1 header", offset=len(raw))
    if raw[: len(MAGIC)] != MAGIC:
        raise DatasetFormatError("bad magic bytes, not an FSLDS1 file", offset=0)
    (head_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    head_start = len(MAGIC) + 4
    head_end = head_start + head_len
    if head_end > len(raw) - 4:
        raise DatasetFormatError("truncated header", offset=len(raw))
    try:
        header = json.loads(raw[head_start:head_end].decode("utf-8"))
        n = int(header["num_items"])
        shape = tuple(int(s) for s in header["input_shape"])
    except (ValueError, KeyError, TypeError) as err:
        raise DatasetFormatError(f"malformed header: {err}", offset=head_start) from None
    width = int(np.prod(shape)) if shape else 1
    inputs_end = head_end + 4 * n * width
    labels_end = inputs_end + 4 * n
    if labels_end + 4 != len(raw):
        raise DatasetFormatError(
            f"payload size mismatch: expected {labels_end + 4} bytes, found {len(raw)}",
            offset=min(len(raw), labels_end),
        )
    (crc,) = struct.unpack_from("<I", raw, labels_end)
    if crc != zlib.crc32(raw[:labels_end]):
        raise DatasetFormatError("checksum mismatch", offset=labels_end)
    inputs = np.frombuffer(raw, dtype="<f4", count=n * width, offset=head_end).reshape((n, *shape))
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=inputs_end)
    return Dataset(
        inputs.astype(np.float32),
        labels.astype(np.int64),
        header["class_names"],
        header["partition"],
        name=header.get("name", "dataset"),
        categories=header.get("categories"),
    )


# ---------------------------------------------------------------------- splits


@dataclass
class LabeledUnlabeledSplit:
    labeled: dict
    unlabeled: dict
    labeled_ratio: float
    seed: int

    def to_json(self):
        return {
            "labeled_ratio": self.labeled_ratio,
            "seed": self.seed,
            "labeled": {str(c): ids.tolist() for c, ids in self.labeled.items()},
            "unlabeled": {str(c): ids.tolist() for c, ids in self.unlabeled.items()},
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            {int(c): np.asarray(v, dtype=np.int64) for c, v in doc["labeled"].items()},
            {int(c): np.asarray(v, dtype=np.int64) for c, v in doc["unlabeled"].items()},
            float(doc["labeled_ratio"]),
            int(doc["seed"]),
        )


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def make_split(dataset, labeled_ratio, seed, min_labeled=1):
    """Per-class uniform split into disjoint labeled and unlabeled item sets.

    Each class keeps ``round(labeled_ratio * size)`` labeled items, but never
    fewer than ``min_labeled``.
    """
    if not 0.0 < labeled_ratio < 1.0:
        raise ConfigurationError(f"labeled_ratio must lie in (0, 1), got {labeled_ratio}", key="labeled_ratio")
    rng = np.random.default_rng(seed)
    labeled, unlabeled = {}, {}
    for c in range(dataset.num_classes):
        items = dataset.items_of(c)
        n_lab = max(_round_half_up(labeled_ratio * items.size), min_labeled)
        if n_lab > items.size:
            raise ConfigurationError(
                f"class {dataset.class_names[c]!r} has {items.size} items, needs {n_lab} labeled",
                key="labeled_ratio",
            )
        perm = rng.permutation(items)
        labeled[c] = np.sort(perm[:n_lab])
        unlabeled[c] = np.sort(perm[n_lab:])
    return LabeledUnlabeledSplit(labeled, unlabeled, float(labeled_ratio), int(seed))


def check_feasible(dataset, split, partition, n_way, k_shot, m_unlabeled, h_distractors, q_per_class):
    """Raise ConfigurationError unless every possible episode can be filled."""
    classes = dataset.partition[partition]
    if n_way < 1 or k_shot < 1 or q_per_class < 1 or m_unlabeled < 0 or h_distractors < 0:
        raise ConfigurationError("N, K, q must be >= 1 and M, H >= 0", key="N")
    if len(classes) < n_way + h_distractors:
        raise ConfigurationError(
            f"partition {partition!r} has {len(classes)} classes, episode needs N+H={n_way + h_distractors}",
            key="N",
        )
    for c in classes:
        if split.labeled[c].size < k_shot + q_per_class:
            raise ConfigurationError(
                f"class {dataset.class_names[c]!r} has {split.labeled[c].size} labeled items, "
                f"needs K+q={k_shot + q_per_class}",
                key="K",
            )
        if split.unlabeled[c].size < m_unlabeled:
            raise ConfigurationError(
                f"class {dataset.class_names[c]!r} has {split.unlabeled[c].size} unlabeled items, needs M={m_unlabeled}",
                key="M",
            )


@dataclass
class Episode:
    """One few-shot task. ``*_y`` hold 0-based episode class indices.

    ``unlabeled_is_distractor`` and ``unlabeled_y`` (``-1`` for distractors)
    are diagnostics only and never reach the model.
    """

    support_x: np.ndarray
    support_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_is_distractor: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    class_ids: np.ndarray
    distractor_class_ids: np.ndarray
    support_ids: np.ndarray
    unlabeled_ids: np.ndarray
    query_ids: np.ndarray
    unlabeled_y: np.ndarray = None

    @property
    def n_way(self):
        return len(self.class_ids)

    def without_unlabeled(self):
        """The same episode with an empty unlabeled set."""
        none = np.zeros(0, dtype=np.int64)
        return replace(
            self,
            unlabeled_x=self.unlabeled_x[:0],
            unlabeled_is_distractor=self.unlabeled_is_distractor[:0],
            unlabeled_ids=none,
            unlabeled_y=none,
        )


def sample_episode(dataset, split, partition, n_way, k_shot, m_unlabeled, h_distractors, q_per_class, rng, check=True):
    """Draw classes, then support/query, then the unlabeled set.

    The draw order means that episodes from the same rng state share their
    classes, support and query sets whatever ``m_unlabeled`` is.
    """
    if check:
        check_feasible(dataset, split, partition, n_way, k_shot, m_unlabeled, h_distractors, q_per_class)
    classes = np.asarray(dataset.partition[partition])
    chosen = rng.choice(classes, size=n_way + h_distractors, replace=False)
    episode_classes, distractor_classes = chosen[:n_way], chosen[n_way:]

    support_ids, query_ids = [], []
    for c in episode_classes:
        picked = rng.choice(split.labeled[int(c)], size=k_shot + q_per_class, replace=False)
        support_ids.append(picked[:k_shot])
        query_ids.append(picked[k_shot:])
    unl_ids, unl_y, unl_flag = [], [], []
    for i, c in enumerate(chosen):
        if m_unlabeled == 0:
            break
        unl_ids.append(rng.choice(split.unlabeled[int(c)], size=m_unlabeled, replace=False))
        unl_y.append(np.full(m_unlabeled, i if i < n_way else -1))
        unl_flag.append(np.full(m_unlabeled, i >= n_way))

    support_ids = np.concatenate(support_ids)
    query_ids = np.concatenate(query_ids)
    unl_ids = np.concatenate(unl_ids) if unl_ids else np.zeros(0, dtype=np.int64)
    x = dataset.inputs
    return Episode(
        support_x=x[support_ids].astype(np.float64),
        support_y=np.repeat(np.arange(n_way), k_shot),
        unlabeled_x=x[unl_ids].astype(np.float64),
        unlabeled_is_distractor=np.concatenate(unl_flag) if unl_flag else np.zeros(0, dtype=bool),
        query_x=x[query_ids].astype(np.float64),
        query_y=np.repeat(np.arange(n_way), q_per_class),
        class_ids=episode_classes.astype(np.int64),
        distractor_class_ids=distractor_classes.astype(np.int64),
        support_ids=support_ids.astype(np.int64),
        unlabeled_ids=unl_ids.astype(np.int64),
        query_ids=query_ids.astype(np.int64),
        unlabeled_y=np.concatenate(unl_y) if unl_y else np.zeros(0, dtype=np.int64),
    )


def synthetic_spec_from_dict(doc):
    known = set(SyntheticSpec.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigurationError(f"unknown synthetic key {key!r}", key=f"synthetic.{key}")
    return SyntheticSpec(**doc)


def synthetic_spec_to_dict(spec):
    d = asdict(spec)
    d["split_categories"] = list(spec.split_categories)
    return d
