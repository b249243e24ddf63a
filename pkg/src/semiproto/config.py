"""Run configuration: one JSON document, dotted-key overrides, strict keys."""
import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from semiproto.errors import ConfigurationError
from semiproto.refinement import Variant

MODES = ("train_and_refine", "supervised_only", "semi_supervised_inference")


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    decay_every: int = 2000
    start_at: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class EmbeddingSection:
    kind: str = "mlp"
    hidden: list = field(default_factory=lambda: [64, 64])
    embed_dim: int = 16
    nonlinearity: str = "relu"


@dataclass
class BaselineConfig:
    logreg_iters: int = 500
    logreg_lr: float = 0.1
    logreg_l2: float = 1e-4
    pretrain_steps: int = 2000
    pretrain_batch: int = 64
    pretrain_lr: float = 1e-3


@dataclass
class RunConfig:
    dataset: str = None
    synthetic: dict = None
    labeled_ratio: float = 0.1
    variant: str = "SOFT_KMEANS"
    num_steps: int = 1
    mode: str = "train_and_refine"
    N: int = 5
    K: int = 1
    M_train: int = 5
    M_test: object = 20
    H_train: int = 0
    H_test: int = 0
    q_per_class: int = 5
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    total_updates: int = 5000
    eval_every: int = 500
    val_episodes: int = 200
    eval_episodes: int = 600
    split_seeds: list = field(default_factory=lambda: list(range(10)))
    model_seed: int = 0
    eval_seed: int = 1234
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    mask_hidden: int = 20
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    workers: int = 1

    def __post_init__(self):
        self.variant = Variant.parse(self.variant).value
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}", key="mode")
        for key in ("N", "K", "q_per_class", "total_updates", "eval_episodes", "num_steps", "mask_hidden", "workers"):
            if int(getattr(self, key)) < 1:
                raise ConfigurationError(f"{key} must be >= 1", key=key)
        for key in ("M_train", "H_train", "H_test", "eval_every", "val_episodes"):
            if int(getattr(self, key)) < 0:
                raise ConfigurationError(f"{key} must be >= 0", key=key)
        if any(int(m) < 0 for m in self.m_test_list):
            raise ConfigurationError("M_test must be >= 0", key="M_test")
        if not self.split_seeds:
            raise ConfigurationError("split_seeds must not be empty", key="split_seeds")
        if not 0.0 < self.labeled_ratio < 1.0:
            raise ConfigurationError("labeled_ratio must lie in (0, 1)", key="labeled_ratio")
        if self.optimizer.lr < 0:
            raise ConfigurationError("optimizer.lr must be >= 0", key="optimizer.lr")
        if self.dataset is None and self.synthetic is None:
            raise ConfigurationError("config needs either 'dataset' or 'synthetic'", key="dataset")

    @property
    def m_test_list(self):
        return [int(m) for m in self.M_test] if isinstance(self.M_test, (list, tuple)) else [int(self.M_test)]

    @property
    def train_variant(self):
        return Variant.NONE if self.mode != "train_and_refine" else Variant(self.variant)

    @property
    def eval_variant(self):
        if self.mode == "supervised_only":
            return Variant.NONE
        if self.mode == "semi_supervised_inference":
            return Variant.SOFT_KMEANS
        return Variant(self.variant)

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc):
        return _build(cls, doc, "")

    def replace(self, **changes):
        doc = self.to_dict()
        doc.update(changes)
        return RunConfig.from_dict(doc)


_NESTED = {"optimizer": OptimizerConfig, "embedding": EmbeddingSection, "baseline": BaselineConfig}


def _build(cls, doc, prefix):
    if not isinstance(doc, dict):
        raise ConfigurationError(f"section {prefix.rstrip('.') or 'root'} must be an object", key=prefix.rstrip("."))
    names = {f.name for f in fields(cls)}
    for key in doc:
        if key not in names:
            raise ConfigurationError(f"unknown config key {prefix + key!r}", key=prefix + key)
    kwargs = {}
    for key, value in doc.items():
        if cls is RunConfig and key in _NESTED:
            value = _build(_NESTED[key], value, f"{key}.")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigurationError(f"bad config section {prefix.rstrip('.') or 'root'}: {err}") from None


def parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc, overrides):
    """Apply ``key=value`` strings (dotted keys reach nested sections)."""
    doc = copy.deepcopy(doc)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value", key=item)
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        target = doc
        for i, part in enumerate(parts[:-1]):
            section = ".".join(parts[: i + 1])
            if part not in _NESTED and part != "synthetic":
                raise ConfigurationError(f"unknown config section {section!r}", key=section)
            if target.get(part) is None:
                target[part] = {}
            target = target[part]
        target[parts[-1]] = parse_value(raw)
    return doc


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"config {path} is not valid JSON: {err}") from None
    return RunConfig.from_dict(apply_overrides(doc, overrides))
