"""Episodic training, evaluation, the unlabeled-size sweep and mask diagnostics.

Randomness: every stream is a numpy ``Generator`` (PCG64) seeded from a
tuple of integers, e.g. ``(model_seed, split_seed)`` for training episodes
and ``(eval_seed, split_seed, episode_index)`` for evaluation episodes, so
evaluation is order-independent and can be parallelised.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from semiproto import __version__
from semiproto.embedding import EmbeddingConfig, embed
from semiproto.episodes import (
    check_feasible,
    gen_synthetic,
    load_dataset,
    make_split,
    sample_episode,
    synthetic_spec_from_dict,
)
from semiproto.errors import ContractError, NumericError
from semiproto.model import episode_forward, init_model
from semiproto.numerics import AdamState, StepSchedule, Tensor, adam_step, backward, lr_at, no_grad
from semiproto.protonet import compute_prototypes, predict
from semiproto.refinement import Variant, masked_refine, soft_assignments

log = logging.getLogger(__name__)


# --------------------------------------------------------------------- results


def aggregate(values):
    """Mean and standard error (sample std / sqrt(n)) of per-split values."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float("nan"), float("nan")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


@dataclass
class RunResult:
    variant: str
    mode: str
    N: int
    K: int
    M_train: int
    M_test: int
    H: int
    per_split: dict = field(default_factory=dict)
    per_split_stderr: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def mean(self):
        return aggregate([self.per_split[s] for s in sorted(self.per_split)])[0]

    @property
    def stderr(self):
        return aggregate([self.per_split[s] for s in sorted(self.per_split)])[1]

    def rows(self, run_id):
        base = {
            "run_id": run_id, "variant": self.variant, "mode": self.mode, "N": self.N, "K": self.K,
            "M_train": self.M_train, "M_test": self.M_test, "H": self.H,
        }
        out = [
            {**base, "split_seed": s, "accuracy": self.per_split[s], "stderr": self.per_split_stderr.get(s, 0.0)}
            for s in sorted(self.per_split)
        ]
        out.append({**base, "split_seed": "all", "accuracy": self.mean, "stderr": self.stderr})
        return out


def pooled_stderr(a, b):
    return float(np.hypot(a.stderr, b.stderr))


# ------------------------------------------------------------------ data setup


def load_data(config):
    if config.dataset is not None:
        return load_dataset(config.dataset)
    return gen_synthetic(synthetic_spec_from_dict(config.synthetic))


def embedding_config(config, dataset):
    sec = config.embedding
    return EmbeddingConfig(
        kind=sec.kind,
        input_shape=dataset.input_shape,
        hidden=tuple(sec.hidden),
        embed_dim=sec.embed_dim,
        nonlinearity=sec.nonlinearity,
    )


def min_labeled(config):
    return config.K + config.q_per_class


def split_for(config, dataset, split_seed):
    return make_split(dataset, config.labeled_ratio, split_seed, min_labeled=min_labeled(config))


def validate(config, dataset, split):
    """Fail before any update if some episode request cannot be met."""
    check_feasible(dataset, split, "train", config.N, config.K, config.M_train, config.H_train, config.q_per_class)
    if config.val_episodes and config.eval_every:
        check_feasible(dataset, split, "val", config.N, config.K, config.M_train, config.H_train, config.q_per_class)
    for m in config.m_test_list:
        check_feasible(dataset, split, "test", config.N, config.K, m, config.H_test, config.q_per_class)


# -------------------------------------------------------------------- training


@dataclass
class TrainState:
    model: object
    adam: AdamState
    updates: int
    split_seed: int
    train_variant: Variant
    best_val: float = float("nan")
    best_step: int = -1
    losses: list = field(default_factory=list)
    val_history: list = field(default_factory=list)


def _model_seed(config, split_seed):
    return int(np.random.SeedSequence([config.model_seed, split_seed]).generate_state(1)[0])


def train_one(config, dataset, split, split_seed, total_updates=None):
    """Train one model on one labeled/unlabeled split; returns the best snapshot."""
    variant = config.train_variant
    total = config.total_updates if total_updates is None else total_updates
    emb_cfg = embedding_config(config, dataset)
    model = init_model(emb_cfg, variant, _model_seed(config, split_seed), mask_hidden=config.mask_hidden)
    params = model.parameters()
    opt = config.optimizer
    adam = AdamState(opt.beta1, opt.beta2, opt.epsilon, opt.lr).init_for(params)
    schedule = StepSchedule(opt.lr, opt.decay_every, opt.start_at)
    rng = np.random.default_rng([config.model_seed, split_seed, 0])
    state = TrainState(model, adam, 0, split_seed, variant)
    best = None
    for step in range(total):
        ep = sample_episode(
            dataset, split, "train", config.N, config.K, config.M_train, config.H_train,
            config.q_per_class, rng, check=False,
        )
        try:
            loss, _, _ = episode_forward(model, ep, variant, config.num_steps)
        except NumericError as err:
            raise NumericError(
                f"training diverged at update {step} (split {split_seed}); episode classes "
                f"{ep.class_ids.tolist()}, distractors {ep.distractor_class_ids.tolist()}: {err}",
                op_id=err.op_id,
            ) from err
        grads = backward(loss, wrt=params)
        adam_step(adam, params, grads, lr_at(step, schedule))
        state.losses.append(loss.item())
        state.updates = step + 1
        if config.eval_every and config.val_episodes and (step + 1) % config.eval_every == 0:
            acc = evaluate_model(
                model, dataset, split, "val", variant, config.N, config.K, config.M_train,
                config.H_train, config.q_per_class, config.val_episodes, (config.eval_seed, split_seed, 7),
                config.num_steps,
            )[0]
            state.val_history.append((step + 1, acc))
            if best is None or acc > state.best_val:
                state.best_val, state.best_step = acc, step + 1
                best = model.copy()
    if best is not None:
        state.model = best
    return state


def train(config, dataset=None):
    """Train one model per split seed. Returns ``(states, RunResult)``."""
    dataset = load_data(config) if dataset is None else dataset
    splits = {s: split_for(config, dataset, s) for s in config.split_seeds}
    for split in splits.values():
        validate(config, dataset, split)
    start = time.time()
    states = {s: train_one(config, dataset, splits[s], s) for s in config.split_seeds}
    result = evaluate(states, config, dataset=dataset, splits=splits)
    result.metadata["train_wall_time"] = time.time() - start
    return states, result


# ------------------------------------------------------------------ evaluation


def _episode_accuracy(model, episode, variant, num_steps):
    with no_grad():
        _, log_probs, _ = episode_forward(model, episode, variant, num_steps)
    return float(np.mean(predict(log_probs) == episode.query_y))


def evaluate_model(model, dataset, split, partition, variant, n_way, k_shot, m, h, q, n_episodes, seed,
                   num_steps=1, workers=1):
    """Mean query accuracy over ``n_episodes`` episodes and its episode-level stderr.

    Episode ``i`` is drawn from a generator seeded with ``(*seed, i)``, so
    results do not depend on ``workers``.
    """
    seed = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)

    def one(i):
        rng = np.random.default_rng([*seed, i])
        ep = sample_episode(dataset, split, partition, n_way, k_shot, m, h, q, rng, check=False)
        return _episode_accuracy(model, ep, variant, num_steps)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(one, range(n_episodes)))
    else:
        accs = [one(i) for i in range(n_episodes)]
    accs = np.asarray(accs)
    stderr = float(accs.std(ddof=1) / np.sqrt(accs.size)) if accs.size > 1 else 0.0
    return float(accs.mean()), stderr


def evaluate(states, config, partition="test", M_test=None, H_test=None, variant=None, dataset=None,
             splits=None, n_episodes=None):
    """Evaluate one trained state per split seed and aggregate across splits."""
    dataset = load_data(config) if dataset is None else dataset
    m = config.m_test_list[0] if M_test is None else int(M_test)
    h = config.H_test if H_test is None else int(H_test)
    variant = config.eval_variant if variant is None else Variant.parse(variant)
    n_episodes = config.eval_episodes if n_episodes is None else n_episodes
    result = RunResult(variant.value, config.mode, config.N, config.K, config.M_train, m, h)
    start = time.time()
    for s, state in sorted(states.items()):
        split = splits[s] if splits else split_for(config, dataset, s)
        check_feasible(dataset, split, partition, config.N, config.K, m, h, config.q_per_class)
        acc, se = evaluate_model(
            state.model, dataset, split, partition, variant, config.N, config.K, m, h,
            config.q_per_class, n_episodes, (config.eval_seed, s), config.num_steps, config.workers,
        )
        result.per_split[s] = acc
        result.per_split_stderr[s] = se
    result.metadata.update(
        {
            "config_hash": config.config_hash(),
            "version": f"semiproto {__version__}",
            "partition": partition,
            "eval_episodes": n_episodes,
            "wall_time": time.time() - start,
        }
    )
    return result


def semi_supervised_inference(states, config, M_test=None, H_test=None, dataset=None, splits=None):
    """Evaluate a supervised embedding with one soft k-means step at test time only."""
    for s, state in states.items():
        if state.train_variant is not Variant.NONE:
            raise ContractError(
                f"semi-supervised inference needs a supervised (NONE) model, split {s} was trained "
                f"with {state.train_variant.value}"
            )
    cfg = config.replace(mode="semi_supervised_inference", variant="SOFT_KMEANS", num_steps=1)
    return evaluate(states, cfg, M_test=M_test, H_test=H_test, variant=Variant.SOFT_KMEANS,
                    dataset=dataset, splits=splits)


def sweep_unlabeled(states, config, m_list, H_test=None, variant=None, dataset=None, splits=None):
    """One evaluation per unlabeled-set size; episodes share classes, support and query."""
    dataset = load_data(config) if dataset is None else dataset
    return [
        (int(m), evaluate(states, config, M_test=m, H_test=H_test, variant=variant, dataset=dataset, splits=splits))
        for m in m_list
    ]


# ---------------------------------------------------------------------- masks


def mask_histogram(states, config, num_episodes, H_test=None, M_test=None, dataset=None, splits=None):
    """Mask values of a masked soft k-means model joined with hidden distractor flags.

    Returns ``(rows, summary)``. ``rows`` are dicts with episode_id, item_id,
    class_id, mask and is_distractor (plus split_seed and the soft assignment).
    """
    dataset = load_data(config) if dataset is None else dataset
    h = config.H_test if H_test is None else int(H_test)
    m = config.m_test_list[0] if M_test is None else int(M_test)
    rows = []
    for s, state in sorted(states.items()):
        if state.train_variant is not Variant.MASKED_SOFT_KMEANS or state.model.mask_mlp is None:
            raise ContractError("mask_histogram needs a MASKED_SOFT_KMEANS model")
        split = splits[s] if splits else split_for(config, dataset, s)
        for i in range(num_episodes):
            rng = np.random.default_rng([config.eval_seed, s, 99, i])
            ep = sample_episode(dataset, split, "test", config.N, config.K, m, h, config.q_per_class, rng)
            masks, assign = episode_masks(state.model, ep)
            for j, item in enumerate(ep.unlabeled_ids):
                for c, cls in enumerate(ep.class_ids):
                    rows.append(
                        {
                            "split_seed": s,
                            "episode_id": i,
                            "item_id": int(item),
                            "class_id": int(cls),
                            "mask": float(masks[j, c]),
                            "assignment": float(assign[j, c]),
                            "is_distractor": int(ep.unlabeled_is_distractor[j]),
                        }
                    )
    return rows, summarize_masks(rows)


def episode_masks(model, episode):
    """``(masks, assignments)`` as ``M x N`` arrays for one episode."""
    ns, nu = len(episode.support_y), len(episode.unlabeled_x)
    with no_grad():
        inputs = np.concatenate([episode.support_x, episode.unlabeled_x], axis=0)
        h = embed(model.embedding, Tensor(inputs.reshape(len(inputs), -1)))
        h_support, h_unl = h[:ns], h[ns : ns + nu]
        protos = compute_prototypes(h_support, episode.support_y, episode.n_way)
        _, masks = masked_refine(h_support, episode.support_y, h_unl, protos, model.mask_mlp, return_masks=True)
        assign = soft_assignments(h_unl, protos)
    return masks.data, assign.data


def summarize_masks(rows):
    """Mean mask for distractor vs non-distractor items.

    ``mean_mask_*`` averages every (item, prototype) pair; ``weighted_mask_*``
    weights each pair by the item's soft assignment, i.e. the mask actually
    applied to the item's contribution.
    """
    if not rows:
        return {}
    mask = np.array([r["mask"] for r in rows])
    assign = np.array([r["assignment"] for r in rows])
    flag = np.array([r["is_distractor"] for r in rows], dtype=bool)
    out = {"num_values": int(mask.size)}
    for name, sel in (("non_distractor", ~flag), ("distractor", flag)):
        out[f"mean_mask_{name}"] = float(mask[sel].mean()) if sel.any() else float("nan")
        out[f"weighted_mask_{name}"] = (
            float((mask[sel] * assign[sel]).sum() / assign[sel].sum()) if sel.any() else float("nan")
        )
    return out
