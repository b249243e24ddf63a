"""Non-episodic baselines: 1-nearest-neighbour and logistic regression.

Both run on the support set of each test episode, over pixel inputs, a
randomly initialised embedding or an embedding pretrained as a plain
classifier over all training classes.
"""
import time

import numpy as np

from semiproto import __version__, kernels
from semiproto.embedding import EmbeddingParams, embed, init_embedding
from semiproto.episodes import sample_episode
from semiproto.errors import ConfigurationError
from semiproto.numerics import AdamState, Tensor, adam_step, affine, backward, log_softmax, no_grad
from semiproto.protonet import episode_loss
from semiproto.train import RunResult, embedding_config, load_data, split_for

FEATURES = ("pixel", "embed_random", "embed_pretrained")
METHODS = ("1nn", "logreg")


def nn1_predict(support, support_y, query):
    """Label of the nearest support row (squared Euclidean, lowest index on ties)."""
    idx = kernels.nearest_index(np.ascontiguousarray(query, dtype=np.float64),
                                np.ascontiguousarray(support, dtype=np.float64))
    return np.asarray(support_y)[idx]


def logreg_predict(support, support_y, query, n_classes, l2=1e-4, iters=500, lr=0.1):
    """Multinomial logistic regression fit on the support set by full-batch GD.

    Features are centred on the support mean and scaled by the support RMS
    norm first. ``l2=inf`` pins the weights at zero. Returns
    ``(predictions, diverged)``.
    """
    support = np.asarray(support, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    mu = support.mean(axis=0)
    scale = np.sqrt(np.mean(np.sum((support - mu) ** 2, axis=1))) or 1.0
    xs, xq = (support - mu) / scale, (query - mu) / scale
    y = np.zeros((len(support_y), n_classes))
    y[np.arange(len(support_y)), support_y] = 1.0
    w = np.zeros((xs.shape[1], n_classes))
    b = np.zeros(n_classes)
    fixed_w = np.isinf(l2)
    for _ in range(iters):
        logits = xs @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        err = (p - y) / len(xs)
        if not fixed_w:
            w -= lr * (xs.T @ err + l2 * w)
        b -= lr * err.sum(axis=0)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            return None, True
    return np.argmax(xq @ w + b, axis=1), False


def pretrain_classifier(dataset, split, config, seed, keep_head=False):
    """Embedding + linear softmax head over all training classes; the head is dropped.

    Trains on the labeled split of the training partition only. The returned
    parameters have gradients disabled. With ``keep_head`` the result is
    ``(params, (head_w, head_b, classes))`` so the head can be inspected.
    """
    emb_cfg = embedding_config(config, dataset)
    params = init_embedding(emb_cfg, seed)
    classes = np.asarray(dataset.partition["train"])
    if classes.size == 0:
        raise ConfigurationError("pretraining needs training classes", key="dataset")
    ids = np.concatenate([split.labeled[int(c)] for c in classes])
    remap = {int(c): i for i, c in enumerate(classes)}
    targets = np.array([remap[int(c)] for c in dataset.labels[ids]])
    rng = np.random.default_rng([seed, 17])
    head_w = Tensor(rng.uniform(-1, 1, size=(emb_cfg.embed_dim, classes.size)) / np.sqrt(emb_cfg.embed_dim),
                    requires_grad=True)
    head_b = Tensor(np.zeros(classes.size), requires_grad=True)
    trainable = params.parameters() + [head_w, head_b]
    bc = config.baseline
    adam = AdamState(lr_base=bc.pretrain_lr).init_for(trainable)
    flat = dataset.inputs.reshape(len(dataset.inputs), -1)
    for _ in range(bc.pretrain_steps):
        batch = rng.choice(ids.size, size=min(bc.pretrain_batch, ids.size), replace=False)
        x = Tensor(flat[ids[batch]].astype(np.float64))
        logits = affine(embed(params, x), head_w, head_b)
        loss = episode_loss(log_softmax(logits, axis=1), targets[batch])
        adam_step(adam, trainable, backward(loss, wrt=trainable), bc.pretrain_lr)
    frozen = {k: Tensor(v.data.copy(), name=k) for k, v in params.tensors.items()}
    out = EmbeddingParams(emb_cfg, frozen, seed)
    if keep_head:
        return out, (head_w.data.copy(), head_b.data.copy(), classes)
    return out


def feature_fn(kind, params=None):
    if kind == "pixel":
        return lambda x: x.reshape(len(x), -1)
    if params is None:
        raise ConfigurationError(f"features {kind!r} need embedding parameters", key="features")

    def fn(x):
        with no_grad():
            return embed(params, Tensor(x.reshape(len(x), -1))).data

    return fn


def baseline_1nn(features, episodes):
    """Per-episode accuracy of 1-NN on ``features(x)``."""
    accs = []
    for ep in episodes:
        pred = nn1_predict(features(ep.support_x), ep.support_y, features(ep.query_x))
        accs.append(float(np.mean(pred == ep.query_y)))
    return np.asarray(accs)


def baseline_logreg(features, episodes, l2=1e-4, iters=500, lr=0.1):
    """Per-episode accuracy of logistic regression; diverged episodes are NaN."""
    accs = []
    for ep in episodes:
        pred, diverged = logreg_predict(
            features(ep.support_x), ep.support_y, features(ep.query_x), ep.n_way, l2, iters, lr
        )
        accs.append(float("nan") if diverged else float(np.mean(pred == ep.query_y)))
    return np.asarray(accs)


def run_baseline(method, features, config, dataset=None, splits=None, pretrained=None):
    """Evaluate a baseline on the same test episodes ``evaluate`` would draw.

    ``pretrained`` optionally maps split seed -> pretrained EmbeddingParams.
    """
    if method not in METHODS:
        raise ConfigurationError(f"baseline method must be one of {METHODS}", key="method")
    if features not in FEATURES:
        raise ConfigurationError(f"baseline features must be one of {FEATURES}", key="features")
    dataset = load_data(config) if dataset is None else dataset
    start = time.time()
    result = RunResult(f"{method}:{features}", "baseline", config.N, config.K, 0, 0, 0)
    diverged = 0
    for s in config.split_seeds:
        split = splits[s] if splits else split_for(config, dataset, s)
        params = None
        if features == "embed_random":
            params = init_embedding(embedding_config(config, dataset), int(np.random.SeedSequence([config.model_seed, s, 3]).generate_state(1)[0]))
        elif features == "embed_pretrained":
            params = pretrained[s] if pretrained and s in pretrained else pretrain_classifier(
                dataset, split, config, int(np.random.SeedSequence([config.model_seed, s, 5]).generate_state(1)[0])
            )
        fn = feature_fn(features, params)
        episodes = (
            sample_episode(dataset, split, "test", config.N, config.K, 0, 0, config.q_per_class,
                           np.random.default_rng([config.eval_seed, s, i]), check=(i == 0))
            for i in range(config.eval_episodes)
        )
        if method == "1nn":
            accs = baseline_1nn(fn, episodes)
        else:
            bc = config.baseline
            accs = baseline_logreg(fn, episodes, bc.logreg_l2, bc.logreg_iters, bc.logreg_lr)
        ok = np.isfinite(accs)
        diverged += int((~ok).sum())
        accs = accs[ok]
        result.per_split[s] = float(accs.mean()) if accs.size else float("nan")
        result.per_split_stderr[s] = float(accs.std(ddof=1) / np.sqrt(accs.size)) if accs.size > 1 else 0.0
    result.metadata.update(
        {
            "config_hash": config.config_hash(),
            "version": f"semiproto {__version__}",
            "diverged_episodes": diverged,
            "logreg": {"optimizer": "full-batch gradient descent", "iters": config.baseline.logreg_iters,
                       "lr": config.baseline.logreg_lr, "l2": config.baseline.logreg_l2},
            "wall_time": time.time() - start,
        }
    )
    return result
