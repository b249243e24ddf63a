"""Prototype refinement with an episode's unlabeled set.

Three procedures share one aggregation: each prototype becomes the weighted
mean of its support embeddings (weight 1) and of the unlabeled embeddings
(weight = soft assignment, optionally times a soft mask).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from semiproto import kernels
from semiproto.embedding import fan_in_uniform
from semiproto.errors import ConfigurationError
from semiproto.numerics import (
    Tensor,
    affine,
    concat,
    exp,
    log_softmax,
    matmul,
    mean,
    mul,
    pairwise_sqdist,
    reshape,
    sigmoid,
    stop_gradient,
    sum_,
    tanh,
    transpose,
)
from semiproto.protonet import PrototypeSet, one_hot

log = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
MASK_STATS = ("min", "max", "var", "skew", "kurt")


class Variant(str, Enum):
    NONE = "NONE"
    SOFT_KMEANS = "SOFT_KMEANS"
    SOFT_KMEANS_CLUSTER = "SOFT_KMEANS_CLUSTER"
    MASKED_SOFT_KMEANS = "MASKED_SOFT_KMEANS"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise ConfigurationError(f"unknown variant {value!r} (choose from {choices})", key="variant") from None


@dataclass
class MaskMLPParams:
    """Per-prototype MLP mapping the 5 distance statistics to (beta, gamma)."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def hidden(self):
        return self.w1.shape[1]

    def named(self):
        return {"mask.w1": self.w1, "mask.b1": self.b1, "mask.w2": self.w2, "mask.b2": self.b2}


def init_mask_mlp(seed, hidden=20, zero=False):
    rng = np.random.default_rng(seed)
    if zero:
        w1, w2 = np.zeros((5, hidden)), np.zeros((hidden, 2))
    else:
        w1, w2 = fan_in_uniform(rng, 5, (5, hidden)), fan_in_uniform(rng, hidden, (hidden, 2))
    return MaskMLPParams(
        Tensor(w1, requires_grad=True, name="mask.w1"),
        Tensor(np.zeros(hidden), requires_grad=True, name="mask.b1"),
        Tensor(w2, requires_grad=True, name="mask.w2"),
        Tensor(np.zeros(2), requires_grad=True, name="mask.b2"),
    )


def _centers(protos):
    return protos.prototypes if isinstance(protos, PrototypeSet) else protos


def soft_assignments(unlabeled, protos):
    """Softmax over clusters of the negative squared distance, one row per item."""
    centers = _centers(protos)
    if centers.shape[0] < 1:
        raise ConfigurationError("soft_assignments needs at least one cluster")
    if unlabeled.shape[0] == 0:
        return Tensor(np.zeros((0, centers.shape[0])))
    return exp(log_softmax(-pairwise_sqdist(unlabeled, centers), axis=1))


def aggregate(support, labels, unlabeled, weights, n_classes):
    """Weighted mean of support rows (weight z) and unlabeled rows (``weights``)."""
    z = one_hot(labels, n_classes)
    num = matmul(Tensor(z.T), support) + matmul(transpose(weights), unlabeled)
    den = Tensor(z.sum(axis=0)) + sum_(weights, axis=0)
    return num / reshape(den, (n_classes, 1))


def refine_soft_kmeans(support, labels, unlabeled, protos):
    centers = _centers(protos)
    if unlabeled.shape[0] == 0:
        return PrototypeSet(centers)
    n = centers.shape[0]
    zt = soft_assignments(unlabeled, centers)
    return PrototypeSet(aggregate(support, labels, unlabeled, zt, n))


def log_partition(r):
    """A(r) = log(2 pi) / 2 + log(r)."""
    return HALF_LOG_2PI + math.log(r)


def distractor_assignments(unlabeled, protos, log_r):
    """Assignments over N class clusters plus a zero-centred distractor cluster.

    Class clusters have length-scale 1; the distractor's is ``exp(log_r)``.
    Returns an ``M x (N+1)`` tensor whose last column is the distractor.
    """
    centers = _centers(protos)
    n, d = centers.shape
    log_r = reshape(log_r, (1,))
    all_centers = concat([centers, Tensor(np.zeros((1, d)))], axis=0)
    inv_r2 = concat([Tensor(np.ones(n)), exp(log_r * -2.0)])
    a_term = concat([Tensor(np.zeros(n)), log_r]) + HALF_LOG_2PI
    logits = -(pairwise_sqdist(unlabeled, all_centers) * inv_r2) - a_term
    return exp(log_softmax(logits, axis=1))


def refine_with_distractor_cluster(support, labels, unlabeled, protos, log_r):
    centers = _centers(protos)
    n, d = centers.shape
    log_r = log_r if isinstance(log_r, Tensor) else Tensor(np.atleast_1d(float(log_r)))
    scales = concat([Tensor(np.ones(n)), exp(reshape(log_r, (1,)))])
    if unlabeled.shape[0] == 0:
        return PrototypeSet(centers, np.zeros(d), scales)
    zt = distractor_assignments(unlabeled, centers, log_r)
    weights = zt[:, :n]
    return PrototypeSet(aggregate(support, labels, unlabeled, weights, n), np.zeros(d), scales)


def normalized_distances(unlabeled, protos, sqdist=None):
    """Squared distances divided by their per-prototype mean over the unlabeled set.

    A column whose mean is zero (every item sits on the prototype) is set to
    all ones.
    """
    d = pairwise_sqdist(unlabeled, _centers(protos)) if sqdist is None else sqdist
    if d.shape[0] == 0:
        raise ConfigurationError("normalized_distances needs at least one unlabeled item")
    col_mean = mean(d, axis=0)
    degenerate = col_mean.data == 0.0
    if np.any(degenerate):
        log.warning("degenerate normalized distances for prototypes %s", np.flatnonzero(degenerate).tolist())
        fill = Tensor(np.where(degenerate, 1.0, 0.0))
        return d / (col_mean + fill) + fill
    return d / col_mean


def distance_stats(dnorm):
    """[min, max, var, skew, kurt] of each column (population moments, raw kurtosis).

    Accepts a vector (one column) or an ``M x N`` matrix; returns ``5`` or
    ``N x 5`` values. Moments are computed on values only, no gradient.
    """
    arr = dnorm.data if isinstance(dnorm, Tensor) else np.asarray(dnorm, dtype=np.float64)
    if arr.ndim == 1:
        return kernels.column_stats(np.ascontiguousarray(arr[:, None]))[0]
    return kernels.column_stats(np.ascontiguousarray(arr))


def predict_mask_params(stats, mlp):
    """Per-prototype (beta, gamma) from the shared-weight MLP."""
    stats = stats if isinstance(stats, Tensor) else Tensor(stats)
    out = affine(tanh(affine(stats, mlp.w1, mlp.b1)), mlp.w2, mlp.b2)
    return out[:, 0], out[:, 1]


def soft_masks(dnorm, beta, gamma):
    """m = sigmoid(-gamma * (dnorm - beta)), broadcast over unlabeled rows."""
    return sigmoid(-(gamma * (dnorm - beta)))


def masked_refine(support, labels, unlabeled, protos, mlp, frozen_stats=None, return_masks=False):
    """Soft k-means refinement with learned soft masks on unlabeled items.

    ``frozen_stats`` replaces the computed statistics; it exists so tests can
    show that the statistics carry no gradient.
    """
    centers = _centers(protos)
    n = centers.shape[0]
    if unlabeled.shape[0] == 0:
        result = PrototypeSet(centers)
        return (result, Tensor(np.zeros((0, n)))) if return_masks else result
    d = pairwise_sqdist(unlabeled, centers)
    dnorm = normalized_distances(unlabeled, centers, sqdist=d)
    if frozen_stats is None:
        stats = Tensor(distance_stats(stop_gradient(dnorm)))
    else:
        stats = Tensor(np.asarray(frozen_stats, dtype=np.float64))
    beta, gamma = predict_mask_params(stats, mlp)
    masks = soft_masks(dnorm, beta, gamma)
    zt = exp(log_softmax(-d, axis=1))
    refined = PrototypeSet(aggregate(support, labels, unlabeled, mul(zt, masks), n))
    return (refined, masks) if return_masks else refined


def refine(variant, support, labels, unlabeled, protos, log_r=None, mask_mlp=None, num_steps=1):
    """Run ``num_steps`` refinement steps of ``variant``; NONE returns ``protos``."""
    variant = Variant.parse(variant)
    if variant is Variant.NONE:
        return protos
    if num_steps < 1:
        raise ConfigurationError("num_steps must be >= 1 for refinement variants", key="num_steps")
    if unlabeled.shape[0] == 0:
        return protos
    current = protos
    for _ in range(num_steps):
        if variant is Variant.SOFT_KMEANS:
            current = refine_soft_kmeans(support, labels, unlabeled, current)
        elif variant is Variant.SOFT_KMEANS_CLUSTER:
            if log_r is None:
                raise ConfigurationError("SOFT_KMEANS_CLUSTER needs the distractor log length-scale")
            current = refine_with_distractor_cluster(support, labels, unlabeled, current, log_r)
        else:
            if mask_mlp is None:
                raise ConfigurationError("MASKED_SOFT_KMEANS needs mask MLP parameters")
            current = masked_refine(support, labels, unlabeled, current, mask_mlp)
    return current
