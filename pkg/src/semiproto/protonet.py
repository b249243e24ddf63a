"""Plain Prototypical Network math: prototypes, class posteriors, loss.

Class labels are 0-based indices into the episode's N classes.
"""
from dataclasses import dataclass

import numpy as np

from semiproto.errors import ConfigurationError, ContractError
from semiproto.numerics import Tensor, log_softmax, matmul, mul, pairwise_sqdist, sum_


@dataclass
class PrototypeSet:
    """Class prototypes, optionally with the distractor cluster and length-scales."""

    prototypes: Tensor
    distractor: np.ndarray = None
    length_scales: Tensor = None

    @property
    def num_classes(self):
        return self.prototypes.shape[0]


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"labels must lie in [0, {n_classes})")
    z = np.zeros((labels.size, n_classes))
    z[np.arange(labels.size), labels] = 1.0
    return z


def compute_prototypes(embeddings, labels, n_classes=None):
    """Per-class mean of the support embeddings."""
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    z = one_hot(labels, n_classes)
    counts = z.sum(axis=0)
    if n_classes == 0 or np.any(counts == 0):
        empty = [c for c in range(n_classes) if counts[c] == 0]
        raise ContractError(f"classes without support examples: {empty}")
    sums = matmul(Tensor(z.T), embeddings)
    return PrototypeSet(sums / Tensor(counts[:, None]))


def _protos(protos):
    return protos.prototypes if isinstance(protos, PrototypeSet) else protos


def class_log_probs(query, protos):
    """log p(c | x*) over the N real classes, from negative squared distances."""
    p = _protos(protos)
    if p.shape[0] == 0:
        raise ContractError("class_log_probs needs at least one class")
    if query.shape[1] != p.shape[1]:
        raise ConfigurationError(f"query dim {query.shape[1]} != prototype dim {p.shape[1]}")
    return log_softmax(-pairwise_sqdist(query, p), axis=1)


def episode_loss(log_probs, labels):
    """Mean negative log-probability of the correct class."""
    z = one_hot(labels, log_probs.shape[1])
    if z.shape[0] != log_probs.shape[0]:
        raise ConfigurationError("episode_loss: one label per query row required")
    picked = sum_(mul(log_probs, Tensor(z)))
    return picked * (-1.0 / z.shape[0])


def predict(log_probs):
    """Most likely class per row; ties go to the lowest index."""
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return np.argmax(data, axis=1)


def accuracy(log_probs, labels):
    return float(np.mean(predict(log_probs) == np.asarray(labels)))
