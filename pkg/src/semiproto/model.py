"""Model parameters and the per-episode forward pass."""
from dataclasses import dataclass

import numpy as np

from semiproto.embedding import EmbeddingParams, embed, init_embedding
from semiproto.numerics import Tensor
from semiproto.protonet import class_log_probs, compute_prototypes, episode_loss
from semiproto.refinement import MaskMLPParams, Variant, init_mask_mlp, refine


@dataclass
class ModelParams:
    embedding: EmbeddingParams
    log_r: Tensor = None
    mask_mlp: MaskMLPParams = None

    def named(self):
        out = dict(self.embedding.tensors)
        if self.log_r is not None:
            out["distractor.log_r"] = self.log_r
        if self.mask_mlp is not None:
            out.update(self.mask_mlp.named())
        return out

    def parameters(self):
        return list(self.named().values())

    def copy(self):
        arrays = {k: v.data.copy() for k, v in self.named().items()}
        return params_from_arrays(self.embedding.config, arrays, self.embedding.init_seed)


def init_model(embedding_config, variant, seed, mask_hidden=20):
    """Embedding plus whatever extra parameters ``variant`` learns."""
    variant = Variant.parse(variant)
    ss = np.random.SeedSequence(seed)
    emb_seed, mask_seed = ss.spawn(2)
    emb = init_embedding(embedding_config, int(emb_seed.generate_state(1)[0]))
    emb.init_seed = seed
    log_r = mask = None
    if variant is Variant.SOFT_KMEANS_CLUSTER:
        log_r = Tensor(np.zeros(1), requires_grad=True, name="distractor.log_r")
    elif variant is Variant.MASKED_SOFT_KMEANS:
        mask = init_mask_mlp(int(mask_seed.generate_state(1)[0]), hidden=mask_hidden)
    return ModelParams(emb, log_r, mask)


def params_from_arrays(embedding_config, arrays, init_seed=0):
    def t(name):
        return Tensor(np.array(arrays[name], dtype=np.float64), requires_grad=True, name=name)

    emb = EmbeddingParams(
        embedding_config, {k: t(k) for k in arrays if k.startswith("embed.")}, init_seed
    )
    log_r = t("distractor.log_r") if "distractor.log_r" in arrays else None
    mask = None
    if "mask.w1" in arrays:
        mask = MaskMLPParams(t("mask.w1"), t("mask.b1"), t("mask.w2"), t("mask.b2"))
    return ModelParams(emb, log_r, mask)


def episode_forward(model, episode, variant, num_steps=1):
    """Embed every episode input in one batch, refine and score the queries.

    Returns ``(loss, log_probs, prototypes)``.
    """
    ns, nu = len(episode.support_y), len(episode.unlabeled_x)
    inputs = np.concatenate([episode.support_x, episode.unlabeled_x, episode.query_x], axis=0)
    h = embed(model.embedding, Tensor(inputs.reshape(len(inputs), -1)))
    h_support, h_unlabeled, h_query = h[:ns], h[ns : ns + nu], h[ns + nu :]
    protos = compute_prototypes(h_support, episode.support_y, episode.n_way)
    protos = refine(
        variant,
        h_support,
        episode.support_y,
        h_unlabeled,
        protos,
        log_r=model.log_r,
        mask_mlp=model.mask_mlp,
        num_steps=num_steps,
    )
    log_probs = class_log_probs(h_query, protos)
    return episode_loss(log_probs, episode.query_y), log_probs, protos

