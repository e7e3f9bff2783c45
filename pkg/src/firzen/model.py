"""The full model: trainable tables plus the frozen-graph forward pass."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn as nn

from .errors import ConfigError
from .losses import Discriminator
from .mshgl import item_item_propagate, modality_self_attention, user_user_operator, user_user_propagate
from .sahgl import (behavior_conv, bi_interaction, fuse_representations, knowledge_attention,
                    modality_conv, propagation_operators, to_torch_sparse)


@dataclass
class Ablation:
    ba: bool = True
    ka: bool = True
    ma_text: bool = True
    ma_image: bool = True
    ms: bool = True

    def __post_init__(self):
        if not (self.ba or self.ka or self.ma_text or self.ma_image):
            raise ConfigError("at least one of BA, KA, MA must stay enabled")

    def modality_enabled(self, m):
        return {"text": self.ma_text, "image": self.ma_image}.get(m, True)

    @classmethod
    def from_names(cls, names):
        """``names`` lists components to disable, e.g. ``["ka", "ms"]``."""
        flags = {}
        for name in names:
            name = name.strip().lower()
            if not name:
                continue
            if name not in cls.__dataclass_fields__:
                raise ConfigError(f"unknown ablation {name!r}")
            flags[name] = False
        return cls(**flags)


@dataclass
class GraphOperators:
    """Torch views of one frozen-graph setting (train or inference)."""

    user_from_items: torch.Tensor
    item_from_users: torch.Tensor
    mod_user_from_items: torch.Tensor
    mod_item_from_users: torch.Tensor
    ckg_triples: torch.Tensor
    ckg_slices: list
    item_item: dict
    user_user: torch.Tensor
    user_keep: torch.Tensor = None  # (n_users, 1) 1 where the user has a training edge
    item_keep: torch.Tensor = None
    extra: dict = field(default_factory=dict)


def make_operators(bundle, setting="train", extra_interactions=None, behavior_norm="one_sided",
                   dtype=torch.float32):
    """Operators for ``setting`` in {"train", "inference"}.

    ``extra_interactions`` adds user-item edges (the known half of normal
    cold-start items) to the interaction graph and the collaborative KG.
    """
    inter = bundle.interaction
    ckg = bundle.ckg
    if extra_interactions is not None and len(extra_interactions):
        pairs = np.asarray(extra_interactions, dtype=np.int64).reshape(-1, 2)
        add = type(inter)((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=inter.shape)
        inter = ((inter + add) > 0).astype(np.float64).tocsr()
        ckg = ckg.with_interactions(pairs)
    ui, iu = propagation_operators(inter, behavior_norm, dtype)
    if behavior_norm == "one_sided":
        mui, miu = ui, iu
    else:
        mui, miu = propagation_operators(inter, "one_sided", dtype)
    graphs = bundle.item_item_normalized if setting == "train" else bundle.inference_normalized
    inter = sp.csr_matrix(inter)
    user_keep = torch.from_numpy((np.diff(inter.indptr) > 0).astype(np.float64)).to(dtype)[:, None]
    item_keep = torch.from_numpy((np.bincount(inter.indices, minlength=inter.shape[1]) > 0)
                                 .astype(np.float64)).to(dtype)[:, None]
    return GraphOperators(
        user_from_items=ui, item_from_users=iu, mod_user_from_items=mui, mod_item_from_users=miu,
        ckg_triples=torch.from_numpy(ckg.triples.astype(np.int64)),
        ckg_slices=ckg.relation_slices(),
        item_item={m: to_torch_sparse(g, dtype) for m, g in graphs.items()},
        user_user=user_user_operator(bundle.user_user, dtype),
        user_keep=user_keep, item_keep=item_keep)


@dataclass
class ForwardOutput:
    user_final: torch.Tensor
    item_final: torch.Tensor
    user_fused: torch.Tensor
    item_fused: torch.Tensor
    user_modal: dict
    item_modal: dict
    user_behavior: torch.Tensor = None
    item_behavior: torch.Tensor = None
    user_know: torch.Tensor = None
    item_know: torch.Tensor = None


class FirzenModel(nn.Module):
    """All trainable parameters and the end-to-end forward pass.

    Node space of the collaborative KG is ``[users | items | other entities]``;
    user and item rows of the knowledge branch reuse the ID embeddings.
    """

    def __init__(self, n_users, n_items, n_other_entities, n_relations, feature_dims, disc_dim,
                 dim=64, know_dim=None, n_layers=2, n_ii_layers=1, n_uu_layers=1, n_heads=2,
                 lambda_k=0.36, lambda_m=1.10, dropout=0.1, disc_dropout=0.1, pool="sum_div_l",
                 leaky_slope=0.01, ablation=None):
        super().__init__()
        know_dim = dim if know_dim is None else know_dim
        if dim % n_heads:
            raise ConfigError(f"{n_heads} heads do not divide embedding size {dim}")
        self.n_users, self.n_items = n_users, n_items
        self.dim, self.know_dim = dim, know_dim
        self.n_layers, self.n_ii_layers, self.n_uu_layers = n_layers, n_ii_layers, n_uu_layers
        self.lambda_k, self.lambda_m = lambda_k, lambda_m
        self.pool = pool
        self.leaky_slope = leaky_slope
        self.ablation = ablation or Ablation()
        self.modalities = tuple(feature_dims)

        self.user_emb = nn.Parameter(torch.empty(n_users, dim))
        self.item_emb = nn.Parameter(torch.empty(n_items, dim))
        self.entity_emb = nn.Parameter(torch.empty(n_other_entities, know_dim))
        self.relation_emb = nn.Parameter(torch.empty(n_relations, know_dim))
        self.relation_transforms = nn.Parameter(torch.empty(n_relations, know_dim, know_dim))
        self.agg_w1 = nn.Parameter(torch.empty(know_dim, know_dim))
        self.agg_w2 = nn.Parameter(torch.empty(know_dim, know_dim))
        if know_dim != dim:
            self.know_in = nn.Linear(dim, know_dim, bias=False)
            self.know_out = nn.Linear(know_dim, dim, bias=False)
        else:
            self.know_in = self.know_out = None
        self.projections = nn.ModuleDict({m: nn.Linear(d_m, dim) for m, d_m in feature_dims.items()})
        self.proj_dropout = nn.Dropout(dropout)
        self.attn_query = nn.Parameter(torch.empty(n_heads, dim, dim // n_heads))
        self.attn_key = nn.Parameter(torch.empty(n_heads, dim, dim // n_heads))
        self.discriminator = Discriminator(disc_dim, disc_dropout, leaky_slope)
        self.register_buffer("beta", torch.tensor([0.5, 0.5], dtype=torch.float64))
        self.reset_parameters()

    def reset_parameters(self):
        for p in (self.user_emb, self.item_emb, self.entity_emb, self.relation_emb,
                  self.agg_w1, self.agg_w2):
            if p.numel():
                nn.init.xavier_uniform_(p)
        for r in range(self.relation_transforms.shape[0]):
            nn.init.xavier_uniform_(self.relation_transforms.data[r])
        for h in range(self.attn_query.shape[0]):
            nn.init.xavier_uniform_(self.attn_query.data[h])
            nn.init.xavier_uniform_(self.attn_key.data[h])

    def kg_parameters(self):
        """Parameters touched by the TransR step."""
        params = [self.item_emb, self.entity_emb, self.relation_emb, self.relation_transforms]
        if self.know_in is not None:
            params.append(self.know_in.weight)
        return params

    def generator_parameters(self):
        disc = {id(p) for p in self.discriminator.parameters()}
        return [p for p in self.parameters() if id(p) not in disc]

    def node_embeddings(self):
        users, items = self.user_emb, self.item_emb
        if self.know_in is not None:
            users, items = self.know_in(users), self.know_in(items)
        return torch.cat([users, items, self.entity_emb], dim=0)

    def knowledge_branch(self, ops):
        nodes = self.node_embeddings()
        x_n, _ = knowledge_attention(nodes, self.relation_emb, self.relation_transforms,
                                     ops.ckg_triples, ops.ckg_slices)
        n_ui = self.n_users + self.n_items
        know = bi_interaction(nodes[:n_ui], x_n[:n_ui], self.agg_w1, self.agg_w2, self.leaky_slope)
        if self.know_out is not None:
            know = self.know_out(know)
        return know[:self.n_users], know[self.n_users:]

    def forward(self, ops, features):
        """``features`` maps modality to an ``(n_items, d_m)`` tensor."""
        ab = self.ablation
        ub = ib = uk = ik = None
        if ab.ba:
            ub, ib = behavior_conv(ops.user_from_items, ops.item_from_users, self.user_emb,
                                   self.item_emb, self.n_layers, self.pool, ops.user_keep, ops.item_keep)
        if ab.ka:
            uk, ik = self.knowledge_branch(ops)
        user_modal, item_modal = {}, {}
        for m in self.modalities:
            if not ab.modality_enabled(m):
                continue
            projected = self.proj_dropout(self.projections[m](features[m]))
            user_modal[m], item_modal[m] = modality_conv(ops.mod_user_from_items,
                                                         ops.mod_item_from_users, projected)
        beta = (self.beta[0].item(), self.beta[1].item())
        user_fused = fuse_representations(ub, uk, user_modal.get("text"), user_modal.get("image"),
                                          self.lambda_k, self.lambda_m, beta)
        item_fused = fuse_representations(ib, ik, item_modal.get("text"), item_modal.get("image"),
                                          self.lambda_k, self.lambda_m, beta)
        if ab.ms:
            reps = [item_item_propagate(ops.item_item[m], item_fused, self.n_ii_layers)
                    for m in self.modalities]
            item_final = modality_self_attention(reps, self.attn_query, self.attn_key)
            user_final = user_user_propagate(ops.user_user, user_fused, self.n_uu_layers)
        else:
            item_final, user_final = item_fused, user_fused
        return ForwardOutput(user_final, item_final, user_fused, item_fused, user_modal, item_modal,
                             ub, ib, uk, ik)
