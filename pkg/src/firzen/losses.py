"""Training objectives: adversarial graph reconstruction, InfoNCE, TransR and BPR."""

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

logger = logging.getLogger(__name__)


def cosine_matrix(a, b, eps=0.0):
    """Pairwise cosine; rows with zero norm give 0."""
    na = a.norm(dim=1, keepdim=True)
    nb = b.norm(dim=1, keepdim=True)
    an = torch.where(na > eps, a / na.clamp_min(1e-30), torch.zeros_like(a))
    bn = torch.where(nb > eps, b / nb.clamp_min(1e-30), torch.zeros_like(b))
    return an @ bn.T


def virtual_interaction_graph(user_mod, item_mod, user_rows, item_cols):
    """Cosine between modality-aware user and item embeddings on a sub-block."""
    return cosine_matrix(user_mod[user_rows], item_mod[item_cols])


def sample_gumbel(shape, generator=None, dtype=torch.float32):
    uni = torch.rand(shape, generator=generator, dtype=dtype)
    bad = (uni <= 0) | (uni >= 1)
    while bad.any():
        uni[bad] = torch.rand(int(bad.sum()), generator=generator, dtype=dtype)
        bad = (uni <= 0) | (uni >= 1)
    return -torch.log(-torch.log(uni))


def augment_objective_graph(inter_block, user_final, item_final, tau, gamma, generator=None,
                            gumbel=None):
    """Gumbel-softmax relaxation of observed interactions plus ``gamma`` times
    the cosine between final user and item embeddings.

    The result is a target for the discriminator, so it carries no gradient.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    with torch.no_grad():
        g = sample_gumbel(inter_block.shape, generator, inter_block.dtype) if gumbel is None else gumbel
        soft = torch.softmax((inter_block + g) / tau, dim=1)
        if gamma:
            soft = soft + gamma * cosine_matrix(user_final, item_final)
    return soft


class Discriminator(nn.Module):
    """``sigmoid(Dropout(BatchNorm(LeakyReLU(Linear(x)))))`` scoring one row per user."""

    def __init__(self, in_dim, dropout=0.1, slope=0.01):
        super().__init__()
        self.in_dim = in_dim
        self.linear = nn.Linear(in_dim, 1)
        self.bn = nn.BatchNorm1d(1)
        self.drop = nn.Dropout(dropout)
        self.slope = slope

    def logits(self, x):
        if x.shape[-1] != self.in_dim:
            raise ConfigError(f"discriminator expects {self.in_dim} columns, got {x.shape[-1]}")
        h = F.leaky_relu(self.linear(x), self.slope)
        return self.drop(self.bn(h))

    def forward(self, x):
        return torch.sigmoid(self.logits(x)).squeeze(-1)


def gradient_penalty(critic, real, fake, eps):
    """``mean((||d critic / d x*|| - 1)^2)`` at ``x* = eps*real + (1-eps)*fake``.

    ``eps`` has one value per row. Rows whose gradient norm is not finite are
    dropped from the mean.
    """
    mixed = (eps[:, None] * real + (1 - eps[:, None]) * fake).detach().requires_grad_(True)
    out = critic(mixed)
    (grad,) = torch.autograd.grad(out.sum(), mixed, create_graph=True)
    norm = grad.norm(dim=1)
    ok = torch.isfinite(norm)
    if not ok.all():
        logger.warning("gradient penalty: %d rows with non-finite gradient skipped", int((~ok).sum()))
        if not ok.any():
            return norm.new_zeros(())
    return ((norm[ok] - 1.0) ** 2).mean()


@dataclass
class AdversarialTerms:
    value: torch.Tensor  # E[D(aug)] - E[D(virtual)] + xi * penalty
    critic_loss: torch.Tensor  # minimised by the discriminator
    generator_loss: torch.Tensor  # minimised by the modality projections
    real_score: torch.Tensor
    fake_score: torch.Tensor


def adversarial_loss(critic, augmented, virtual, xi, eps=None, generator=None):
    """Wasserstein critic objective with gradient penalty.

    The critic maximises ``E[D(aug)] - E[D(virtual)] - xi * p``; its loss is
    the negation. The generator side (through ``virtual``) minimises
    ``E[D(aug)] - E[D(virtual)]``, which pushes virtual graphs toward
    higher critic scores.
    """
    if augmented.shape != virtual.shape:
        raise ValueError("augmented and virtual graphs must cover the same block")
    if eps is None:
        eps = torch.rand(augmented.shape[0], generator=generator, dtype=augmented.dtype)
    real = critic(augmented).mean()
    fake_detached = critic(virtual.detach()).mean()
    penalty = gradient_penalty(critic, augmented, virtual.detach(), eps) if xi else real.new_zeros(())
    critic_loss = fake_detached - real + xi * penalty
    fake = critic(virtual).mean() if virtual.requires_grad else fake_detached
    generator_loss = real.detach() - fake
    value = (real - fake_detached + xi * penalty).detach()
    return AdversarialTerms(value, critic_loss, generator_loss, real.detach(), fake_detached.detach())


def contrastive_loss(final_users, modality_users, temperature=1.0):
    """InfoNCE between final and modality-aware user embeddings.

    ``modality_users`` is a list of ``(B, d)`` tensors (one per modality).
    For anchor ``x_u^m`` the positive is ``e_u``; the denominator sums over
    batch users ``u'`` of ``exp s(e_u', x_u^m) + exp s(x_u'^m, x_u^m)``.
    Summed over modalities and users.
    """
    if final_users.shape[0] == 0:
        raise ValueError("contrastive loss needs a nonempty batch")
    total = final_users.new_zeros(())
    for xm in modality_users:
        s_final = cosine_matrix(xm, final_users) / temperature  # [u, u'] = s(e_u', x_u)
        s_mod = cosine_matrix(xm, xm) / temperature
        log_den = torch.logsumexp(torch.cat([s_final, s_mod], dim=1), dim=1)
        total = total - (s_final.diagonal() - log_den).sum()
    return total


def transr_score(head, rel, tail, w):
    """``-||W_r e_h + e_r - W_r e_t||^2`` row-wise; ``w`` is ``(B, k, k)``."""
    wh = torch.bmm(w, head.unsqueeze(-1)).squeeze(-1)
    wt = torch.bmm(w, tail.unsqueeze(-1)).squeeze(-1)
    return -((wh + rel - wt) ** 2).sum(dim=1)


def kg_triplet_loss(node_emb, rel_emb, rel_transforms, quads):
    """Pairwise TransR ranking loss over ``(h, r, t_pos, t_neg)`` rows."""
    h, r, tp, tn = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    w = rel_transforms[r]
    sp_ = transr_score(node_emb[h], rel_emb[r], node_emb[tp], w)
    sn = transr_score(node_emb[h], rel_emb[r], node_emb[tn], w)
    return -F.logsigmoid(sp_ - sn).sum()


def bpr_loss(pos_scores, neg_scores):
    if pos_scores.shape != neg_scores.shape:
        raise ValueError("positive and negative score lists differ in length")
    return -F.logsigmoid(pos_scores - neg_scores).sum()


def l2_penalty(params):
    return sum((p ** 2).sum() for p in params)


def rec_loss(bpr, adv, contr, reg, lambda_adv, lambda_contr, lambda_reg):
    """``L_BPR + lambda_adv L_adv + lambda_contr L_contr + lambda_reg ||theta||^2``."""
    return bpr + lambda_adv * adv + lambda_contr * contr + lambda_reg * reg
