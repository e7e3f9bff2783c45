import math

import pytest
import torch
from hypothesis import given, strategies as st

import oracles
from firzen.errors import ConfigError
from firzen.losses import (Discriminator, adversarial_loss, augment_objective_graph, bpr_loss, contrastive_loss,
                           cosine_matrix, gradient_penalty, kg_triplet_loss, l2_penalty, rec_loss, sample_gumbel,
                           transr_score, virtual_interaction_graph)

D64 = torch.float64


# virtual graph

def test_cosine_graph_examples():
    u = torch.tensor([[1.0, 2.0], [1.0, 0.0]], dtype=D64)
    i = torch.tensor([[1.0, 2.0], [0.0, 3.0]], dtype=D64)
    g = virtual_interaction_graph(u, i, torch.tensor([0, 1]), torch.tensor([0, 1]))
    assert g[0, 0].item() == pytest.approx(1.0, abs=1e-15)
    assert g[1, 1].item() == 0.0


def test_cosine_graph_three_by_three_oracle():
    g = torch.Generator().manual_seed(0)
    u, i = torch.randn(3, 4, generator=g, dtype=D64), torch.randn(3, 4, generator=g, dtype=D64)
    got = cosine_matrix(u, i)
    for a in range(3):
        for b in range(3):
            assert got[a, b].item() == pytest.approx(oracles.cosine(u[a].tolist(), i[b].tolist()), abs=1e-14)


def test_cosine_zero_rows():
    assert (cosine_matrix(torch.zeros(2, 3), torch.ones(2, 3)) == 0).all()


# augmented graph

def test_gumbel_rows_sum_to_one_without_cosine_term():
    g = torch.Generator().manual_seed(1)
    block = (torch.rand(16, 30, generator=g) < 0.2).float()
    aug = augment_objective_graph(block, torch.randn(16, 8), torch.randn(30, 8), 0.2, 0.0, generator=g)
    assert torch.allclose(aug.sum(1), torch.ones(16), atol=1e-6, rtol=0)


def test_large_temperature_approaches_uniform():
    block = torch.tensor([[1.0, 0.0, 0.0, 1.0]])
    aug = augment_objective_graph(block, torch.zeros(1, 2), torch.zeros(4, 2), 1e6, 0.0,
                                  gumbel=torch.zeros(1, 4))
    assert torch.allclose(aug, torch.full((1, 4), 0.25), atol=1e-6)


def test_seeded_two_by_two_step_by_step():
    block = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=D64)
    users = torch.tensor([[1.0, 0.5], [0.2, -1.0]], dtype=D64)
    items = torch.tensor([[0.3, 0.3], [-1.0, 2.0]], dtype=D64)
    tau, gamma = 0.2, 0.1
    got = augment_objective_graph(block, users, items, tau, gamma, generator=torch.Generator().manual_seed(9))
    uni = torch.rand((2, 2), generator=torch.Generator().manual_seed(9), dtype=D64).tolist()
    for r in range(2):
        gumbel = [-math.log(-math.log(uni[r][c])) for c in range(2)]
        soft = oracles.softmax([(block[r, c].item() + gumbel[c]) / tau for c in range(2)])
        for c in range(2):
            want = soft[c] + gamma * oracles.cosine(users[r].tolist(), items[c].tolist())
            assert got[r, c].item() == pytest.approx(want, abs=1e-12)


def test_augmented_graph_carries_no_gradient():
    u = torch.randn(2, 3, requires_grad=True)
    aug = augment_objective_graph(torch.ones(2, 2), u, torch.randn(2, 3), 0.5, 0.1)
    assert not aug.requires_grad


def test_gumbel_finite():
    assert torch.isfinite(sample_gumbel((200, 200), torch.Generator().manual_seed(0))).all()


# discriminator

def test_zero_discriminator_scores_half():
    d = Discriminator(5).eval()
    torch.nn.init.zeros_(d.linear.weight)
    torch.nn.init.zeros_(d.linear.bias)
    assert torch.equal(d(torch.randn(7, 5)), torch.full((7,), 0.5))


@given(st.integers(0, 10_000))
def test_scores_in_open_unit_interval(seed):
    g = torch.Generator().manual_seed(seed)
    d = Discriminator(6).eval()
    scores = d(torch.randn(9, 6, generator=g, dtype=torch.float32) * 3)
    assert ((scores > 0) & (scores < 1)).all()


def test_discriminator_composed_oracle():
    d = Discriminator(3, dropout=0.0).double().eval()
    with torch.no_grad():
        d.linear.weight.copy_(torch.tensor([[0.1, -0.2, 0.3]], dtype=D64))
        d.linear.bias.fill_(0.05)
    x = [0.5, 1.5, -2.0]
    z = 0.1 * 0.5 - 0.2 * 1.5 + 0.3 * -2.0 + 0.05
    z = z if z > 0 else 0.01 * z
    z = z / math.sqrt(1.0 + d.bn.eps)
    want = 1 / (1 + math.exp(-z))
    assert d(torch.tensor([x], dtype=D64)).item() == pytest.approx(want, abs=1e-15)


def test_discriminator_width_checked():
    with pytest.raises(ConfigError):
        Discriminator(4)(torch.zeros(2, 3))


# adversarial objective

def test_identical_graphs_no_penalty_gives_zero():
    d = Discriminator(4, dropout=0.0).double()
    g = torch.rand(6, 4, dtype=D64)
    terms = adversarial_loss(d, g, g.clone(), xi=0.0, eps=torch.rand(6, dtype=D64))
    assert terms.value.item() == pytest.approx(0.0, abs=1e-15)


def test_unit_gradient_critic_has_zero_penalty():
    w = torch.tensor([0.6, 0.8], dtype=D64)

    def critic(x):
        return x @ w

    p = gradient_penalty(critic, torch.rand(5, 2, dtype=D64), torch.rand(5, 2, dtype=D64), torch.rand(5, dtype=D64))
    assert p.item() == pytest.approx(0.0, abs=1e-15)


def test_penalty_matches_finite_difference_norm():
    torch.manual_seed(0)
    d = Discriminator(3, dropout=0.0).double().eval()
    real, fake = torch.rand(4, 3, dtype=D64), torch.rand(4, 3, dtype=D64)
    eps = torch.rand(4, dtype=D64)
    got = gradient_penalty(d, real, fake, eps).item()
    mixed = eps[:, None] * real + (1 - eps[:, None]) * fake
    h = 1e-6
    total = 0.0
    for r in range(4):
        grad = []
        for c in range(3):
            up, down = mixed.clone(), mixed.clone()
            up[r, c] += h
            down[r, c] -= h
            grad.append((d(up).sum() - d(down).sum()).item() / (2 * h))
        total += (math.sqrt(sum(x * x for x in grad)) - 1) ** 2
    assert got == pytest.approx(total / 4, rel=1e-6)


def test_adversarial_term_signs():
    torch.manual_seed(1)
    d = Discriminator(4, dropout=0.0).double().eval()
    aug, virtual = torch.rand(8, 4, dtype=D64), torch.rand(8, 4, dtype=D64, requires_grad=True)
    eps = torch.rand(8, dtype=D64)
    terms = adversarial_loss(d, aug, virtual, xi=10.0, eps=eps)
    real, fake = d(aug).mean(), d(virtual).mean()
    pen = gradient_penalty(d, aug, virtual.detach(), eps)
    assert terms.critic_loss.item() == pytest.approx((fake - real + 10.0 * pen).item(), abs=1e-14)
    assert terms.generator_loss.item() == pytest.approx((real - fake).item(), abs=1e-14)
    assert terms.value.item() == pytest.approx((real - fake + 10.0 * pen).item(), abs=1e-14)
    # generator gradient flows only through the virtual graph, critic gradient never reaches it
    terms.generator_loss.backward()
    assert virtual.grad is not None and virtual.grad.abs().sum() > 0


# contrastive

def test_batch_of_one():
    e = torch.tensor([[1.0, 2.0, 0.5]], dtype=D64)
    x = torch.tensor([[0.3, -1.0, 2.0]], dtype=D64)
    s = oracles.cosine(e[0].tolist(), x[0].tolist())
    want = -math.log(math.exp(s) / (math.exp(s) + math.e))
    assert contrastive_loss(e, [x]).item() == pytest.approx(want, abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_contrastive_nonnegative_and_scale_invariant(seed, batch):
    g = torch.Generator().manual_seed(seed)
    e = torch.randn(batch, 4, generator=g, dtype=D64)
    xs = [torch.randn(batch, 4, generator=g, dtype=D64) for _ in range(2)]
    loss = contrastive_loss(e, xs)
    assert loss.item() >= 0
    assert contrastive_loss(2 * e, [2 * x for x in xs]).item() == pytest.approx(loss.item(), rel=1e-12)


def test_contrastive_multi_user_oracle():
    g = torch.Generator().manual_seed(3)
    e = torch.randn(3, 4, generator=g, dtype=D64)
    x = torch.randn(3, 4, generator=g, dtype=D64)
    total = 0.0
    for u in range(3):
        num = math.exp(oracles.cosine(e[u].tolist(), x[u].tolist()))
        den = sum(math.exp(oracles.cosine(e[v].tolist(), x[u].tolist())) +
                  math.exp(oracles.cosine(x[v].tolist(), x[u].tolist())) for v in range(3))
        total -= math.log(num / den)
    assert contrastive_loss(e, [x]).item() == pytest.approx(total, abs=1e-12)


# TransR, BPR, combined

def test_transr_exact_translation_scores_zero():
    w = torch.eye(3, dtype=D64)[None]
    h = torch.tensor([[1.0, 2.0, 3.0]], dtype=D64)
    r = torch.tensor([[0.5, -1.0, 0.0]], dtype=D64)
    assert transr_score(h, r, h + r, w).item() == 0.0


def test_transr_random_quad_oracle():
    g = torch.Generator().manual_seed(0)
    h, r, t = (torch.randn(1, 4, generator=g, dtype=D64) for _ in range(3))
    w = torch.randn(1, 4, 4, generator=g, dtype=D64)
    wl = w[0].tolist()
    proj = [sum(wl[a][b] * (h[0, b].item() - t[0, b].item()) for b in range(4)) + r[0, a].item() for a in range(4)]
    assert transr_score(h, r, t, w).item() == pytest.approx(-sum(v * v for v in proj), abs=1e-12)


def test_kg_loss_fixed_point_is_ln2():
    g = torch.Generator().manual_seed(0)
    nodes = torch.randn(5, 3, generator=g, dtype=D64)
    quads = torch.tensor([[0, 0, 1, 1], [2, 1, 3, 3], [4, 0, 2, 2]])
    loss = kg_triplet_loss(nodes, torch.randn(2, 3, dtype=D64), torch.randn(2, 3, 3, dtype=D64), quads)
    assert abs(loss.item() / 3 - math.log(2)) <= 1e-9


def test_bpr_examples():
    assert abs(bpr_loss(torch.tensor([0.7], dtype=D64), torch.tensor([0.7], dtype=D64)).item() - math.log(2)) <= 1e-9
    assert bpr_loss(torch.tensor([2.0], dtype=D64), torch.tensor([-1.0], dtype=D64)).item() == \
        pytest.approx(-math.log(1 / (1 + math.exp(-3))), abs=1e-15)
    assert bpr_loss(torch.tensor([60.0], dtype=D64), torch.tensor([-60.0], dtype=D64)).item() < 1e-40
    with pytest.raises(ValueError):
        bpr_loss(torch.zeros(2), torch.zeros(3))


def test_rec_loss_combinations():
    parts = [torch.tensor(v, dtype=D64) for v in (1.5, -0.3, 2.0, 4.0)]
    assert rec_loss(*parts, 0.0, 0.0, 0.0).item() == 1.5
    assert rec_loss(*parts, 0.1, 0.01, 1e-4).item() == pytest.approx(1.5 - 0.03 + 0.02 + 4e-4, abs=1e-15)
    assert l2_penalty([torch.zeros(3, 3), torch.zeros(2)]).item() == 0.0


@given(st.integers(0, 10_000))
def test_losses_nonnegative_and_finite(seed):
    g = torch.Generator().manual_seed(seed)
    nodes = torch.randn(6, 3, generator=g, dtype=D64)
    quads = torch.randint(0, 6, (5, 4), generator=g)
    quads[:, 1] = quads[:, 1] % 2
    kg = kg_triplet_loss(nodes, torch.randn(2, 3, generator=g, dtype=D64),
                         torch.randn(2, 3, 3, generator=g, dtype=D64), quads)
    bpr = bpr_loss(torch.randn(5, generator=g, dtype=D64), torch.randn(5, generator=g, dtype=D64))
    for v in (kg, bpr):
        assert torch.isfinite(v) and v.item() >= 0
