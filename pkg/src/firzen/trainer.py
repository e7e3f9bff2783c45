"""Alternating multi-task training loop."""

import copy
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from .container import read_container, write_container
from .errors import CheckpointError, ConfigError, TrainingError
from .evaluation import evaluate_embeddings
from .losses import (adversarial_loss, augment_objective_graph, bpr_loss, contrastive_loss,
                     kg_triplet_loss, l2_penalty, rec_loss, virtual_interaction_graph)
from .model import Ablation, FirzenModel, make_operators
from .sahgl import update_modality_importance

logger = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    lambda_k: float = 0.36
    lambda_m: float = 1.10
    lambda_adv: float = 0.1
    lambda_contr: float = 0.01
    lambda_reg: float = 1e-4
    eta: float = 0.999
    tau: float = 0.2
    gamma: float = 0.1
    xi: float = 10.0
    L: int = 2
    L_ii: int = 1
    L_uu: int = 1
    H: int = 2
    K_item: int = 10
    K_user: int = 10
    d: int = 64
    d_know: int = 64
    batch_size: int = 2048
    epochs: int = 300
    patience: int = 10
    learning_rate: float = 1e-3
    seed: int = 2023
    dropout: float = 0.1
    disc_dropout: float = 0.1
    contr_temperature: float = 1.0
    pool: str = "sum_div_l"
    behavior_norm: str = "one_sided"
    eval_k: int = 20
    max_aborts: int = 5

    def __post_init__(self):
        for name in ("lambda_k", "lambda_m", "lambda_adv", "lambda_contr", "lambda_reg", "gamma", "xi"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("tau", "learning_rate", "contr_temperature"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("L", "L_ii", "L_uu", "H", "K_item", "K_user", "d", "d_know", "batch_size",
                     "epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must be in [0, 1]")
        if self.d % self.H:
            raise ConfigError(f"H={self.H} does not divide d={self.d}")
        if self.pool not in ("sum_div_l", "mean"):
            raise ConfigError("pool must be 'sum_div_l' or 'mean'")
        if self.behavior_norm not in ("one_sided", "symmetric"):
            raise ConfigError("behavior_norm must be 'one_sided' or 'symmetric'")

    @classmethod
    def from_mapping(cls, values):
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown training key {key!r}")
            kwargs[key] = known[key].type(raw)
        return cls(**kwargs)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainBatch:
    bpr_triplets: np.ndarray  # (B, 3) user, positive item, negative item
    kg_quads: np.ndarray  # (B', 4) head, relation, positive tail, negative tail (node space)
    user_rows: np.ndarray  # users whose interaction rows feed the discriminator


@dataclass
class FitResult:
    model: FirzenModel
    history: list
    best_epoch: int
    best_metric: float
    stopped_early: bool


class Trainer:
    """Owns the model, optimisers, RNG streams and frozen-graph operators.

    ``features`` maps modality to an ``(n_items, d_m)`` array. The
    discriminator sees rows of the training interaction matrix restricted to
    warm items, so its input width is the warm-item count.
    """

    def __init__(self, bundle, split, features, config, ablation=None, log=None):
        if len(split.train) == 0:
            raise TrainingError("no training interactions")
        self.bundle, self.split, self.config = bundle, split, config
        self.ablation = ablation or Ablation()
        self.log = log
        torch.manual_seed(config.seed)
        self.rng = np.random.default_rng(config.seed)
        self.gen = torch.Generator().manual_seed(config.seed)

        self.features = {m: torch.as_tensor(np.asarray(features[m].values if hasattr(features[m], "values")
                                                       else features[m], dtype=np.float32))
                         for m in bundle.modalities}
        self.warm_items = np.asarray(split.warm_items, dtype=np.int64)
        ckg = bundle.ckg
        self.model = FirzenModel(
            n_users=bundle.n_users, n_items=bundle.n_items, n_other_entities=ckg.n_other,
            n_relations=ckg.n_relations, feature_dims={m: f.shape[1] for m, f in self.features.items()},
            disc_dim=len(self.warm_items), dim=config.d, know_dim=config.d_know, n_layers=config.L,
            n_ii_layers=config.L_ii, n_uu_layers=config.L_uu, n_heads=config.H,
            lambda_k=config.lambda_k, lambda_m=config.lambda_m, dropout=config.dropout,
            disc_dropout=config.disc_dropout, pool=config.pool, ablation=self.ablation)
        self.train_ops = make_operators(bundle, "train", behavior_norm=config.behavior_norm)
        self.eval_ops = make_operators(bundle, "inference", behavior_norm=config.behavior_norm)

        lr = config.learning_rate
        self.opt_kg = torch.optim.Adam(self.model.kg_parameters(), lr=lr)
        self.opt_rec = torch.optim.Adam(self.model.generator_parameters(), lr=lr)
        self.opt_disc = torch.optim.Adam(self.model.discriminator.parameters(), lr=lr)

        self._prepare_sampling()
        self.aborts = 0
        self.epoch = 0
        self.history = []
        self.best_state = None
        self.best_metric = -math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def _prepare_sampling(self):
        n_items = self.bundle.n_items
        train = np.asarray(self.split.train, dtype=np.int64)
        self.train_pairs = train
        self.train_keys = np.sort(train[:, 0] * n_items + train[:, 1])
        ckg = self.bundle.ckg
        kg = ckg.kg_triples()
        self.kg_triples = kg
        n_nodes = ckg.n_nodes
        self.kg_keys = np.sort((kg[:, 0] * ckg.n_relations + kg[:, 1]) * n_nodes + kg[:, 2])
        types = np.array(ckg.node_types)
        self.type_pools = {t: np.flatnonzero(types == t) for t in set(ckg.node_types)}
        self.node_types = types
        inter = self.bundle.interaction.tocsr()
        self.warm_block = inter[:, self.warm_items].tocsr()

    def _contains(self, keys, query):
        pos = np.searchsorted(keys, query)
        pos = np.minimum(pos, len(keys) - 1)
        return keys[pos] == query

    def sample_negative_items(self, users, max_tries=50):
        n_items = self.bundle.n_items
        neg = self.warm_items[self.rng.integers(len(self.warm_items), size=len(users))]
        for _ in range(max_tries):
            bad = self._contains(self.train_keys, users * n_items + neg)
            if not bad.any():
                break
            neg[bad] = self.warm_items[self.rng.integers(len(self.warm_items), size=int(bad.sum()))]
        return neg

    def sample_kg_quads(self, size, max_tries=20):
        kg = self.kg_triples
        if len(kg) == 0 or size == 0:
            return np.zeros((0, 4), dtype=np.int64)
        pick = kg[self.rng.integers(len(kg), size=size)]
        ckg = self.bundle.ckg
        neg = np.empty(size, dtype=np.int64)
        tail_types = self.node_types[pick[:, 2]]
        for t in np.unique(tail_types):
            rows = np.flatnonzero(tail_types == t)
            pool = self.type_pools[t]
            neg[rows] = pool[self.rng.integers(len(pool), size=len(rows))]
        for _ in range(max_tries):
            keys = (pick[:, 0] * ckg.n_relations + pick[:, 1]) * ckg.n_nodes + neg
            bad = self._contains(self.kg_keys, keys)
            if not bad.any():
                break
            for r in np.flatnonzero(bad):
                pool = self.type_pools[tail_types[r]]
                neg[r] = pool[self.rng.integers(len(pool))]
        return np.column_stack([pick, neg])

    def make_batch(self, rows):
        pairs = self.train_pairs[rows]
        users = pairs[:, 0]
        neg = self.sample_negative_items(users)
        quads = self.sample_kg_quads(len(rows)) if self.ablation.ka else np.zeros((0, 4), np.int64)
        return TrainBatch(np.column_stack([pairs, neg]), quads, np.unique(users))

    def train_step(self, batch):
        cfg, model = self.config, self.model
        model.train()
        record = {}

        if self.ablation.ka and len(batch.kg_quads):
            quads = torch.from_numpy(batch.kg_quads)
            loss_kg = kg_triplet_loss(model.node_embeddings(), model.relation_emb,
                                      model.relation_transforms, quads)
            if not torch.isfinite(loss_kg):
                return self._abort("kg", record)
            self.opt_kg.zero_grad()
            loss_kg.backward()
            self.opt_kg.step()
            record["kg"] = loss_kg.item()

        out = model(self.train_ops, self.features)
        trip = torch.from_numpy(batch.bpr_triplets)
        u, ip, ineg = trip[:, 0], trip[:, 1], trip[:, 2]
        pos = (out.user_final[u] * out.item_final[ip]).sum(dim=1)
        neg = (out.user_final[u] * out.item_final[ineg]).sum(dim=1)
        loss_bpr = bpr_loss(pos, neg)

        rows = torch.from_numpy(batch.user_rows)
        cols = torch.from_numpy(self.warm_items)
        modal = [m for m in model.modalities if m in out.user_modal]
        gen_adv = out.user_final.new_zeros(())
        critic_loss = None
        fake_scores = {}
        adv_value = 0.0
        if modal and (cfg.lambda_adv > 0):
            block = torch.from_numpy(self.warm_block[batch.user_rows].toarray().astype(np.float32))
            for m in modal:
                virtual = virtual_interaction_graph(out.user_modal[m], out.item_modal[m], rows, cols)
                aug = augment_objective_graph(block, out.user_final[rows], out.item_final[cols],
                                              cfg.tau, cfg.gamma, generator=self.gen)
                terms = adversarial_loss(model.discriminator, aug, virtual, cfg.xi, generator=self.gen)
                gen_adv = gen_adv + terms.generator_loss
                critic_loss = terms.critic_loss if critic_loss is None else critic_loss + terms.critic_loss
                fake_scores[m] = float(terms.fake_score)
                adv_value += float(terms.value)
        loss_contr = out.user_final.new_zeros(())
        if modal and cfg.lambda_contr > 0:
            loss_contr = contrastive_loss(out.user_final[rows], [out.user_modal[m][rows] for m in modal],
                                          cfg.contr_temperature)
        reg = l2_penalty(model.generator_parameters()) if cfg.lambda_reg > 0 else out.user_final.new_zeros(())
        loss = rec_loss(loss_bpr, gen_adv, loss_contr, reg, cfg.lambda_adv, cfg.lambda_contr, cfg.lambda_reg)
        if not torch.isfinite(loss):
            return self._abort("rec", record)
        self.opt_rec.zero_grad()
        loss.backward()
        self.opt_rec.step()
        record.update(bpr=loss_bpr.item(), adv=adv_value, contr=loss_contr.item(), reg=reg.item(),
                      rec=loss.item())

        if critic_loss is not None:
            if not torch.isfinite(critic_loss):
                return self._abort("critic", record)
            self.opt_disc.zero_grad()
            critic_loss.backward()
            self.opt_disc.step()
            record["critic"] = critic_loss.item()

        if "text" in fake_scores and "image" in fake_scores:
            bt, bi = update_modality_importance((float(model.beta[0]), float(model.beta[1])),
                                                fake_scores["text"], fake_scores["image"], cfg.eta)
            model.beta.copy_(torch.tensor([bt, bi], dtype=model.beta.dtype))
        record["beta_text"] = float(model.beta[0])
        record["beta_image"] = float(model.beta[1])
        return record

    def _abort(self, stage, record):
        self.aborts += 1
        logger.warning("non-finite %s loss; step aborted (%d so far)", stage, self.aborts)
        if self.aborts >= self.config.max_aborts:
            raise TrainingError(f"training diverged: {self.aborts} aborted steps")
        record["aborted"] = stage
        return record

    @torch.no_grad()
    def embeddings(self, ops=None):
        self.model.eval()
        out = self.model(ops or self.eval_ops, self.features)
        return out.user_final.numpy(), out.item_final.numpy()

    def validate(self):
        users, items = self.embeddings()
        rep = evaluate_embeddings(users, items, self.split, "warm", self.config.eval_k, stage="val")
        return rep.recall

    def run_epoch(self):
        n = len(self.train_pairs)
        perm = self.rng.permutation(n)
        bs = self.config.batch_size
        records = []
        for lo in range(0, n, bs):
            records.append(self.train_step(self.make_batch(perm[lo:lo + bs])))
        keys = sorted({k for r in records for k in r if k != "aborted"})
        return {k: float(np.mean([r[k] for r in records if k in r])) for k in keys}

    def fit(self, epochs=None, on_epoch=None):
        """Train until ``epochs`` (default config) or early stopping.

        Selection metric is warm validation recall at ``eval_k``. The model
        is left holding the best-validation parameters.
        """
        epochs = self.config.epochs if epochs is None else epochs
        stopped = False
        while self.epoch < epochs:
            losses = self.run_epoch()
            self.epoch += 1
            metric = self.validate()
            entry = {"epoch": self.epoch, **losses, f"val_recall@{self.config.eval_k}": metric}
            self.history.append(entry)
            if self.log is not None:
                self.log.write(" ".join(f"{k}={_fmt(v)}" for k, v in entry.items()) + "\n")
                self.log.flush()
            if metric > self.best_metric:
                self.best_metric, self.best_epoch = metric, self.epoch
                self.best_state = copy.deepcopy(self.model.state_dict())
                self.bad_epochs = 0
            else:
                self.bad_epochs += 1
            if on_epoch is not None:
                on_epoch(self)
            if self.bad_epochs >= self.config.patience:
                stopped = True
                break
        if self.best_state is not None:
            self.model.load_state_dict(self.best_state)
        return FitResult(self.model, self.history, self.best_epoch, self.best_metric, stopped)


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def fit(bundle, split, features, config, ablation=None, log=None):
    return Trainer(bundle, split, features, config, ablation, log).fit()


CHECKPOINT_KIND = "ckpt"
CHECKPOINT_VERSION = 1


def _optimizer_blocks(prefix, opt):
    state = opt.state_dict()
    blocks, index = {}, {}
    for pid, entries in state["state"].items():
        index[str(pid)] = sorted(entries)
        for key, value in entries.items():
            blocks[f"{prefix}/{pid}/{key}"] = torch.as_tensor(value).detach().cpu().numpy()
    groups = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()} for g in state["param_groups"]]
    return blocks, {"index": index, "param_groups": groups}


def _optimizer_state(prefix, meta, blocks):
    state = {}
    for pid, keys in meta["index"].items():
        state[int(pid)] = {k: torch.from_numpy(blocks[f"{prefix}/{pid}/{k}"].copy()) for k in keys}
    groups = []
    for g in meta["param_groups"]:
        g = dict(g)
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
        groups.append(g)
    return {"state": state, "param_groups": groups}


def save_checkpoint(trainer, path, extra_meta=None):
    """Parameters, optimiser moments, RNG streams and loop counters in one container."""
    blocks = {f"model/{k}": v.detach().cpu().numpy() for k, v in trainer.model.state_dict().items()}
    if trainer.best_state is not None:
        blocks.update({f"best/{k}": v.detach().cpu().numpy() for k, v in trainer.best_state.items()})
    opt_meta = {}
    for name, opt in (("kg", trainer.opt_kg), ("rec", trainer.opt_rec), ("disc", trainer.opt_disc)):
        b, m = _optimizer_blocks(f"opt/{name}", opt)
        blocks.update(b)
        opt_meta[name] = m
    blocks["rng/torch_global"] = torch.get_rng_state().numpy()
    blocks["rng/torch_generator"] = trainer.gen.get_state().numpy()
    meta = {
        "config": trainer.config.to_dict(),
        "ablation": asdict(trainer.ablation),
        "n_users": trainer.bundle.n_users,
        "n_items": trainer.bundle.n_items,
        "feature_dims": {m: int(f.shape[1]) for m, f in trainer.features.items()},
        "numpy_rng": trainer.rng.bit_generator.state,
        "optimizers": opt_meta,
        "epoch": trainer.epoch,
        "best_epoch": trainer.best_epoch,
        "best_metric": trainer.best_metric if math.isfinite(trainer.best_metric) else None,
        "bad_epochs": trainer.bad_epochs,
        "aborts": trainer.aborts,
        "history": trainer.history,
        **(extra_meta or {}),
    }
    write_container(path, CHECKPOINT_KIND, CHECKPOINT_VERSION, meta, blocks)


def read_checkpoint(path):
    _, meta, blocks = read_container(path, CHECKPOINT_KIND, (CHECKPOINT_VERSION,))
    return meta, blocks


def _state(blocks, prefix):
    n = len(prefix) + 1
    return {k[n:]: torch.from_numpy(v.copy()) for k, v in blocks.items() if k.startswith(prefix + "/")}


def restore_checkpoint(trainer, path, params_only=False):
    """Load a checkpoint into ``trainer``; rejects shape mismatches before touching state."""
    meta, blocks = read_checkpoint(path)
    if (meta["n_users"], meta["n_items"]) != (trainer.bundle.n_users, trainer.bundle.n_items):
        raise CheckpointError(f"checkpoint is for {meta['n_users']} users / {meta['n_items']} items, "
                              f"artifacts have {trainer.bundle.n_users} / {trainer.bundle.n_items}")
    params = _state(blocks, "model")
    current = trainer.model.state_dict()
    if set(params) != set(current):
        raise CheckpointError("checkpoint parameter names do not match the model")
    for k, v in params.items():
        if tuple(v.shape) != tuple(current[k].shape):
            raise CheckpointError(f"parameter {k}: checkpoint shape {tuple(v.shape)}, "
                                  f"model shape {tuple(current[k].shape)}")
    trainer.model.load_state_dict(params)
    if params_only:
        return meta
    best = _state(blocks, "best")
    trainer.best_state = best or None
    for name, opt in (("kg", trainer.opt_kg), ("rec", trainer.opt_rec), ("disc", trainer.opt_disc)):
        opt.load_state_dict(_optimizer_state(f"opt/{name}", meta["optimizers"][name], blocks))
    torch.set_rng_state(torch.from_numpy(blocks["rng/torch_global"].copy()))
    trainer.gen.set_state(torch.from_numpy(blocks["rng/torch_generator"].copy()))
    trainer.rng.bit_generator.state = meta["numpy_rng"]
    trainer.epoch = meta["epoch"]
    trainer.best_epoch = meta["best_epoch"]
    trainer.best_metric = -math.inf if meta["best_metric"] is None else meta["best_metric"]
    trainer.bad_epochs = meta["bad_epochs"]
    trainer.aborts = meta["aborts"]
    trainer.history = list(meta["history"])
    return meta
