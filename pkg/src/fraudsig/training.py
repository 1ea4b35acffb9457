"""Adversarial posterior sampling over generator and discriminator chains.

Several generator chains and several discriminator chains evolve jointly:
each generator step follows the critic response summed over all
discriminator chains, and each discriminator step sums its loss over fakes
from every generator chain (appearing once per opposing chain).  Chain
parameters visited after burn-in are collected at a fixed thinning stride
into a posterior ensemble; prediction averages the restricted-softmax fraud
probability over ensemble members and reports empirical 5%/95% quantiles,
whose spread is the per-sample uncertainty.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, derive_seed_sequence
from .losses import discriminator_loss, generator_loss_from_scores
from .nnet import (
    DiscriminatorNet,
    GeneratorNet,
    load_params,
    restricted_softmax,
    save_params,
    zeros_like_params,
)
from .sghmc import AdamState, GlorotPrior, adam_sghmc_step, sghmc_step

__all__ = [
    "PreparedData",
    "EnsembleMember",
    "TrainResult",
    "Prediction",
    "DivergedChainError",
    "build_nets",
    "train",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]


class DivergedChainError(RuntimeError):
    """A chain produced a non-finite loss or gradient."""

    def __init__(self, epoch: int, chain: str, trace_tail: list):
        self.epoch = epoch
        self.chain = chain
        self.trace_tail = trace_tail
        super().__init__(
            f"chain {chain} diverged at epoch {epoch}; last trace rows: {trace_tail[-5:]}"
        )


@dataclass
class PreparedData:
    """Training-ready arrays for one experiment cell.

    labels hold the true class for every row (0 legit, 1 fraud); rows outside
    `labeled_idx` are treated as unlabeled during training and their labels
    are only ever used by evaluation code.
    """

    feats: np.ndarray
    codes: np.ndarray
    labels: np.ndarray
    labeled_idx: np.ndarray
    emb_cards: tuple[int, ...]

    def __post_init__(self):
        n = self.feats.shape[0]
        if self.codes.shape[0] != n or self.labels.shape[0] != n:
            raise ValueError("feats, codes and labels must have equal row counts")
        if self.labeled_idx.size == 0:
            raise ValueError("at least one labeled sample is required")


@dataclass
class EnsembleMember:
    chain: int
    epoch: int
    params: list


@dataclass
class TrainResult:
    members: list            # discriminator posterior ensemble
    gen_members: list        # generator posterior ensemble
    disc_chains: list        # final per-chain parameter lists
    gen_chains: list
    trace: list              # rows (epoch, kind, chain, term, value)


@dataclass
class Prediction:
    """Posterior-averaged fraud probabilities with uncertainty intervals."""

    mean: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    width: np.ndarray


def build_nets(feat_dim: int, emb_cards: tuple[int, ...], cfg: TrainConfig):
    gen = GeneratorNet(
        cfg.latent_dim, emb_cards, feat_dim, width=cfg.width, n_residual=cfg.n_residual
    )
    disc = DiscriminatorNet(
        feat_dim,
        emb_cards,
        n_classes=2,
        width=cfg.width,
        n_residual=cfg.n_residual,
        head_widths=cfg.head_widths,
    )
    return gen, disc


class _LabeledCycle:
    """Without-replacement cycling sampler over the labeled indices."""

    def __init__(self, idx: np.ndarray, rng: np.random.Generator):
        self.idx = np.asarray(idx)
        self.rng = rng
        self.perm = self.rng.permutation(self.idx)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        k = min(k, self.idx.size)
        out = []
        while k > 0:
            avail = self.perm.size - self.pos
            if avail == 0:
                self.perm = self.rng.permutation(self.idx)
                self.pos = 0
                continue
            step = min(k, avail)
            out.append(self.perm[self.pos : self.pos + step])
            self.pos += step
            k -= step
        return np.concatenate(out)

    def state(self) -> dict:
        return {"perm": self.perm.tolist(), "pos": self.pos}

    def restore(self, state: dict) -> None:
        self.perm = np.asarray(state["perm"], dtype=self.idx.dtype)
        self.pos = int(state["pos"])


class _Chain:
    """One sampler chain: parameters plus optimizer state and RNG."""

    def __init__(self, params, cfg: TrainConfig, lr: float, rng: np.random.Generator):
        self.params = params
        self.lr = lr
        self.rng = rng
        if cfg.optimizer == "adam":
            self.adam = AdamState.for_params(params)
            self.velocity = None
        else:
            self.adam = None
            self.velocity = zeros_like_params(params)

    def step(self, direction, cfg: TrainConfig) -> None:
        if self.adam is not None:
            self.params, self.adam = adam_sghmc_step(
                self.params, direction, self.adam, self.lr, cfg.friction,
                self.rng, cfg.noise_scale,
            )
        else:
            self.params, self.velocity = sghmc_step(
                self.params, direction, self.velocity, cfg.friction, self.lr,
                self.rng, cfg.noise_scale,
            )


def _check_finite(epoch, chain_name, value, grads, trace):
    if not np.isfinite(value):
        raise DivergedChainError(epoch, chain_name, trace)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergedChainError(epoch, chain_name, trace)


def train(
    data: PreparedData,
    cfg: TrainConfig,
    seed: int,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
    epoch_callback=None,
) -> TrainResult:
    """Run the full adversarial sampling loop for one experiment cell.

    Args:
        data: features, condition codes, labels and the labeled-index set.
        cfg: hyperparameters; `cfg.epochs == 0` returns the prior-initialised
            chains as the ensemble.
        seed: cell seed; all chain and sampling randomness derives from it.
        checkpoint_dir: when set, training state is saved there every
            `cfg.checkpoint_every` epochs (and at the end).
        resume: continue from the checkpoint in `checkpoint_dir`.
        epoch_callback: optional fn(epoch, disc_param_lists, gen_param_lists)
            invoked after every epoch.

    Returns:
        TrainResult with the posterior ensembles and the loss trace.
    """
    cfg.validate()
    gen, disc = build_nets(data.feats.shape[1], data.emb_cards, cfg)
    gen_prior = GlorotPrior.for_specs(gen.param_specs)
    disc_prior = GlorotPrior.for_specs(disc.param_specs)

    data_rng = np.random.Generator(
        np.random.PCG64(derive_seed_sequence(seed, 0))
    )
    gen_chains = [
        _Chain(
            gen.init_params(np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, 1, j)))),
            cfg, cfg.lr_g,
            np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, 3, j))),
        )
        for j in range(cfg.chains_g)
    ]
    disc_chains = [
        _Chain(
            disc.init_params(np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, 2, j)))),
            cfg, cfg.lr_d,
            np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, 4, j))),
        )
        for j in range(cfg.chains_d)
    ]
    cycle = _LabeledCycle(data.labeled_idx, data_rng)
    members: list[EnsembleMember] = []
    gen_members: list[EnsembleMember] = []
    trace: list = []
    start_epoch = 0

    if resume:
        if checkpoint_dir is None:
            raise ValueError("resume requested without a checkpoint directory")
        start_epoch = load_checkpoint(
            checkpoint_dir, gen_chains, disc_chains, cycle, data_rng, members,
            gen_members, trace,
        )

    if cfg.epochs == 0 and not members:
        for j, c in enumerate(disc_chains):
            members.append(EnsembleMember(j, 0, [p.copy() for p in c.params]))
        for j, c in enumerate(gen_chains):
            gen_members.append(EnsembleMember(j, 0, [p.copy() for p in c.params]))

    n_rows = data.feats.shape[0]
    batch = min(cfg.batch, n_rows)
    burn_in = cfg.burn_in_epochs()
    all_idx = np.arange(n_rows)
    # Losses are minibatch means (1/N of the log-likelihood sum), so the
    # prior must enter at the same per-sample weight or it swamps the data.
    prior_w = 1.0 / n_rows

    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        # Generator chains follow the summed critic response.
        for j, chain in enumerate(gen_chains):
            z = chain.rng.standard_normal((batch, cfg.latent_dim))
            cond_rows = chain.rng.choice(all_idx, size=batch, replace=True)
            codes = data.codes[cond_rows]
            fake, gcache = gen.forward(chain.params, z, codes)
            dfeat_total = np.zeros_like(fake)
            loss_j = 0.0
            for dchain in disc_chains:
                scores, dcache = disc.forward(dchain.params, fake, codes)
                val, dscores = generator_loss_from_scores(scores)
                loss_j += val
                _, dfeat = disc.backward(dchain.params, dcache, dscores, need_param_grads=False)
                dfeat_total += dfeat
            grads, _ = gen.backward(chain.params, gcache, dfeat_total)
            prior_g = gen_prior.neg_log_grad(chain.params)
            direction = [-(a + prior_w * b) for a, b in zip(grads, prior_g)]
            _check_finite(epoch, f"gen{j}", loss_j, direction, trace)
            chain.step(direction, cfg)
            trace.append((epoch, "gen", j, "loss", loss_j))

        # Discriminator chains: n_critic steps each, fakes from every
        # generator chain.
        for j, chain in enumerate(disc_chains):
            sums = {"unlabeled": 0.0, "labeled": 0.0, "penalty": 0.0, "total": 0.0}
            for _ in range(cfg.n_critic):
                real_rows = chain.rng.choice(all_idx, size=batch, replace=False)
                real_feat = data.feats[real_rows]
                real_codes = data.codes[real_rows]
                lab_rows = cycle.take(batch)
                lab_feat = data.feats[lab_rows]
                lab_codes = data.codes[lab_rows]
                lab_labels = data.labels[lab_rows] + 1
                step_val = 0.0
                step_grads = None
                step_parts = {"unlabeled": 0.0, "labeled": 0.0, "penalty": 0.0}
                for gchain in gen_chains:
                    z = chain.rng.standard_normal((batch, cfg.latent_dim))
                    fake_rows = chain.rng.choice(all_idx, size=batch, replace=True)
                    fake_codes = data.codes[fake_rows]
                    fake, _ = gen.forward(gchain.params, z, fake_codes)
                    eps = chain.rng.uniform(size=batch)
                    parts, total, grads = discriminator_loss(
                        disc, chain.params, real_feat, real_codes, fake,
                        fake_codes, lab_feat, lab_codes, lab_labels, eps,
                        cfg.lam, cfg.gp_weight, want_grads=True,
                    )
                    step_val += total
                    step_parts["unlabeled"] += parts.unlabeled
                    step_parts["labeled"] += parts.labeled
                    step_parts["penalty"] += parts.penalty
                    if step_grads is None:
                        step_grads = grads
                    else:
                        step_grads = [a + b for a, b in zip(step_grads, grads)]
                prior_g = disc_prior.neg_log_grad(chain.params)
                direction = [-(a + prior_w * b) for a, b in zip(step_grads, prior_g)]
                _check_finite(epoch, f"disc{j}", step_val, direction, trace)
                chain.step(direction, cfg)
                for key in step_parts:
                    sums[key] += step_parts[key]
                sums["total"] += step_val
            for term in ("unlabeled", "labeled", "penalty", "total"):
                trace.append((epoch, "disc", j, term, sums[term] / cfg.n_critic))

        if epoch >= burn_in and (epoch - burn_in) % cfg.thinning == 0:
            for j, chain in enumerate(disc_chains):
                members.append(EnsembleMember(j, epoch, [p.copy() for p in chain.params]))
            for j, chain in enumerate(gen_chains):
                gen_members.append(EnsembleMember(j, epoch, [p.copy() for p in chain.params]))

        if epoch_callback is not None:
            epoch_callback(
                epoch,
                [c.params for c in disc_chains],
                [c.params for c in gen_chains],
            )
        if checkpoint_dir is not None and (
            (cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0)
            or epoch == cfg.epochs
        ):
            save_checkpoint(
                checkpoint_dir, epoch, gen_chains, disc_chains, cycle,
                data_rng, members, gen_members, trace,
            )

    return TrainResult(
        members=members,
        gen_members=gen_members,
        disc_chains=[c.params for c in disc_chains],
        gen_chains=[c.params for c in gen_chains],
        trace=trace,
    )


def predict(
    disc: DiscriminatorNet,
    members: list,
    feats: np.ndarray,
    codes: np.ndarray,
    batch_size: int = 8192,
) -> Prediction:
    """Posterior-mean fraud probability and 5%-95% interval per sample.

    The fraud probability of one member is the restricted-softmax mass on the
    fraud class; quantiles over members use linear interpolation.
    """
    if not members:
        raise ValueError("posterior ensemble is empty")
    n = feats.shape[0]
    probs = np.empty((len(members), n))
    for mi, member in enumerate(members):
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            scores, _ = disc.forward(member.params, feats[lo:hi], codes[lo:hi])
            probs[mi, lo:hi] = restricted_softmax(scores)[:, 1]
    mean = probs.mean(axis=0)
    q05 = np.quantile(probs, 0.05, axis=0)
    q95 = np.quantile(probs, 0.95, axis=0)
    return Prediction(mean=mean, q05=q05, q95=q95, width=q95 - q05)


# ---------------------------------------------------------------------------
# Checkpointing.  A checkpoint directory holds one float64 stream + JSON
# shape manifest per tensor list (chain parameters, optimizer state, ensemble
# members) and a state.json with counters and RNG states.  Writes go to a
# temporary sibling directory renamed over the target, and state.json is
# written last, so partially written checkpoints are never loadable.
# ---------------------------------------------------------------------------


def _chain_state(chain: _Chain, prefix: str, out_dir: Path) -> dict:
    save_params(out_dir / f"{prefix}_params", chain.params)
    entry = {"rng": chain.rng.bit_generator.state, "lr": chain.lr}
    if chain.adam is not None:
        save_params(out_dir / f"{prefix}_adam_m", chain.adam.m)
        save_params(out_dir / f"{prefix}_adam_v", chain.adam.v)
        entry["adam_t"] = chain.adam.t
    else:
        save_params(out_dir / f"{prefix}_velocity", chain.velocity)
    return entry


def _restore_chain(chain: _Chain, prefix: str, in_dir: Path, entry: dict) -> None:
    chain.params = load_params(in_dir / f"{prefix}_params")
    chain.rng.bit_generator.state = entry["rng"]
    if chain.adam is not None:
        chain.adam.m = load_params(in_dir / f"{prefix}_adam_m")
        chain.adam.v = load_params(in_dir / f"{prefix}_adam_v")
        chain.adam.t = int(entry["adam_t"])
    else:
        chain.velocity = load_params(in_dir / f"{prefix}_velocity")


def save_checkpoint(
    checkpoint_dir, epoch, gen_chains, disc_chains, cycle, data_rng,
    members, gen_members, trace,
) -> None:
    final = Path(checkpoint_dir)
    tmp = final.with_name(final.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    state = {
        "epoch": epoch,
        "data_rng": data_rng.bit_generator.state,
        "cycle": cycle.state(),
        "gen_chains": [],
        "disc_chains": [],
        "members": [],
        "gen_members": [],
        "trace": [list(row) for row in trace],
    }
    for j, chain in enumerate(gen_chains):
        state["gen_chains"].append(_chain_state(chain, f"gen{j}", tmp))
    for j, chain in enumerate(disc_chains):
        state["disc_chains"].append(_chain_state(chain, f"disc{j}", tmp))
    for i, m in enumerate(members):
        save_params(tmp / f"member{i:05d}", m.params)
        state["members"].append({"chain": m.chain, "epoch": m.epoch})
    for i, m in enumerate(gen_members):
        save_params(tmp / f"genmember{i:05d}", m.params)
        state["gen_members"].append({"chain": m.chain, "epoch": m.epoch})
    (tmp / "state.json").write_text(json.dumps(state))
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)


def load_checkpoint(
    checkpoint_dir, gen_chains, disc_chains, cycle, data_rng, members,
    gen_members, trace,
) -> int:
    """Restore training state in place; returns the checkpointed epoch."""
    in_dir = Path(checkpoint_dir)
    state = json.loads((in_dir / "state.json").read_text())
    if len(state["gen_chains"]) != len(gen_chains) or len(state["disc_chains"]) != len(disc_chains):
        raise ValueError("checkpoint chain counts do not match the configuration")
    data_rng.bit_generator.state = state["data_rng"]
    cycle.restore(state["cycle"])
    for j, chain in enumerate(gen_chains):
        _restore_chain(chain, f"gen{j}", in_dir, state["gen_chains"][j])
    for j, chain in enumerate(disc_chains):
        _restore_chain(chain, f"disc{j}", in_dir, state["disc_chains"][j])
    members.clear()
    for i, meta in enumerate(state["members"]):
        members.append(
            EnsembleMember(meta["chain"], meta["epoch"], load_params(in_dir / f"member{i:05d}"))
        )
    gen_members.clear()
    for i, meta in enumerate(state["gen_members"]):
        gen_members.append(
            EnsembleMember(meta["chain"], meta["epoch"], load_params(in_dir / f"genmember{i:05d}"))
        )
    trace.clear()
    trace.extend(tuple(row) for row in state["trace"])
    return int(state["epoch"])
