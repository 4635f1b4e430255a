"""Clipped-surrogate policy optimization over transfer-engine rollouts.

Training walks the instance set once per epoch.  Each instance hosts one
episode of `budget` generations; every `t_ppo` steps (and at episode end)
the collected segment is turned into generalized-advantage estimates and
the policy takes `k_ppo` full-batch update passes of

    loss = -E[min(r A, clip(r, 1-eps, 1+eps) A)]
           + value_coef * E[(return - V)^2] - entropy_coef * H

where r is the ratio of the recomputed to the stored joint action
log-probability.  Advantages are normalized within each segment; returns
are raw advantages plus values and serve as critic targets.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import emt_step, extract_state, init_populations
from .nn import tape
from .nn.params import ParameterStore, adam_step, save_checkpoint
from .nn.tape import backward, constant
from .policy import ActionBundle, act, critic_value, evaluate_actions, init_policy
from .seeds import derive_rng, derive_seed

log = logging.getLogger(__name__)


@dataclass
class Transition:
    features: np.ndarray
    action: ActionBundle
    log_prob: float
    reward: float
    value: float
    done: bool


@dataclass
class PPOConfig:
    t_ppo: int = 10
    k_ppo: int = 3
    clip_eps: float = 0.2
    learning_rate: float = 0.0003
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    epochs: int = 10
    budget: int = 250

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.t_ppo < 1:
            raise ValueError("t_ppo must be >= 1")


def compute_advantages(buffer, config: PPOConfig, bootstrap_value: float = 0.0):
    """GAE over one contiguous segment.

    bootstrap_value is the critic's estimate of the state following the
    last transition (ignored when that transition is terminal).  Returns
    (advantages, returns) with advantages normalized to zero mean and unit
    variance for segments of length >= 2; returns are computed from the
    raw advantages.
    """
    if not buffer:
        raise ValueError("empty segment")
    n = len(buffer)
    rewards = np.array([t.reward for t in buffer])
    values = np.array([t.value for t in buffer])
    adv = np.zeros(n)
    running = 0.0
    next_value = bootstrap_value
    for t in range(n - 1, -1, -1):
        alive = 0.0 if buffer[t].done else 1.0
        delta = rewards[t] + config.gamma * next_value * alive - values[t]
        running = delta + config.gamma * config.gae_lambda * alive * running
        adv[t] = running
        next_value = values[t]
    returns = adv + values
    if n >= 2:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def _ppo_loss(store, buffer, advantages, returns, old_logp, config: PPOConfig):
    n = len(buffer)
    surr_sum = None
    vloss_sum = None
    ent_sum = None
    ratio_vals = []
    want_entropy = config.entropy_coef != 0.0
    for i, tr in enumerate(buffer):
        logp, value, entropy = evaluate_actions(store, tr.features, tr.action,
                                                need_entropy=want_entropy)
        ratio = tape.exp(tape.sub(logp, constant(old_logp[i])))
        ratio_vals.append(ratio.value.item())
        unclipped = tape.scale(ratio, advantages[i])
        clipped = tape.scale(tape.clip(ratio, 1.0 - config.clip_eps,
                                       1.0 + config.clip_eps), advantages[i])
        surr = tape.minimum(unclipped, clipped)
        verr = tape.sub(constant(returns[i]), value)
        vloss = tape.mul(verr, verr)
        surr_sum = surr if surr_sum is None else tape.add(surr_sum, surr)
        vloss_sum = vloss if vloss_sum is None else tape.add(vloss_sum, vloss)
        if want_entropy:
            ent_sum = entropy if ent_sum is None else tape.add(ent_sum, entropy)
    loss = tape.add(tape.scale(surr_sum, -1.0 / n),
                    tape.scale(vloss_sum, config.value_coef / n))
    if want_entropy:
        loss = tape.sub(loss, tape.scale(ent_sum, config.entropy_coef / n))
    parts = {
        "surrogate": surr_sum.value.item() / n,
        "value_loss": vloss_sum.value.item() / n,
        "entropy": ent_sum.value.item() / n if want_entropy else 0.0,
        "mean_ratio": float(np.mean(ratio_vals)),
    }
    return loss, parts


def ppo_update(buffer, store: ParameterStore, config: PPOConfig,
               bootstrap_value: float = 0.0) -> dict:
    """k_ppo clipped-surrogate passes over one segment; applies Adam steps.

    A non-finite loss aborts the update before any gradient is applied in
    that pass and reports the diagnostic in the returned statistics.
    """
    advantages, returns = compute_advantages(buffer, config, bootstrap_value)
    old_logp = np.array([t.log_prob for t in buffer])
    stats = {"iterations": [], "aborted": False, "diagnostic": None}
    for _ in range(config.k_ppo):
        store.zero_grads()
        loss, parts = _ppo_loss(store, buffer, advantages, returns, old_logp, config)
        if not np.isfinite(loss.value).all():
            stats["aborted"] = True
            stats["diagnostic"] = (
                f"non-finite loss (surrogate={parts['surrogate']}, "
                f"value_loss={parts['value_loss']}, ratio={parts['mean_ratio']})")
            store.zero_grads()
            log.warning("ppo_update aborted: %s", stats["diagnostic"])
            break
        backward(loss)
        store.step += 1
        adam_step(store, config.learning_rate, store.step)
        parts["loss"] = loss.value.item()
        stats["iterations"].append(parts)
    return stats


@dataclass
class EpisodeLog:
    epoch: int
    instance_id: str
    episode_return: float
    mean_rc: float
    mean_rk: float
    wall_time: float


@dataclass
class TrainResult:
    params: ParameterStore
    log: list = field(default_factory=list)


def run_training_episode(store, instance, config: PPOConfig, pop_size: int,
                         episode_seed: int) -> tuple:
    """One sampled-policy episode with interleaved updates.

    Returns (episode_return, mean_rc, mean_rk) where the means are per-step
    sums of the reward components averaged over the episode.
    """
    state = init_populations(instance, pop_size,
                             derive_seed(episode_seed, "engine"), config.budget)
    rngs = [derive_rng(episode_seed, "sample", j)
            for j in range(instance.n_tasks)]
    features = extract_state(state)
    buffer = []
    ep_return = 0.0
    rc_total = 0.0
    rk_total = 0.0
    for t in range(1, config.budget + 1):
        bundle = act(store, features, "sample", rngs)
        value = critic_value(store, features).value.item()
        reward, info = emt_step(state, bundle)
        ep_return += reward
        rc_total += float(info["rc"].sum())
        rk_total += float(info["rk"].sum())
        done = t == config.budget
        buffer.append(Transition(features, bundle, bundle.log_prob, reward,
                                 value, done))
        next_features = extract_state(state)
        if t % config.t_ppo == 0 or done:
            bootstrap = (0.0 if done else
                         critic_value(store, next_features).value.item())
            ppo_update(buffer, store, config, bootstrap)
            buffer = []
        features = next_features
    g = config.budget
    return ep_return, rc_total / g, rk_total / g


def train(train_set, config: PPOConfig, seed: int, pop_size: int = 50,
          out_dir=None) -> TrainResult:
    """Full training loop: `epochs` passes over the instance set, one
    episode per instance, checkpoint per epoch when out_dir is given.
    A failing instance run is logged and skipped."""
    if not train_set:
        raise ValueError("training set must not be empty")
    store = init_policy(seed)
    result = TrainResult(store)
    for epoch in range(1, config.epochs + 1):
        for inst in train_set:
            start = time.perf_counter()
            episode_seed = derive_seed(seed, "episode", epoch, inst.instance_id)
            try:
                ep_return, mean_rc, mean_rk = run_training_episode(
                    store, inst, config, pop_size, episode_seed)
            except Exception:
                log.exception("episode failed on %s (epoch %d), skipping",
                              inst.instance_id, epoch)
                continue
            result.log.append(EpisodeLog(epoch, inst.instance_id, ep_return,
                                         mean_rc, mean_rk,
                                         time.perf_counter() - start))
        if out_dir is not None:
            save_checkpoint(store, f"{out_dir}/checkpoint_epoch_{epoch:03d}.json")
    if out_dir is not None:
        save_checkpoint(store, f"{out_dir}/checkpoint.json")
    return result


def write_training_log(rows, path: str) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "instance_id", "episode_return", "mean_Rc",
                         "mean_Rk", "wall_time"])
        for r in rows:
            writer.writerow([r.epoch, r.instance_id, repr(r.episode_return),
                             repr(r.mean_rc), repr(r.mean_rk),
                             f"{r.wall_time:.3f}"])
