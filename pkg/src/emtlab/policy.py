"""Multi-role controller for the transfer engine.

A shared embedder lifts each task's 5 state features to a 64-dimensional
embedding.  A single-head attention block over the task axis produces a
K x K score matrix (used directly for routing: self entries are masked
and each target picks a source task) and, after batch normalization, a
decision embedding.  Each routed pair's concatenated embedding feeds four
small MLP heads:

    transfer amount   mu = 0.25 + 0.25 tanh(.)   -> a2  in [0, 0.5]
    operator choice   softmax over 4 logits      -> a31 in {1..4}
    mutation strength mu = 0.5 + 0.5 tanh(.)     -> a32 in [0, 1]
    crossover rate    mu = 0.5 + 0.5 tanh(.)     -> a33 in [0, 1]

Continuous actions are drawn from Gaussians with fixed standard deviation
0.1 around the head means and clamped to their ranges; the stored
log-density is that of the unclamped Gaussian at the clamped value.
Discrete actions sample their categorical distributions during training
and take the argmax at inference.  Sampling for task j consumes only the
j-th RNG stream (order per task: routing, amount, operator, F, Cr), which
keeps the whole controller permutation-equivariant in the task axis.

A value critic (MLP on the mean task embedding) provides the baseline for
advantage estimation; it is permutation-invariant and K-agnostic.
"""

import math
from dataclasses import dataclass

import numpy as np

from .nn import tape
from .nn.layers import batch_norm, dense, single_head_attention
from .nn.params import ParameterStore, add_dense
from .nn.tape import Node, constant
from .seeds import derive_rng

FEATURE_DIM = 5
EMBED_DIM = 64
HIDDEN_DIM = 64
N_OPERATORS = 4
ACTION_STD = 0.1
_LOG_NORM = math.log(ACTION_STD * math.sqrt(2.0 * math.pi))


@dataclass
class ActionBundle:
    """One generation's joint decision for all K tasks."""
    a1: np.ndarray        # (K,) source task per target, a1[j] != j
    a2: np.ndarray        # (K,) transfer proportion
    a31: np.ndarray       # (K,) operator id in {1..4}
    a32: np.ndarray       # (K,) mutation strength F
    a33: np.ndarray       # (K,) crossover rate Cr
    log_prob: float
    means: dict


@dataclass
class DecisionContext:
    """Intermediate activations retained for export and diagnostics."""
    embeddings: np.ndarray    # (K, 64)
    scores: np.ndarray        # (K, K) post-masking, pre-softmax
    decision: np.ndarray      # (K, 64)
    concat: np.ndarray        # (K, 128)


def init_policy(seed: int) -> ParameterStore:
    rng = derive_rng(seed, "policy-init")
    store = ParameterStore()
    add_dense(store, rng, "fe", FEATURE_DIM, EMBED_DIM)
    for name in ("Wq", "Wk", "Wv"):
        store.add(f"tr.{name}",
                  rng.uniform(-1, 1, (EMBED_DIM, EMBED_DIM)) / math.sqrt(EMBED_DIM))
    store.add("trbn.gamma", np.ones((1, EMBED_DIM)))
    store.add("trbn.beta", np.zeros((1, EMBED_DIM)))
    for head, out_dim in (("kc", 1), ("op", N_OPERATORS), ("f", 1), ("cr", 1)):
        add_dense(store, rng, f"{head}1", 2 * EMBED_DIM, HIDDEN_DIM)
        add_dense(store, rng, f"{head}2", HIDDEN_DIM, out_dim)
    add_dense(store, rng, "critic1", EMBED_DIM, HIDDEN_DIM)
    add_dense(store, rng, "critic2", HIDDEN_DIM, 1)
    return store


def embed(store: ParameterStore, features: np.ndarray) -> Node:
    """Shared per-task linear map of the 5 state features to 64 dims."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[0] < 2:
        raise ValueError("need at least 2 tasks")
    if feats.shape[1] != FEATURE_DIM:
        raise ValueError(f"expected {FEATURE_DIM} features per task")
    return dense(store, "fe", constant(feats))


def tr_forward(store: ParameterStore, e: Node):
    """Attention scores (pre-softmax) and the batch-normalized decision
    embedding used by all downstream heads."""
    scores, out = single_head_attention(store, e, "tr")
    return scores, batch_norm(store, out, "trbn")


def _masked(scores: Node) -> Node:
    k = scores.value.shape[0]
    mask = np.zeros((k, k))
    np.fill_diagonal(mask, -np.inf)
    return tape.add(scores, constant(mask))


def _sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def _sample_source(rng: np.random.Generator, probs: np.ndarray,
                   scores: np.ndarray) -> int:
    # invert the CDF over sources in descending-score order: the partition
    # of [0, 1) is then a property of the tasks themselves, which keeps
    # sampled routing equivariant under task permutations
    order = np.argsort(-scores, kind="stable")
    cdf = np.cumsum(probs[order])
    cdf[-1] = 1.0
    return int(order[np.searchsorted(cdf, rng.random(), side="right")])


def route(h_score: Node, mode: str, rngs=None, forced=None):
    """Pick a source task per target from the masked score rows.

    Deterministic mode takes the row argmax (ties to the lowest index);
    sample mode draws from the row softmax and returns the log-probability
    node of the draw.
    """
    masked = _masked(h_score)
    k = masked.value.shape[0]
    probs = tape.softmax_rows(masked)
    if forced is not None:
        a1 = np.asarray(forced, dtype=int)
    elif mode == "deterministic":
        a1 = np.argmax(masked.value, axis=1)
    else:
        a1 = np.array([_sample_source(rngs[j], probs.value[j], masked.value[j])
                       for j in range(k)])
    if np.any(a1 == np.arange(k)):
        raise ValueError("routing selected a task as its own source")
    logp = tape.sum_all(tape.log(tape.take(probs, np.arange(k), a1)))
    return a1, probs, logp


def pair_concat(h_decision: Node, a1: np.ndarray) -> Node:
    """Row j becomes [decision_j | decision_{a1[j]}]."""
    return tape.concat_cols(h_decision, tape.take_rows(h_decision, a1))


def _mu_head(store, head: str, h_concat: Node, center: float, half_range: float) -> Node:
    hidden = tape.relu(dense(store, f"{head}1", h_concat))
    raw = tape.tanh(dense(store, f"{head}2", hidden))
    return tape.add(constant(center), tape.scale(raw, half_range))


def _gaussian_logp(mu: Node, values: np.ndarray) -> Node:
    diff = tape.sub(constant(values.reshape(-1, 1)), mu)
    quad = tape.scale(tape.mul(diff, diff), 1.0 / (2.0 * ACTION_STD ** 2))
    return tape.sub(constant(-len(values) * _LOG_NORM), tape.sum_all(quad))


def _sample_gaussian(rngs, mu: np.ndarray, lo: float, hi: float) -> np.ndarray:
    draws = np.array([rngs[j].normal(mu[j], ACTION_STD) for j in range(len(mu))])
    return np.clip(draws, lo, hi)


def kc_act(store, h_concat: Node, mode: str, rngs=None, forced=None):
    """Transfer-amount head; mean in [0, 0.5] by construction."""
    mu = _mu_head(store, "kc", h_concat, 0.25, 0.25)
    flat = mu.value[:, 0]
    if forced is not None:
        a2 = np.asarray(forced, dtype=np.float64)
    elif mode == "deterministic":
        a2 = flat.copy()
    else:
        a2 = _sample_gaussian(rngs, flat, 0.0, 0.5)
    return mu, a2, _gaussian_logp(mu, a2)


def op_act(store, h_concat: Node, mode: str, rngs=None, forced=None):
    """Operator head: 4 softmax probabilities per task (ReLU output layer)."""
    hidden = tape.relu(dense(store, "op1", h_concat))
    logits = tape.relu(dense(store, "op2", hidden))
    probs = tape.softmax_rows(logits)
    k = probs.value.shape[0]
    if forced is not None:
        a31 = np.asarray(forced, dtype=int)
    elif mode == "deterministic":
        a31 = np.argmax(probs.value, axis=1) + 1
    else:
        a31 = np.array([_sample_categorical(rngs[j], probs.value[j])
                        for j in range(k)]) + 1
    logp = tape.sum_all(tape.log(tape.take(probs, np.arange(k), a31 - 1)))
    return probs, a31, logp


def fcr_act(store, h_concat: Node, mode: str, rngs=None,
            forced_f=None, forced_cr=None):
    """Mutation-strength and crossover-rate heads; means in [0, 1]."""
    mu_f = _mu_head(store, "f", h_concat, 0.5, 0.5)
    mu_cr = _mu_head(store, "cr", h_concat, 0.5, 0.5)
    if forced_f is not None:
        a32 = np.asarray(forced_f, dtype=np.float64)
    elif mode == "deterministic":
        a32 = mu_f.value[:, 0].copy()
    else:
        a32 = _sample_gaussian(rngs, mu_f.value[:, 0], 0.0, 1.0)
    if forced_cr is not None:
        a33 = np.asarray(forced_cr, dtype=np.float64)
    elif mode == "deterministic":
        a33 = mu_cr.value[:, 0].copy()
    else:
        a33 = _sample_gaussian(rngs, mu_cr.value[:, 0], 0.0, 1.0)
    return mu_f, mu_cr, a32, a33, _gaussian_logp(mu_f, a32), _gaussian_logp(mu_cr, a33)


def act_with_context(store, features, mode="sample", rngs=None, forced_a1=None):
    """Full controller pass.  Returns (ActionBundle, DecisionContext).

    mode "sample" draws every action and records the joint log-probability
    (routing included only when it was actually sampled, i.e. not forced);
    mode "deterministic" consumes no randomness and reports log_prob 0.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    k = features.shape[0]
    if mode not in ("sample", "deterministic"):
        raise ValueError(f"unknown mode: {mode}")
    if mode == "sample" and (rngs is None or len(rngs) != k):
        raise ValueError("sample mode needs one rng stream per task")
    e = embed(store, features)
    scores, decision = tr_forward(store, e)
    a1, _, route_logp = route(scores, mode, rngs, forced=forced_a1)
    h_concat = pair_concat(decision, a1)
    mu_kc, a2, kc_logp = kc_act(store, h_concat, mode, rngs)
    _, a31, op_logp = op_act(store, h_concat, mode, rngs)
    mu_f, mu_cr, a32, a33, f_logp, cr_logp = fcr_act(store, h_concat, mode, rngs)
    if mode == "sample":
        log_prob = (kc_logp.value + op_logp.value + f_logp.value
                    + cr_logp.value).item()
        if forced_a1 is None:
            log_prob += route_logp.value.item()
    else:
        log_prob = 0.0
    bundle = ActionBundle(a1, a2, a31, a32, a33, log_prob,
                          means={"mu_kc": mu_kc.value[:, 0].copy(),
                                 "mu_f": mu_f.value[:, 0].copy(),
                                 "mu_cr": mu_cr.value[:, 0].copy()})
    ctx = DecisionContext(e.value.copy(), _masked(scores).value.copy(),
                          decision.value.copy(), h_concat.value.copy())
    return bundle, ctx


def act(store, features, mode="sample", rngs=None, forced_a1=None) -> ActionBundle:
    return act_with_context(store, features, mode, rngs, forced_a1)[0]


def critic_value(store, features) -> Node:
    """Scalar state value: MLP over the mean task embedding."""
    e = embed(store, features)
    pooled = tape.mean_axis(e, axis=0)
    hidden = tape.relu(dense(store, "critic1", pooled))
    return dense(store, "critic2", hidden)


def _entropy(probs: Node) -> Node:
    # -sum p log(p + tiny); the tiny offset keeps masked zeros exact
    safe = tape.log(tape.add(probs, constant(1e-12)))
    return tape.neg(tape.sum_all(tape.mul(probs, safe)))


def evaluate_actions(store, features, bundle: ActionBundle,
                     need_entropy: bool = False, include_route: bool = True):
    """Recompute the joint log-probability of a stored bundle plus the
    state value, on the gradient tape.  Used by the policy-update step."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    k = features.shape[0]
    e = embed(store, features)
    scores, decision = tr_forward(store, e)
    a1 = np.asarray(bundle.a1, dtype=int)
    _, route_probs, route_logp = route(scores, "sample", forced=a1)
    h_concat = pair_concat(decision, a1)
    mu_kc, _, kc_logp = kc_act(store, h_concat, "sample", forced=bundle.a2)
    op_probs, _, op_logp = op_act(store, h_concat, "sample", forced=bundle.a31)
    _, _, _, _, f_logp, cr_logp = fcr_act(store, h_concat, "sample",
                                          forced_f=bundle.a32,
                                          forced_cr=bundle.a33)
    parts = [kc_logp, op_logp, f_logp, cr_logp]
    if include_route:
        parts.append(route_logp)
    logp = parts[0]
    for p in parts[1:]:
        logp = tape.add(logp, p)
    pooled = tape.mean_axis(e, axis=0)
    value = dense(store, "critic2", tape.relu(dense(store, "critic1", pooled)))
    entropy = None
    if need_entropy:
        entropy = tape.add(_entropy(route_probs), _entropy(op_probs))
    return logp, value, entropy
