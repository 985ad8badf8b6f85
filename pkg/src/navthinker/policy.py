"""Imagination-augmented recurrent actor-critic, reward shaping, GAE and PPO updates."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import grad as G
from .grad import Tensor
from .sim import RewardTerms
from .world_model import N_ACTIONS, WorldModel

DEPTH_RAYS = 64
AUX_DIM = N_ACTIONS + 2 + 3  # prev-action one-hot, goal polar, pose
HIDDEN = 64
LOOK_DIM = N_ACTIONS * 32
GOAL_SCALE = 10.0


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 2.5e-4
    grad_clip: float = 0.5
    n_envs: int = 8
    rollout_len: int = 128
    shards: int = 1

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if not 0 <= self.clip < 1:
            raise ValueError("clip must lie in [0, 1)")
        if not 1 <= self.shards <= 4:
            raise ValueError("shards must be in 1..4")
        if min(self.epochs, self.minibatches, self.n_envs, self.rollout_len) < 1:
            raise ValueError("epochs, minibatches, n_envs and rollout_len must be positive")
        if self.n_envs * self.rollout_len < self.minibatches * self.shards:
            raise ValueError("rollout too small for the requested minibatches and shards")


@dataclass(frozen=True)
class ShapingConfig:
    d_safe: float = 1.0
    w_traj: float = 0.1
    gamma_p: float = 0.9

    def __post_init__(self):
        if self.d_safe <= 0 or self.w_traj < 0:
            raise ValueError("need d_safe > 0 and w_traj >= 0")


# ---------------------------------------------------------------- inputs


def goal_features(goal_polar) -> np.ndarray:
    g = np.asarray(goal_polar, dtype=np.float64)
    return np.stack([g[..., 0] / GOAL_SCALE, g[..., 1] / math.pi], axis=-1)


def obs_inputs(obs, extent: float = 12.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(depth (64,), aux (9,), goal (2,)) network inputs for one Observation."""
    onehot = np.zeros(N_ACTIONS)
    onehot[int(obs.prev_action)] = 1.0
    goal = goal_features(obs.goal_polar)
    x, y, th = obs.pose
    pose = np.array([x / extent, y / extent, th / math.pi])
    return np.asarray(obs.depth, dtype=np.float64), np.concatenate([onehot, goal, pose]), goal


def _init(rng, fan_in: int, fan_out: int, gain: float = 1.0):
    return rng.standard_normal((fan_in, fan_out)) * gain / math.sqrt(fan_in), np.zeros(fan_out)


class PolicyNet:
    """Conv scan encoder, gated recurrent cell, fusion trunk with actor and critic heads."""

    def __init__(self, seed: int = 0, extent: float = 12.0):
        self.seed = seed
        self.extent = extent
        rng = np.random.default_rng([seed, 0x9F1])
        p: dict[str, np.ndarray] = {}
        p["conv1.w"] = rng.standard_normal((8, 1, 5)) * math.sqrt(2 / 5)
        p["conv1.b"] = np.zeros(8)
        p["conv2.w"] = rng.standard_normal((16, 8, 5)) * math.sqrt(2 / 40)
        p["conv2.b"] = np.zeros(16)
        flat = 16 * self.conv_len()
        p["conv.fc.w"], p["conv.fc.b"] = _init(rng, flat, 48, math.sqrt(2))
        p["embed.w"], p["embed.b"] = _init(rng, 48 + AUX_DIM, HIDDEN, math.sqrt(2))
        p["cell.W"], p["cell.bW"] = _init(rng, 2 * HIDDEN, HIDDEN)
        p["cell.U"], p["cell.bU"] = _init(rng, 2 * HIDDEN, HIDDEN)
        p["fuse1.w"], p["fuse1.b"] = _init(rng, HIDDEN + LOOK_DIM + 2, 128)
        p["fuse2.w"], p["fuse2.b"] = _init(rng, 128, 128)
        p["actor.w"], p["actor.b"] = _init(rng, 128, N_ACTIONS, 0.01)
        p["critic.w"], p["critic.b"] = _init(rng, 128, 1)
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}

    @staticmethod
    def conv_len() -> int:
        n = (DEPTH_RAYS - 5) // 2 + 1
        return (n - 5) // 2 + 1

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].data.tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        G.save_checkpoint(path, self.params)

    @classmethod
    def load(cls, path, seed: int = 0, extent: float = 12.0) -> PolicyNet:
        net = cls(seed, extent)
        G.assign_params(net.params, G.load_checkpoint(path))
        return net

    # -- forward pieces, all batched over the leading axis

    def encode(self, depth, aux, hidden) -> Tensor:
        """Recurrent embedding e_t; it is also the next hidden state."""
        P = self.params
        depth = np.asarray(depth, dtype=np.float64)
        B = depth.shape[0]
        x = G.relu(G.conv1d(depth[:, None, :], P["conv1.w"], P["conv1.b"], stride=2))
        x = G.relu(G.conv1d(x, P["conv2.w"], P["conv2.b"], stride=2))
        x = G.relu(G.linear(G.reshape(x, (B, -1)), P["conv.fc.w"], P["conv.fc.b"]))
        x = G.relu(G.linear(G.concat([x, G.as_tensor(aux)], axis=-1), P["embed.w"], P["embed.b"]))
        h = G.as_tensor(hidden)
        xh = G.concat([x, h], axis=-1)
        u = G.sigmoid(G.linear(xh, P["cell.U"], P["cell.bU"]))
        c = G.tanh(G.linear(xh, P["cell.W"], P["cell.bW"]))
        return h + u * (c - h)

    def heads(self, e, look, goal) -> tuple[Tensor, Tensor]:
        """(logits (B, 4), value (B,)) from the fused trunk."""
        P = self.params
        f = G.concat([G.as_tensor(e), G.as_tensor(look), G.as_tensor(goal)], axis=-1)
        f = G.tanh(G.linear(f, P["fuse1.w"], P["fuse1.b"]))
        f = G.tanh(G.linear(f, P["fuse2.w"], P["fuse2.b"]))
        logits = G.linear(f, P["actor.w"], P["actor.b"])
        v = G.linear(f, P["critic.w"], P["critic.b"])
        return logits, G.reshape(v, (v.shape[0],))


def encode_obs(net: PolicyNet, obs, prev_action: int, hidden) -> tuple[np.ndarray, np.ndarray]:
    """Single-observation recurrent step; returns (e_t, hidden') which coincide."""
    depth, aux, _ = obs_inputs(obs, net.extent)
    aux[:N_ACTIONS] = np.eye(N_ACTIONS)[int(prev_action)]
    with G.no_grad():
        e = net.encode(depth[None], aux[None], np.asarray(hidden, dtype=np.float64)[None]).data[0]
    return e, e.copy()


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def select_actions(logits, mode: str, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Sample or argmax over a batch of logits (B, 4). Returns (actions, log-probs)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite policy logits")
    lp = log_softmax_np(logits)
    if mode == "argmax":
        a = np.argmax(logits, axis=-1)  # first maximum, so ties go to the lowest id
    elif mode == "sample":
        u = rng.random(len(logits))
        cdf = np.cumsum(np.exp(lp), axis=-1)
        a = np.minimum((cdf < u[:, None]).sum(axis=-1), N_ACTIONS - 1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return a, lp[np.arange(len(a)), a]


def act(net: PolicyNet, e, look, goal, mode: str = "sample", rng=None) -> tuple[int, float, float]:
    """Single-agent action, its log-probability and the critic value."""
    with G.no_grad():
        logits, v = net.heads(np.asarray(e)[None], np.asarray(look)[None], np.asarray(goal)[None])
    a, lp = select_actions(logits.data, mode, rng)
    return int(a[0]), float(lp[0]), float(v.data[0])


# ---------------------------------------------------------------- lookahead


def lookahead_latents(model: WorldModel, contexts) -> np.ndarray:
    """One-step imagined latents for every candidate action.

    ``contexts`` is a list of (z_ctx (F, P, D), a_ctx (F-1,)) pairs. Returns
    (B, 4, P, D). Contexts of equal length share one batched transformer pass.
    """
    out = np.zeros((len(contexts), N_ACTIONS, model.cfg.patches, model.cfg.dim))
    by_len: dict[int, list[int]] = {}
    for i, (z, a) in enumerate(contexts):
        if len(a) != len(z) - 1:
            raise ValueError(f"{len(z)} context frames need {len(z) - 1} actions, got {len(a)}")
        by_len.setdefault(len(z), []).append(i)
    for F, idx in by_len.items():
        z = np.stack([contexts[i][0] for i in idx])  # (n, F, P, D)
        a = np.array([contexts[i][1] for i in idx], dtype=np.int64).reshape(len(idx), F - 1)
        out[idx] = model.predict_candidates(z, a)
    return out


def pool_lookahead(latents: np.ndarray) -> np.ndarray:
    """(B, 4, P, D) -> (B, 128): mean over patches, concatenated in action-id order."""
    return latents.mean(axis=-2).reshape(latents.shape[0], -1)


def imagine_lookahead(model: WorldModel, z_ctx, a_ctx) -> Tensor:
    """l_t for one context; a non-differentiable Tensor."""
    z = np.asarray(z_ctx.data if isinstance(z_ctx, Tensor) else z_ctx, dtype=np.float64)
    if z.ndim == 2:
        z = z[None]
    return Tensor(pool_lookahead(lookahead_latents(model, [(z, list(a_ctx))]))[0])


# ---------------------------------------------------------------- reward shaping


def traj_penalty(xi_hat, validity, cfg: ShapingConfig = ShapingConfig()) -> float:
    xi = np.asarray(xi_hat, dtype=np.float64)
    valid = np.asarray(validity, dtype=bool).reshape(-1)
    if not valid.any():
        return 0.0
    xi = xi[valid]  # (n, T, 2)
    T = xi.shape[1]
    hinge = np.maximum(0.0, cfg.d_safe - np.linalg.norm(xi, axis=-1))
    disc = cfg.gamma_p ** np.arange(T)
    return float(cfg.w_traj * (hinge * disc).sum() / (len(xi) * T))


def shape_reward(terms: RewardTerms, xi_hat, validity, cfg: ShapingConfig = ShapingConfig()) -> RewardTerms:
    return terms.with_traj(traj_penalty(xi_hat, validity, cfg))


# ---------------------------------------------------------------- advantages


def gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Raw GAE advantages and returns over axis 0; trailing axes are independent envs."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if not (r.shape == v.shape == d.shape):
        raise ValueError(f"length mismatch: rewards {r.shape}, values {v.shape}, dones {d.shape}")
    adv = np.zeros_like(r)
    nxt_v = np.asarray(bootstrap_value, dtype=np.float64)
    nxt_a = np.zeros_like(nxt_v)
    for t in range(len(r) - 1, -1, -1):
        nd = 1.0 - d[t]
        delta = r[t] + gamma * nxt_v * nd - v[t]
        nxt_a = delta + gamma * lam * nd * nxt_a
        adv[t] = nxt_a
        nxt_v = v[t]
    return adv, adv + v


def normalize(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


# ---------------------------------------------------------------- rollout storage


@dataclass
class RolloutBuffer:
    n_envs: int
    length: int
    depth: np.ndarray = field(init=False)
    aux: np.ndarray = field(init=False)
    goal: np.ndarray = field(init=False)
    hidden: np.ndarray = field(init=False)  # recurrent state at entry to each step
    look: np.ndarray = field(init=False)
    actions: np.ndarray = field(init=False)
    logp: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    rewards: np.ndarray = field(init=False)
    r_traj: np.ndarray = field(init=False)
    dones: np.ndarray = field(init=False)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    t: int = 0

    def __post_init__(self):
        T, N = self.length, self.n_envs
        self.depth = np.zeros((T, N, DEPTH_RAYS))
        self.aux = np.zeros((T, N, AUX_DIM))
        self.goal = np.zeros((T, N, 2))
        self.hidden = np.zeros((T, N, HIDDEN))
        self.look = np.zeros((T, N, LOOK_DIM))
        self.actions = np.zeros((T, N), dtype=np.int64)
        self.logp = np.zeros((T, N))
        self.values = np.zeros((T, N))
        self.rewards = np.zeros((T, N))
        self.r_traj = np.zeros((T, N))
        self.dones = np.zeros((T, N), dtype=bool)

    @property
    def sealed(self) -> bool:
        return self.advantages is not None

    def add(self, **kw) -> None:
        if self.sealed:
            raise RuntimeError("buffer is sealed")
        if self.t >= self.length:
            raise RuntimeError("buffer is full")
        for k, v in kw.items():
            getattr(self, k)[self.t] = v
        self.t += 1

    def seal(self, bootstrap_value, gamma: float, lam: float) -> None:
        if self.t != self.length:
            raise RuntimeError(f"buffer holds {self.t} of {self.length} steps")
        adv, ret = gae(self.rewards, self.values, self.dones, bootstrap_value, gamma, lam)
        self.advantages = normalize(adv)
        self.returns = ret

    def batch(self) -> dict[str, np.ndarray]:
        """All samples flattened to (T * n_envs, ...), with advantages and returns."""
        names = ("depth", "aux", "goal", "hidden", "look", "actions", "logp")
        out = {k: self.flat(k) for k in names}
        out["adv"] = self.advantages.reshape(-1)
        out["returns"] = self.returns.reshape(-1)
        return out

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape((self.length * self.n_envs,) + a.shape[2:])


# ---------------------------------------------------------------- PPO


@dataclass
class PPOStats:
    policy_loss: float
    value_loss: float
    entropy: float
    first_ratio_dev: float  # max |rho - 1| on the very first minibatch
    grad_norm: float


def ppo_loss(net: PolicyNet, data: dict, clip: float, value_coef: float, entropy_coef: float):
    """Clipped-surrogate objective on one slice. Recurrence is replayed one step from the stored entry state."""
    e = net.encode(data["depth"], data["aux"], data["hidden"])
    logits, v = net.heads(e, data["look"], data["goal"])
    lp = G.categorical_logprob(logits, data["actions"])
    ratio = G.exp(lp - data["logp"])
    adv = data["adv"]
    rho = ratio.data
    clipped = np.clip(rho, 1 - clip, 1 + clip) * adv
    # the gradient flows where rho sits strictly inside the trust region or the
    # unclipped term is strictly smaller; ties resolve to the constant clipped term
    live = ((rho > 1 - clip) & (rho < 1 + clip)) | (rho * adv < clipped)
    surr = ratio * (adv * live) + clipped * ~live
    pl = -G.mean(surr)
    vl = G.mean(G.square(v - data["returns"]))
    ent = G.mean(G.entropy(logits))
    total = pl + value_coef * vl - entropy_coef * ent
    return total, pl, vl, ent, ratio


def shard_gradients(net: PolicyNet, data: dict, cfg: PPOConfig, shards: int):
    """Average of per-shard gradients, as synchronous data-parallel workers would all-reduce them."""
    params = net.parameters()
    acc = [np.zeros_like(p.data) for p in params]
    n = len(data["actions"])
    stats = []
    for idx in np.array_split(np.arange(n), shards):
        part = {k: v[idx] for k, v in data.items()}
        for p in params:
            p.grad = None
        total, pl, vl, ent, ratio = ppo_loss(net, part, cfg.clip, cfg.value_coef, cfg.entropy_coef)
        G.backward(total)
        for a, p in zip(acc, params):
            if p.grad is not None:
                a += p.grad
        stats.append((pl.item(), vl.item(), ent.item(), float(np.abs(ratio.data - 1).max())))
    return [a / shards for a in acc], stats


def ppo_update(buffer: RolloutBuffer, net: PolicyNet, opt: G.Adam, cfg: PPOConfig, rng) -> PPOStats:
    if not buffer.sealed:
        raise RuntimeError("rollout buffer must be sealed before the update")
    data_all = buffer.batch()
    n = len(data_all["actions"])
    params = net.parameters()
    pls, vls, ents, norms = [], [], [], []
    first = None
    for _epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for mb in np.array_split(perm, cfg.minibatches):
            grads, stats = shard_gradients(net, {k: v[mb] for k, v in data_all.items()}, cfg, cfg.shards)
            if first is None:
                first = max(s[3] for s in stats)
            for p, g in zip(params, grads):
                p.grad = g
            norms.append(G.clip_grad_norm(params, cfg.grad_clip))
            opt.step()
            pls.append(np.mean([s[0] for s in stats]))
            vls.append(np.mean([s[1] for s in stats]))
            ents.append(np.mean([s[2] for s in stats]))
    return PPOStats(float(np.mean(pls)), float(np.mean(vls)), float(np.mean(ents)), float(first), float(np.mean(norms)))
