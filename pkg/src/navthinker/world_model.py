"""Patch-token world model: frozen depth encoder, frame-causal transformer
transition model with action tokens, and depth / trajectory / reward heads."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import grad as G
from .grad import Tensor
from .grad.functional import LN_EPS
from .grad.tensor import GELU_C

N_ACTIONS = 4


@dataclass(frozen=True)
class WMConfig:
    patches: int = 8
    patch_width: int = 8
    dim: int = 32
    heads: int = 2
    layers: int = 2
    mlp_ratio: int = 4
    context: int = 4  # H; a context holds up to H+1 frames
    n_humans: int = 4
    horizon: int = 4
    depth_hidden: int = 64
    traj_hidden: int = 64
    reward_hidden: int = 32
    lambda_f: float = 1.0
    lambda_xi: float = 0.5
    lambda_r: float = 0.1

    @property
    def tokens_per_frame(self) -> int:
        return self.patches + 1


class FrozenEncoder:
    """z[p] = proj[p] @ depth[8p:8p+8] + pos[p]; immutable numpy arrays."""

    def __init__(self, cfg: WMConfig, seed: int):
        rng = np.random.default_rng([seed, 0xE7C])
        proj = np.empty((cfg.patches, cfg.dim, cfg.patch_width))
        for p in range(cfg.patches):
            q, r = np.linalg.qr(rng.standard_normal((cfg.dim, cfg.patch_width)))
            proj[p] = q * np.sign(np.diag(r))  # orthonormal columns, sign-fixed
        self.proj = proj
        self.pos = rng.standard_normal((cfg.patches, cfg.dim)) * 0.5
        self.proj.setflags(write=False)
        self.pos.setflags(write=False)
        self.cfg = cfg

    def __call__(self, depth) -> np.ndarray:
        d = np.asarray(depth, dtype=np.float64)
        width = self.cfg.patches * self.cfg.patch_width
        if d.shape[-1] != width:
            raise ValueError(f"depth scan must have {width} rays, got {d.shape[-1]}")
        patches = d.reshape(*d.shape[:-1], self.cfg.patches, self.cfg.patch_width)
        return np.einsum("pdk,...pk->...pd", self.proj, patches) + self.pos

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.proj.tobytes())
        h.update(self.pos.tobytes())
        return h.hexdigest()


def _ln(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    return xc / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * (x * x * x))))


def _mlp(x, P, k):
    h = _ln(x, P[k + "ln2.g"], P[k + "ln2.b"])
    return _gelu(h @ P[k + "w1"] + P[k + "b1"]) @ P[k + "w2"] + P[k + "b2"]


def _init_linear(rng, fan_in: int, fan_out: int, gain: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    return rng.standard_normal((fan_in, fan_out)) * gain / math.sqrt(fan_in), np.zeros(fan_out)


class WorldModel:
    """Trainable parameters live in ``params`` (name -> Tensor); the encoder is separate and frozen."""

    def __init__(self, cfg: WMConfig = WMConfig(), seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.encoder = FrozenEncoder(cfg, seed)
        rng = np.random.default_rng([seed, 0x3D])
        D = cfg.dim
        p: dict[str, np.ndarray] = {}
        p["tr.action_embed"] = rng.standard_normal((N_ACTIONS, D)) * 0.5
        p["tr.frame_embed"] = rng.standard_normal((cfg.context + 1, D)) * 0.1
        for i in range(cfg.layers):
            k = f"tr.block{i}."
            p[k + "ln1.g"], p[k + "ln1.b"] = np.ones(D), np.zeros(D)
            for name in ("q", "k", "v", "o"):
                p[k + f"w{name}"], p[k + f"b{name}"] = _init_linear(rng, D, D)
            p[k + "ln2.g"], p[k + "ln2.b"] = np.ones(D), np.zeros(D)
            p[k + "w1"], p[k + "b1"] = _init_linear(rng, D, D * cfg.mlp_ratio)
            p[k + "w2"], p[k + "b2"] = _init_linear(rng, D * cfg.mlp_ratio, D)
        p["tr.ln_f.g"], p["tr.ln_f.b"] = np.ones(D), np.zeros(D)
        p["tr.head.w"], p["tr.head.b"] = _init_linear(rng, D, D)
        # one MLP per patch: (P, in, out) weights with (P, 1, out) biases
        dw = [_init_linear(rng, D, cfg.depth_hidden) for _ in range(cfg.patches)]
        p["dec.depth.w1"] = np.stack([w for w, _ in dw])
        p["dec.depth.b1"] = np.zeros((cfg.patches, 1, cfg.depth_hidden))
        dw = [_init_linear(rng, cfg.depth_hidden, cfg.patch_width) for _ in range(cfg.patches)]
        p["dec.depth.w2"] = np.stack([w for w, _ in dw])
        p["dec.depth.b2"] = np.zeros((cfg.patches, 1, cfg.patch_width))
        n_traj = cfg.n_humans * cfg.horizon * 2
        p["dec.traj.w1"], p["dec.traj.b1"] = _init_linear(rng, D, cfg.traj_hidden)
        p["dec.traj.w2"], p["dec.traj.b2"] = _init_linear(rng, cfg.traj_hidden, n_traj)
        p["dec.reward.w1"], p["dec.reward.b1"] = _init_linear(rng, D, cfg.reward_hidden)
        p["dec.reward.w2"], p["dec.reward.b2"] = _init_linear(rng, cfg.reward_hidden, 1)
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
        self._masks: dict[int, np.ndarray] = {}

    # -- parameter groups

    def transition_params(self) -> list[Tensor]:
        return [t for k, t in self.params.items() if k.startswith("tr.")]

    def decoder_params(self) -> list[Tensor]:
        return [t for k, t in self.params.items() if k.startswith("dec.")]

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: t.data for k, t in self.params.items()}
        out["enc.proj"] = self.encoder.proj
        out["enc.pos"] = self.encoder.pos
        return out

    def load_state_dict(self, values: dict[str, np.ndarray]) -> None:
        enc = {k: values[k] for k in ("enc.proj", "enc.pos") if k in values}
        if enc and not (np.array_equal(enc["enc.proj"], self.encoder.proj)
                        and np.array_equal(enc["enc.pos"], self.encoder.pos)):
            raise G.CheckpointError("checkpoint encoder differs from this model's frozen encoder")
        G.assign_params(self.params, {k: v for k, v in values.items() if not k.startswith("enc.")})

    def save(self, path) -> None:
        G.save_checkpoint(path, self.state_dict())

    @classmethod
    def load(cls, path, cfg: WMConfig = WMConfig(), seed: int = 0) -> WorldModel:
        values = G.load_checkpoint(path)
        m = cls(cfg, seed)
        m.encoder.proj = values["enc.proj"].copy()
        m.encoder.pos = values["enc.pos"].copy()
        m.encoder.proj.setflags(write=False)
        m.encoder.pos.setflags(write=False)
        m.load_state_dict(values)
        return m

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].data.tobytes())
        return h.hexdigest()

    # -- transition model

    def frame_mask(self, n_frames: int) -> np.ndarray:
        if n_frames not in self._masks:
            frame = np.repeat(np.arange(n_frames), self.cfg.tokens_per_frame)
            self._masks[n_frames] = frame[None, :] <= frame[:, None]
        return self._masks[n_frames]

    def _block(self, x: Tensor, i: int, mask: np.ndarray) -> Tensor:
        P = self.params
        k = f"tr.block{i}."
        B, N, D = x.shape
        nh = self.cfg.heads
        hd = D // nh
        h = G.layer_norm(x, P[k + "ln1.g"], P[k + "ln1.b"])

        def heads(t):
            return G.transpose(G.reshape(t, (B, N, nh, hd)), (0, 2, 1, 3))

        q = heads(G.linear(h, P[k + "wq"], P[k + "bq"]))
        kk = heads(G.linear(h, P[k + "wk"], P[k + "bk"]))
        v = heads(G.linear(h, P[k + "wv"], P[k + "bv"]))
        att = G.reshape(G.transpose(G.attention(q, kk, v, mask), (0, 2, 1, 3)), (B, N, D))
        x = x + G.linear(att, P[k + "wo"], P[k + "bo"])
        h = G.layer_norm(x, P[k + "ln2.g"], P[k + "ln2.b"])
        h = G.linear(G.gelu(G.linear(h, P[k + "w1"], P[k + "b1"])), P[k + "w2"], P[k + "b2"])
        return x + h

    def transition(self, z, actions) -> Tensor:
        """Frame-causal pass over a batch of contexts.

        z: (B, F, P, D) latents, actions: (B, F) ids. Returns (B, F, P, D): the
        entry at frame j is the prediction of frame j+1 given frames 0..j.
        """
        cfg = self.cfg
        z = G.as_tensor(z)
        actions = np.asarray(actions, dtype=np.int64)
        B, F, Pn, D = z.shape
        if F < 1 or F > cfg.context + 1:
            raise ValueError(f"context must hold 1..{cfg.context + 1} frames, got {F}")
        if actions.shape != (B, F):
            raise ValueError(f"expected actions of shape {(B, F)}, got {actions.shape}")
        if actions.min() < 0 or actions.max() >= N_ACTIONS:
            raise ValueError("action ids must be in 0..3")
        P = self.params
        a_tok = G.reshape(G.getitem(P["tr.action_embed"], actions), (B, F, 1, D))
        tokens = G.reshape(G.concat([z, a_tok], axis=2), (B, F * (Pn + 1), D))
        # frame index counted from the window start keeps earlier frames fixed when one is appended
        fe = G.getitem(P["tr.frame_embed"], np.repeat(np.arange(F), Pn + 1))
        x = tokens + fe
        mask = self.frame_mask(F)
        for i in range(cfg.layers):
            x = self._block(x, i, mask)
        x = G.reshape(x, (B, F, Pn + 1, D))
        x = G.getitem(x, (slice(None), slice(None), slice(0, Pn)))
        x = G.layer_norm(x, P["tr.ln_f.g"], P["tr.ln_f.b"])
        return G.linear(x, P["tr.head.w"], P["tr.head.b"])

    def predict_candidates(self, z, prefix_actions, candidates=range(N_ACTIONS)) -> np.ndarray:
        """Inference-only next-frame latents for several final actions at once.

        z: (B, F, P, D); prefix_actions: (B, F-1). Frames before the last one do
        not see the final action token, so they are run once and shared by all
        candidates. Returns (B, C, P, D), equal to ``transition`` up to rounding.
        """
        cfg = self.cfg
        P = {k: t.data for k, t in self.params.items()}
        z = np.asarray(z, dtype=np.float64)
        B, F, Pn, D = z.shape
        cands = np.asarray(list(candidates), dtype=np.int64)
        C = len(cands)
        pa = np.asarray(prefix_actions, dtype=np.int64).reshape(B, F - 1)
        T = Pn + 1
        fe = P["tr.frame_embed"]
        emb = P["tr.action_embed"]
        pre = np.concatenate([z[:, :-1], emb[pa][:, :, None, :]], axis=2) + fe[:F - 1, None, :]
        pre = pre.reshape(B, (F - 1) * T, D)
        last = np.empty((B, C, T, D))
        last[:, :, :Pn] = z[:, None, -1]
        last[:, :, Pn] = emb[cands][None]
        last += fe[F - 1]
        mask = self.frame_mask(F - 1) if F > 1 else None
        nh = cfg.heads
        hd = D // nh

        def split(t):  # (..., N, D) -> (..., nh, N, hd)
            return np.swapaxes(t.reshape(t.shape[:-1] + (nh, hd)), -2, -3)

        def merge(t):
            t = np.swapaxes(t, -2, -3)
            return t.reshape(t.shape[:-2] + (D,))

        def attend(q, k, v, m=None):
            sc = q @ np.swapaxes(k, -1, -2) * (1.0 / math.sqrt(hd))
            if m is not None:
                sc = np.where(m, sc, -np.inf)
            sc = sc - sc.max(axis=-1, keepdims=True)
            e = np.exp(sc)
            return (e / e.sum(axis=-1, keepdims=True)) @ v

        for i in range(cfg.layers):
            k = f"tr.block{i}."

            def qkv(x):
                h = _ln(x, P[k + "ln1.g"], P[k + "ln1.b"])
                return [split(h @ P[k + f"w{n}"] + P[k + f"b{n}"]) for n in ("q", "k", "v")]

            ql, kl, vl = qkv(last)  # (B, C, nh, T, hd)
            if F > 1:
                qp, kp, vp = qkv(pre)  # (B, nh, Np, hd)
                att_pre = attend(qp, kp, vp, mask)
                kk = np.concatenate([np.broadcast_to(kp[:, None], (B, C) + kp.shape[1:]), kl], axis=-2)
                vv = np.concatenate([np.broadcast_to(vp[:, None], (B, C) + vp.shape[1:]), vl], axis=-2)
                pre = pre + merge(att_pre) @ P[k + "wo"] + P[k + "bo"]
                pre = pre + _mlp(pre, P, k)
            else:
                kk, vv = kl, vl
            last = last + merge(attend(ql, kk, vv)) @ P[k + "wo"] + P[k + "bo"]
            last = last + _mlp(last, P, k)
        out = _ln(last[:, :, :Pn], P["tr.ln_f.g"], P["tr.ln_f.b"])
        return out @ P["tr.head.w"] + P["tr.head.b"]

    # -- decoder heads

    def decode_depth(self, z) -> Tensor:
        """(..., P, D) -> (..., P*W) in (0, 1)."""
        P = self.params
        z = G.as_tensor(z)
        lead = z.shape[:-2]
        x = G.reshape(z, lead + (self.cfg.patches, 1, self.cfg.dim))
        h = G.gelu(G.linear(x, P["dec.depth.w1"], P["dec.depth.b1"]))
        out = G.sigmoid(G.linear(h, P["dec.depth.w2"], P["dec.depth.b2"]))
        return G.reshape(out, lead + (self.cfg.patches * self.cfg.patch_width,))

    def decode_traj(self, z) -> Tensor:
        """(..., P, D) -> (..., N_h, T, 2) via the mean-pooled feature."""
        P = self.params
        g = G.mean(G.as_tensor(z), axis=-2)
        h = G.gelu(G.linear(g, P["dec.traj.w1"], P["dec.traj.b1"]))
        out = G.linear(h, P["dec.traj.w2"], P["dec.traj.b2"])
        return G.reshape(out, g.shape[:-1] + (self.cfg.n_humans, self.cfg.horizon, 2))

    def decode_reward(self, z) -> Tensor:
        P = self.params
        g = G.mean(G.as_tensor(z), axis=-2)
        h = G.gelu(G.linear(g, P["dec.reward.w1"], P["dec.reward.b1"]))
        out = G.linear(h, P["dec.reward.w2"], P["dec.reward.b2"])
        return G.reshape(out, g.shape[:-1])


# ---------------------------------------------------------------- operations


def encode_observation(model: WorldModel, depth) -> Tensor:
    d = np.asarray(depth, dtype=np.float64)
    if d.shape != (model.cfg.patches * model.cfg.patch_width,):
        raise ValueError(f"expected a single 64-ray scan, got shape {d.shape}")
    return Tensor(model.encoder(d))


def predict_next(model: WorldModel, z_ctx, a_ctx) -> Tensor:
    """Next-frame latent (P, D) from a context of 1..H+1 frames and their actions."""
    z = G.as_tensor(z_ctx)
    a = np.asarray(a_ctx, dtype=np.int64).reshape(-1)
    if z.ndim != 3 or len(a) != z.shape[0]:
        raise ValueError(f"need one action per context frame: {z.shape[0] if z.ndim == 3 else z.shape} vs {len(a)}")
    out = model.transition(G.reshape(z, (1,) + z.shape), a[None])
    return G.getitem(out, (0, -1))


def imagine_rollout(model: WorldModel, z_ctx, a_ctx, future_actions) -> list[Tensor]:
    """Autoregressive k-step imagination with a sliding window of H+1 frames.

    ``a_ctx`` holds the actions taken between context frames (one fewer than
    frames); ``future_actions[k]`` is applied at the newest frame of step k.
    """
    if len(future_actions) < 1:
        raise ValueError("need at least one future action")
    z = G.as_tensor(z_ctx)
    frames = [G.getitem(z, i) for i in range(z.shape[0])]
    acts = [int(a) for a in np.asarray(a_ctx, dtype=np.int64).reshape(-1)]
    if len(acts) != len(frames) - 1:
        raise ValueError(f"{len(frames)} context frames need {len(frames) - 1} actions, got {len(acts)}")
    out = []
    win = model.cfg.context + 1
    for a in future_actions:
        acts.append(int(a))
        frames, acts = frames[-win:], acts[-win:]
        out.append(predict_next(model, G.stack(frames, axis=0), acts))
        frames.append(out[-1])
    return out


def decode(model: WorldModel, z):
    """(d_hat (64,), xi_hat (N_h, T, 2), r_hat scalar) for one latent frame (P, D)."""
    z = G.as_tensor(z)
    if z.shape != (model.cfg.patches, model.cfg.dim):
        raise ValueError(f"decode expects ({model.cfg.patches}, {model.cfg.dim}), got {z.shape}")
    return model.decode_depth(z), model.decode_traj(z), model.decode_reward(z)


@dataclass
class WMBatch:
    z: np.ndarray  # (B, H+2, P, D)
    actions: np.ndarray  # (B, H+1)
    target_depth: np.ndarray  # (B, 64)
    target_traj: np.ndarray  # (B, N_h, T, 2)
    traj_mask: np.ndarray  # (B, N_h) bool
    target_reward: np.ndarray  # (B,)

    @classmethod
    def from_windows(cls, model: WorldModel, w) -> WMBatch:
        return cls(model.encoder(w.depth), w.actions, w.target_depth, w.target_traj, w.traj_mask, w.target_reward)


@dataclass
class WMLoss:
    total: Tensor
    L_f: Tensor
    L_d: Tensor
    L_xi: Tensor
    L_r: Tensor

    def values(self) -> dict[str, float]:
        return {"total": self.total.item(), "L_f": self.L_f.item(), "L_d": self.L_d.item(),
                "L_ξ": self.L_xi.item(), "L_r": self.L_r.item()}


def wm_loss(model: WorldModel, batch: WMBatch, lambdas=None) -> WMLoss:
    """Weighted objective; transition and decoder parameters receive disjoint gradients.

    L_f averages over every context position (teacher forcing): position j
    predicts frame j+1 from frames 0..j.
    """
    lf, lx, lr = lambdas or (model.cfg.lambda_f, model.cfg.lambda_xi, model.cfg.lambda_r)
    z = np.asarray(batch.z, dtype=np.float64)
    ctx = z[:, :-1]
    pred = model.transition(ctx, batch.actions)
    L_f = G.mse(pred, z[:, 1:])
    target_z = z[:, -1]  # true latents, so decoder losses never reach the transition
    L_d = G.mse(model.decode_depth(target_z), batch.target_depth)
    mask = np.asarray(batch.traj_mask, dtype=bool)
    if not mask.any():
        raise ValueError("trajectory mask selects no humans")
    w = np.broadcast_to(mask[:, :, None, None], batch.target_traj.shape)
    L_xi = G.masked_mse(model.decode_traj(target_z), batch.target_traj, w)
    L_r = G.mse(model.decode_reward(target_z), batch.target_reward)
    total = G.scale(L_f, lf) + L_d + G.scale(L_xi, lx) + G.scale(L_r, lr)
    return WMLoss(total, L_f, L_d, L_xi, L_r)
