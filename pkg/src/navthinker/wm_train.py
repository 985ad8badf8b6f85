"""World-model training loop and held-out evaluation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import grad as G
from .replay import WINDOW, ReplayStore
from .world_model import WMBatch, WorldModel, wm_loss

log = logging.getLogger(__name__)

CURVE_COLUMNS = ["step", "total", "L_f", "L_d", "L_ξ", "L_r"]
EVAL_COLUMNS = ["cos_sim", "depth_rmse", "traj_ade", "traj_fde"]


@dataclass
class WMTrainConfig:
    steps: int = 3000
    batch: int = 32
    lr: float = 3e-4
    grad_clip: float = 1.0
    eval_every: int = 1000
    checkpoint_every: int = 1000
    eval_episodes: int = 200
    min_transitions: int = 64  # minimum number of valid training windows


@dataclass
class WMEvalReport:
    cos_sim: float
    depth_rmse: float
    traj_ade: float
    traj_fde: float
    baseline_ade: float = float("nan")  # humans assumed to stay put
    baseline_fde: float = float("nan")
    windows: int = 0

    def row(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in EVAL_COLUMNS}


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return np.clip((a * b).sum(axis=1) / np.maximum(den, 1e-300), -1.0, 1.0)


def wm_metrics(pred_z, target_z, pred_depth, target_depth, pred_traj, target_traj, mask) -> WMEvalReport:
    """Summary metrics from predicted versus true frames (numpy arrays)."""
    if len(pred_z) == 0:
        raise ValueError("no frames to evaluate")
    cos = float(_cosine(np.asarray(pred_z), np.asarray(target_z)).mean())
    rmse = float(np.sqrt(np.mean((np.asarray(pred_depth) - np.asarray(target_depth)) ** 2)))
    m = np.asarray(mask, dtype=bool)
    err = np.linalg.norm(np.asarray(pred_traj) - np.asarray(target_traj), axis=-1)  # (B, N_h, T)
    if m.any():
        ade = float(err[m].mean())
        fde = float(err[m][:, -1].mean())
    else:
        ade = fde = 0.0
    return WMEvalReport(cos, rmse, ade, fde, windows=len(pred_z))


def heldout_starts(store: ReplayStore, max_episodes: int | None = None, split: str = "heldout") -> np.ndarray:
    eps = sorted(store.episodes(split))
    if max_episodes is not None:
        eps = eps[:max_episodes]
    keep = set(eps)
    starts = store.valid_starts(split)
    rec_ep = store.records["episode"]
    return np.array([s for s in starts if int(rec_ep[s]) in keep], dtype=np.int64)


def evaluate_wm(model: WorldModel, store: ReplayStore, max_episodes: int | None = 200,
                starts: np.ndarray | None = None, chunk: int = 256) -> WMEvalReport:
    """One-step prediction quality on held-out windows (full H+1 context)."""
    if starts is None:
        starts = heldout_starts(store, max_episodes)
    if len(starts) == 0:
        raise ValueError("held-out set is empty")
    zs, tz, pd, td, pt, tt, masks, now = [], [], [], [], [], [], [], []
    with G.no_grad():
        for i in range(0, len(starts), chunk):
            w = store.windows(starts[i:i + chunk], WINDOW)
            z = model.encoder(w.depth)
            pred = model.transition(z[:, :-1], w.actions).data[:, -1]
            zs.append(pred)
            tz.append(z[:, -1])
            pd.append(model.decode_depth(pred).data)
            td.append(w.target_depth)
            pt.append(model.decode_traj(pred).data)
            tt.append(w.target_traj)
            masks.append(w.traj_mask)
            now.append(w.target_humans)
    rep = wm_metrics(np.concatenate(zs), np.concatenate(tz), np.concatenate(pd), np.concatenate(td),
                     np.concatenate(pt), np.concatenate(tt), np.concatenate(masks))
    stay = np.repeat(np.concatenate(now)[:, :, None, :], tt[0].shape[2], axis=2)
    base = wm_metrics(np.concatenate(tz), np.concatenate(tz), np.concatenate(td), np.concatenate(td),
                      stay, np.concatenate(tt), np.concatenate(masks))
    rep.baseline_ade, rep.baseline_fde = base.traj_ade, base.traj_fde
    return rep


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def train_wm(store: ReplayStore, model: WorldModel, cfg: WMTrainConfig = WMTrainConfig(), seed: int = 0,
             out_dir=None) -> tuple[WorldModel, list[dict]]:
    """Adam on the weighted world-model objective over uniformly sampled training windows."""
    starts = store.valid_starts("train")
    if len(starts) < cfg.min_transitions:
        raise ValueError(f"replay holds {len(starts)} training windows, need {cfg.min_transitions}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    enc_sum = model.encoder.checksum()
    params = list(model.params.values())
    opt = G.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(seed)
    curve: list[dict] = []
    evals: list[dict] = []
    eval_starts = None
    for step in range(1, cfg.steps + 1):
        w = store.windows(starts[rng.integers(len(starts), size=cfg.batch)])
        batch = WMBatch.from_windows(model, w)
        opt.zero_grad()
        losses, values = _loss_allowing_empty(model, batch)
        G.backward(losses.total)
        G.clip_grad_norm(params, cfg.grad_clip)
        opt.step()
        curve.append({"step": step, **values})
        if out is not None and cfg.eval_every and step % cfg.eval_every == 0:
            if eval_starts is None:
                eval_starts = heldout_starts(store, cfg.eval_episodes)
            if len(eval_starts):
                rep = evaluate_wm(model, store, starts=eval_starts)
                evals.append({"step": step, **rep.row()})
                log.info("wm step %d: %s", step, rep.row())
        if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            model.save(out / f"wm_step{step}.ntck")
    if model.encoder.checksum() != enc_sum:
        raise RuntimeError("frozen encoder changed during training")
    if out is not None:
        _write_csv(out / "wm_curve.csv", CURVE_COLUMNS, curve)
        _write_csv(out / "wm_eval.csv", ["step"] + EVAL_COLUMNS, evals)
        model.save(out / "wm_final.ntck")
    return model, curve


def _loss_allowing_empty(model: WorldModel, batch: WMBatch):
    if batch.traj_mask.any():
        losses = wm_loss(model, batch)
        return losses, losses.values()
    # a batch without any human drops the trajectory term instead of failing
    mask = batch.traj_mask.copy()
    mask[0, 0] = True
    full = WMBatch(batch.z, batch.actions, batch.target_depth, batch.target_traj, mask, batch.target_reward)
    losses = wm_loss(model, full, (model.cfg.lambda_f, 0.0, model.cfg.lambda_r))
    return losses, {**losses.values(), "L_ξ": 0.0}
