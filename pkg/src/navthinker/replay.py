"""Episode replay store with fixed-width binary persistence ("NTRB").

Records are kept as a numpy structured array in float32; consumers convert
to float64 before any arithmetic. Episodes are sealed on append, so readers
never observe a half-written episode.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_HUMANS = 4  # N_h, nearest humans tracked per record
HORIZON = 4  # T, future steps per tracked human
CONTEXT = 4  # H, world-model context length
WINDOW = CONTEXT + 2

MAGIC = b"NTRB"
VERSION = 1
HEADER = struct.Struct("<4sIQ")
INDEX_ENTRY = np.dtype([("id", "<u8"), ("offset", "<u8"), ("length", "<u8")])

RECORD_DTYPE = np.dtype([
    ("episode", "<u8"),
    ("t", "<u4"),
    ("depth", "<f4", (64,)),
    ("action", "u1"),
    ("reward_task", "<f4"),
    ("pose", "<f4", (3,)),
    ("humans", "<f4", (N_HUMANS, 2)),
    ("futures", "<f4", (N_HUMANS, HORIZON, 2)),
    ("valid", "u1"),
    ("done", "u1"),
])

HASH_MULT = 2654435761
HELDOUT_FRACTION = 0.1


class ReplayError(RuntimeError):
    pass


class CorruptFileError(ReplayError):
    pass


class TruncatedFileError(ReplayError):
    pass


class VersionMismatchError(ReplayError):
    pass


@dataclass
class TransitionRecord:
    episode: int
    t: int
    depth: np.ndarray
    action: int
    reward_task: float
    pose: np.ndarray
    futures: np.ndarray  # (N_h, T, 2) positions at t+1..t+T, robot frame at t
    valid: int  # bit i set when human slot i is populated
    done: bool
    humans: np.ndarray | None = None  # (N_h, 2) positions at t, same slots and frame


def split_of(episode_id: int) -> str:
    h = (int(episode_id) * HASH_MULT) % (1 << 32)
    return "heldout" if h < HELDOUT_FRACTION * (1 << 32) else "train"


def valid_mask(bits: int | np.ndarray) -> np.ndarray:
    """Bitmask -> boolean array of shape (..., N_h)."""
    bits = np.asarray(bits, dtype=np.uint8)
    return ((bits[..., None] >> np.arange(N_HUMANS, dtype=np.uint8)) & 1).astype(bool)


def human_futures(future_positions: np.ndarray, current_positions: np.ndarray, pose):
    """Pack the N_h nearest humans into the robot frame at ``pose``.

    ``future_positions`` is (T, n, 2) in world coordinates, ``current_positions`` (n, 2).
    Slots are ordered by current distance; missing humans are zero with a cleared bit.
    Returns (futures (N_h, T, 2), current (N_h, 2), bits).
    """
    out = np.zeros((N_HUMANS, HORIZON, 2))
    now = np.zeros((N_HUMANS, 2))
    n = len(current_positions)
    if n == 0:
        return out, now, 0
    x, y, th = (float(v) for v in pose)
    cur = np.asarray(current_positions, dtype=float)
    fut = np.asarray(future_positions, dtype=float)
    order = np.argsort(np.hypot(cur[:, 0] - x, cur[:, 1] - y), kind="stable")[:N_HUMANS]
    c, s = np.cos(th), np.sin(th)
    bits = 0
    for slot, j in enumerate(order):
        d = fut[:, j] - np.array([x, y])
        out[slot, :, 0] = c * d[:, 0] + s * d[:, 1]
        out[slot, :, 1] = -s * d[:, 0] + c * d[:, 1]
        e = cur[j] - np.array([x, y])
        now[slot] = (c * e[0] + s * e[1], -s * e[0] + c * e[1])
        bits |= 1 << slot
    return out, now, bits


def _to_rows(records) -> np.ndarray:
    rows = np.zeros(len(records), dtype=RECORD_DTYPE)
    for k, r in enumerate(records):
        humans = np.zeros((N_HUMANS, 2)) if r.humans is None else r.humans
        rows[k] = (r.episode, r.t, r.depth, r.action, r.reward_task, r.pose, humans, r.futures, r.valid, r.done)
    return rows


def _from_row(row) -> TransitionRecord:
    return TransitionRecord(int(row["episode"]), int(row["t"]), row["depth"].copy(), int(row["action"]),
                            float(row["reward_task"]), row["pose"].copy(), row["futures"].copy(),
                            int(row["valid"]), bool(row["done"]), row["humans"].copy())


@dataclass
class WindowBatch:
    depth: np.ndarray  # (B, H+2, 64)
    actions: np.ndarray  # (B, H+1)
    target_depth: np.ndarray  # (B, 64)
    target_traj: np.ndarray  # (B, N_h, T, 2)
    target_humans: np.ndarray  # (B, N_h, 2) current positions in the target frame
    traj_mask: np.ndarray  # (B, N_h)
    target_reward: np.ndarray  # (B,)
    starts: np.ndarray  # (B,) global record offsets


class ReplayStore:
    """Append-only episode store with a hash-based train/held-out split."""

    def __init__(self):
        self._chunks: list[np.ndarray] = []
        self._index: dict[int, tuple[int, int]] = {}  # id -> (offset, length)
        self._count = 0
        self._flat: np.ndarray | None = np.zeros(0, dtype=RECORD_DTYPE)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._count

    @property
    def records(self) -> np.ndarray:
        if self._flat is None:
            with self._lock:
                self._flat = np.concatenate(self._chunks) if self._chunks else np.zeros(0, dtype=RECORD_DTYPE)
        return self._flat

    @property
    def index(self) -> dict[int, tuple[int, int]]:
        return dict(self._index)

    def episodes(self, split: str | None = None) -> list[int]:
        return [e for e in self._index if split is None or split_of(e) == split]

    def append_episode(self, records) -> int:
        rows = records if isinstance(records, np.ndarray) else _to_rows(records)
        if len(rows) == 0:
            raise ValueError("empty episode")
        ids = np.unique(rows["episode"])
        if len(ids) != 1:
            raise ValueError(f"records span {len(ids)} episode ids")
        eid = int(ids[0])
        if not np.array_equal(rows["t"], np.arange(len(rows))):
            raise ValueError(f"episode {eid}: t must be contiguous from 0")
        rows = np.ascontiguousarray(rows, dtype=RECORD_DTYPE)
        with self._lock:
            if eid in self._index:
                raise ValueError(f"duplicate episode id {eid}")
            self._chunks.append(rows.copy())
            self._index[eid] = (self._count, len(rows))
            self._count += len(rows)
            self._flat = None
        return eid

    def episode(self, eid: int) -> list[TransitionRecord]:
        off, n = self._index[eid]
        return [_from_row(r) for r in self.records[off:off + n]]

    def valid_starts(self, split: str, window: int = WINDOW) -> np.ndarray:
        starts = []
        done = self.records["done"].astype(np.int64)
        for eid in sorted(self.episodes(split)):
            off, n = self._index[eid]
            if n < window:
                continue
            # a done flag may only sit at the last position of a window
            c = np.concatenate([[0], np.cumsum(done[off:off + n])])
            s = np.arange(n - window + 1)
            starts.append(off + s[c[s + window - 1] - c[s] == 0])
        return np.concatenate(starts) if starts else np.zeros(0, dtype=np.int64)

    def sample_windows(self, split: str, batch: int, window: int = WINDOW, seed: int = 0) -> WindowBatch:
        starts = self.valid_starts(split, window)
        if len(starts) == 0:
            raise ValueError(f"no {split} episode holds a window of length {window}")
        rng = np.random.default_rng(seed)
        return self.windows(starts[rng.integers(len(starts), size=batch)], window)

    def windows(self, starts: np.ndarray, window: int = WINDOW) -> WindowBatch:
        rec = self.records
        idx = np.asarray(starts)[:, None] + np.arange(window)
        w = rec[idx]
        last, prev = w[:, -1], w[:, -2]
        return WindowBatch(
            depth=w["depth"].astype(np.float64),
            actions=w["action"][:, :-1].astype(np.int64),
            target_depth=last["depth"].astype(np.float64),
            target_traj=last["futures"].astype(np.float64),
            target_humans=last["humans"].astype(np.float64),
            traj_mask=valid_mask(last["valid"]),
            target_reward=prev["reward_task"].astype(np.float64),
            starts=np.asarray(starts),
        )

    def stats(self, split: str | None = None) -> dict:
        eids = self.episodes(split)
        rec = self.records
        hist = np.zeros(4, dtype=np.int64)
        n = 0
        for e in eids:
            off, k = self._index[e]
            hist += np.bincount(rec["action"][off:off + k], minlength=4)[:4]
            n += k
        return {"episodes": len(eids), "transitions": n, "action_histogram": hist.tolist(),
                "mean_episode_length": n / len(eids) if eids else 0.0}

    def stats_report(self, split: str | None = None) -> str:
        s = self.stats(split)
        lines = [f"episodes={s['episodes']}", f"transitions={s['transitions']}"]
        lines += [f"action_{a}={c}" for a, c in enumerate(s["action_histogram"])]
        lines.append(f"mean_episode_length={s['mean_episode_length']:.6f}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        rec = self.records
        entries = np.array([(e, off, n) for e, (off, n) in self._index.items()], dtype=INDEX_ENTRY)
        with open(path, "wb") as f:
            f.write(HEADER.pack(MAGIC, VERSION, len(rec)))
            f.write(rec.tobytes())
            f.write(struct.pack("<Q", len(entries)))
            f.write(entries.tobytes())

    @classmethod
    def load(cls, path) -> ReplayStore:
        raw = Path(path).read_bytes()
        if len(raw) < 4 or raw[:4] != MAGIC:
            raise CorruptFileError(f"{path}: bad magic")
        if len(raw) < HEADER.size:
            raise TruncatedFileError(f"{path}: header truncated")
        _, version, count = HEADER.unpack_from(raw)
        if version != VERSION:
            raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
        pos = HEADER.size
        end = pos + count * RECORD_DTYPE.itemsize
        if len(raw) < end + 8:
            raise TruncatedFileError(f"{path}: record block truncated")
        rec = np.frombuffer(raw, dtype=RECORD_DTYPE, count=count, offset=pos).copy()
        (n_ep,) = struct.unpack_from("<Q", raw, end)
        if len(raw) < end + 8 + n_ep * INDEX_ENTRY.itemsize:
            raise TruncatedFileError(f"{path}: index block truncated")
        if len(raw) > end + 8 + n_ep * INDEX_ENTRY.itemsize:
            raise CorruptFileError(f"{path}: trailing bytes after index")
        entries = np.frombuffer(raw, dtype=INDEX_ENTRY, count=n_ep, offset=end + 8)
        store = cls()
        covered = 0
        for e, off, n in entries:
            off, n = int(off), int(n)
            if off + n > count or n == 0 or np.any(rec["episode"][off:off + n] != e):
                raise CorruptFileError(f"{path}: index entry for episode {int(e)} does not match records")
            store._index[int(e)] = (off, n)
            covered += n
        if covered != count:
            raise CorruptFileError(f"{path}: index covers {covered} of {count} records")
        store._chunks = [rec] if count else []
        store._flat = rec
        store._count = int(count)
        return store
