"""Replay buffers: FIFO, reservoir, half-and-half, and the MTR cascade.

All buffers share the same interface: `push(exp)`, `sample(batch_size, rng)`
and `len()`. Sampling returns a `SampledBatch` whose `source_ids` annotate
which cascade sub-buffer each experience came from (1-based; 0 stands for
the overflow buffer and for every non-cascade buffer), which is what the
per-timescale policy penalty needs downstream.
"""

from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

OVERFLOW_SOURCE = 0

_MAGIC = b"MTRB"
_FORMAT_VERSION = 1
_KIND_CODES = {"fifo": 1, "reservoir": 2, "half": 3, "mtr": 4}


class EmptyBufferError(RuntimeError):
    """Raised when sampling from a buffer that holds no experiences."""


@dataclass(slots=True)
class Experience:
    """One stored transition."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool
    insert_step: int


@dataclass(slots=True)
class SampledBatch:
    """Batch of experiences with per-item source annotation."""

    experiences: list[Experience]
    source_ids: list[int]

    def __len__(self) -> int:
        return len(self.experiences)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Stack into (states, actions, rewards, next_states, terminals)."""
        exps = self.experiences
        n = len(exps)
        states = np.empty((n, len(exps[0].state)))
        actions = np.empty((n, len(exps[0].action)))
        rewards = np.empty(n)
        next_states = np.empty_like(states)
        terminals = np.empty(n)
        for i, e in enumerate(exps):
            states[i] = e.state
            actions[i] = e.action
            rewards[i] = e.reward
            next_states[i] = e.next_state
            terminals[i] = 1.0 if e.terminal else 0.0
        return states, actions, rewards, next_states, terminals


def _as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def apportion(counts: Sequence[int], n: int, rng: np.random.Generator) -> list[int]:
    """Largest-remainder apportionment of `n` draws over occupancy `counts`.

    Quotas are floor(n * count/total) plus one extra for the largest
    fractional remainders; ties among equal remainders are broken uniformly
    at random. Buckets with zero occupancy always get zero quota, and the
    quotas sum to exactly `n` (callers pass n <= sum(counts)).
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if n > total:
        raise ValueError(f"cannot apportion {n} draws over {total} items")
    ideal = n * counts / total
    base = np.floor(ideal).astype(np.int64)
    remainder = int(n - base.sum())
    quotas = base
    if remainder > 0:
        frac = ideal - base
        candidates = np.flatnonzero(frac > 0.0)
        perm = rng.permutation(candidates)
        order = perm[np.argsort(-frac[perm], kind="stable")]
        quotas = base.copy()
        quotas[order[:remainder]] += 1
    return quotas.tolist()


def _draw_within(items: Sequence[Experience], quota: int,
                 rng: np.random.Generator) -> list[Experience]:
    # uniform with replacement inside one bucket
    idx = rng.integers(0, len(items), size=quota)
    return [items[i] for i in idx]


class FifoBuffer:
    """Fixed-capacity queue; the oldest experience is evicted when full."""

    def __init__(self, capacity: int, rng: np.random.Generator | int | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.items: deque[Experience] = deque()
        self.rng = _as_rng(rng)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, exp: Experience) -> None:
        self.items.append(exp)
        if len(self.items) > self.capacity:
            self.items.popleft()

    def sample(self, batch_size: int, rng: np.random.Generator | None = None) -> SampledBatch:
        if not self.items:
            raise EmptyBufferError("cannot sample from an empty buffer")
        rng = rng if rng is not None else self.rng
        n = min(int(batch_size), len(self.items))
        store = list(self.items)
        chosen = _draw_within(store, n, rng)
        return SampledBatch(chosen, [OVERFLOW_SOURCE] * n)


class ReservoirBuffer:
    """Uniform sample over the whole push history (Vitter's Algorithm R).

    After t pushes each item ever pushed is retained with probability
    capacity / t.
    """

    def __init__(self, capacity: int, rng: np.random.Generator | int | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.items: list[Experience] = []
        self.seen = 0
        self.rng = _as_rng(rng)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, exp: Experience) -> None:
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(exp)
            return
        j = int(self.rng.integers(0, self.seen))
        if j < self.capacity:
            self.items[j] = exp

    def sample(self, batch_size: int, rng: np.random.Generator | None = None) -> SampledBatch:
        if not self.items:
            raise EmptyBufferError("cannot sample from an empty buffer")
        rng = rng if rng is not None else self.rng
        n = min(int(batch_size), len(self.items))
        chosen = _draw_within(self.items, n, rng)
        return SampledBatch(chosen, [OVERFLOW_SOURCE] * n)


class HalfHalfBuffer:
    """Each push goes to a FIFO half or a reservoir half by a fair coin.

    Sampling draws from both halves in proportion to their occupancies.
    """

    def __init__(self, capacity: int, rng: np.random.Generator | int | None = None):
        if capacity <= 0 or capacity % 2 != 0:
            raise ValueError("capacity must be positive and even")
        self.capacity = int(capacity)
        self.rng = _as_rng(rng)
        self.fifo_part = FifoBuffer(capacity // 2, self.rng)
        self.reservoir_part = ReservoirBuffer(capacity // 2, self.rng)

    def __len__(self) -> int:
        return len(self.fifo_part) + len(self.reservoir_part)

    def push(self, exp: Experience) -> None:
        if self.rng.random() < 0.5:
            self.fifo_part.push(exp)
        else:
            self.reservoir_part.push(exp)

    def sample(self, batch_size: int, rng: np.random.Generator | None = None) -> SampledBatch:
        if len(self) == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        rng = rng if rng is not None else self.rng
        n = min(int(batch_size), len(self))
        q_fifo, q_res = apportion([len(self.fifo_part), len(self.reservoir_part)], n, rng)
        chosen: list[Experience] = []
        if q_fifo:
            chosen.extend(_draw_within(list(self.fifo_part.items), q_fifo, rng))
        if q_res:
            chosen.extend(_draw_within(self.reservoir_part.items, q_res, rng))
        return SampledBatch(chosen, [OVERFLOW_SOURCE] * n)


class MtrBuffer:
    """Cascade of FIFO sub-buffers with probabilistic promotion.

    New experiences enter sub-buffer 1. An eviction from a full sub-buffer
    is promoted to the next one with probability `beta`, otherwise it joins
    the overflow queue. Evictions from the last sub-buffer face the same
    coin: promotion means leaving the cascade for good (discard), failure
    means overflow. The overflow queue may hold at most
    capacity - (cascade occupancy) items; its oldest entries are dropped
    beyond that, so once the cascade is full every eviction is discarded.

    `on_cascade_exit`, when set, is called as fn(exp, push_index) the moment
    an experience leaves the cascade (to overflow or discard); the retention
    analysis uses it to record lifetimes.
    """

    def __init__(self, capacity: int, n_sub: int, beta: float,
                 rng: np.random.Generator | int | None = None,
                 on_cascade_exit: Callable[[Experience, int], None] | None = None):
        if capacity <= 0 or n_sub <= 0:
            raise ValueError("capacity and n_sub must be positive")
        if capacity < n_sub or capacity % n_sub != 0:
            raise ValueError("capacity must be a positive multiple of n_sub")
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        self.capacity = int(capacity)
        self.n_sub = int(n_sub)
        self.sub_capacity = self.capacity // self.n_sub
        self.beta = float(beta)
        self.rng = _as_rng(rng)
        self.sub_buffers: list[deque[Experience]] = [deque() for _ in range(self.n_sub)]
        self.overflow: deque[Experience] = deque()
        self.push_count = 0
        self._cascade_len = 0
        self.on_cascade_exit = on_cascade_exit

    def __len__(self) -> int:
        return self._cascade_len + len(self.overflow)

    @property
    def cascade_len(self) -> int:
        return self._cascade_len

    def occupancies(self) -> list[int]:
        """[overflow, sub 1, ..., sub n_sub] occupancy counts."""
        return [len(self.overflow)] + [len(b) for b in self.sub_buffers]

    def _exit_cascade(self, exp: Experience) -> None:
        self._cascade_len -= 1
        if self.on_cascade_exit is not None:
            self.on_cascade_exit(exp, self.push_count)

    def push(self, exp: Experience) -> None:
        subs = self.sub_buffers
        subs[0].append(exp)
        self._cascade_len += 1
        k = 0
        while len(subs[k]) > self.sub_capacity:
            evicted = subs[k].popleft()
            promote = self.rng.random() < self.beta
            if k + 1 < self.n_sub:
                if promote:
                    subs[k + 1].append(evicted)
                    k += 1
                    continue
                self._exit_cascade(evicted)
                self.overflow.append(evicted)
            else:
                # same coin at the cascade's end: promotion leaves the
                # database entirely, failure falls back to overflow
                self._exit_cascade(evicted)
                if not promote:
                    self.overflow.append(evicted)
            break
        while self._cascade_len + len(self.overflow) > self.capacity:
            self.overflow.popleft()
        self.push_count += 1

    def sample(self, batch_size: int, rng: np.random.Generator | None = None) -> SampledBatch:
        if len(self) == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        rng = rng if rng is not None else self.rng
        n = min(int(batch_size), len(self))
        counts = self.occupancies()
        quotas = apportion(counts, n, rng)
        experiences: list[Experience] = []
        source_ids: list[int] = []
        if quotas[0]:
            experiences.extend(_draw_within(list(self.overflow), quotas[0], rng))
            source_ids.extend([OVERFLOW_SOURCE] * quotas[0])
        for i, q in enumerate(quotas[1:], start=1):
            if q:
                experiences.extend(_draw_within(list(self.sub_buffers[i - 1]), q, rng))
                source_ids.extend([i] * q)
        return SampledBatch(experiences, source_ids)

    def check_invariants(self) -> None:
        """Assert structural invariants; used by tests and debug harness runs."""
        assert all(len(b) <= self.sub_capacity for b in self.sub_buffers)
        cascade = sum(len(b) for b in self.sub_buffers)
        assert cascade == self._cascade_len
        assert cascade + len(self.overflow) <= self.capacity
        if cascade == self.capacity:
            assert len(self.overflow) == 0


# ---------------------------------------------------------------------------
# serialization: 4-byte magic, version, kind, JSON metadata, then one
# length-prefixed record stream per sub-buffer
# ---------------------------------------------------------------------------


def _pack_experience(exp: Experience) -> bytes:
    state = np.asarray(exp.state, dtype=np.float64).ravel()
    action = np.asarray(exp.action, dtype=np.float64).ravel()
    next_state = np.asarray(exp.next_state, dtype=np.float64).ravel()
    head = struct.pack("<II", state.size, action.size)
    tail = struct.pack("<dBQ", float(exp.reward), 1 if exp.terminal else 0,
                       int(exp.insert_step))
    return head + state.tobytes() + action.tobytes() + next_state.tobytes() + tail


def _unpack_experiences(buf: bytes, offset: int, count: int) -> tuple[list[Experience], int]:
    out: list[Experience] = []
    for _ in range(count):
        sdim, adim = struct.unpack_from("<II", buf, offset)
        offset += 8
        state = np.frombuffer(buf, dtype=np.float64, count=sdim, offset=offset).copy()
        offset += 8 * sdim
        action = np.frombuffer(buf, dtype=np.float64, count=adim, offset=offset).copy()
        offset += 8 * adim
        next_state = np.frombuffer(buf, dtype=np.float64, count=sdim, offset=offset).copy()
        offset += 8 * sdim
        reward, terminal, insert_step = struct.unpack_from("<dBQ", buf, offset)
        offset += struct.calcsize("<dBQ")
        out.append(Experience(state, action, reward, next_state, bool(terminal),
                              int(insert_step)))
    return out, offset


def _write_section(parts: list[bytes], items: Iterable[Experience]) -> None:
    items = list(items)
    parts.append(struct.pack("<I", len(items)))
    for exp in items:
        parts.append(_pack_experience(exp))


def save_buffer(buffer, path: str | Path) -> None:
    """Serialize any of the four buffer kinds, including its RNG state."""
    if isinstance(buffer, MtrBuffer):
        kind = "mtr"
        meta = {"capacity": buffer.capacity, "n_sub": buffer.n_sub,
                "beta": buffer.beta, "push_count": buffer.push_count}
        sections: list[Iterable[Experience]] = [buffer.overflow] + list(buffer.sub_buffers)
    elif isinstance(buffer, HalfHalfBuffer):
        kind = "half"
        meta = {"capacity": buffer.capacity,
                "reservoir_seen": buffer.reservoir_part.seen}
        sections = [buffer.fifo_part.items, buffer.reservoir_part.items]
    elif isinstance(buffer, ReservoirBuffer):
        kind = "reservoir"
        meta = {"capacity": buffer.capacity, "seen": buffer.seen}
        sections = [buffer.items]
    elif isinstance(buffer, FifoBuffer):
        kind = "fifo"
        meta = {"capacity": buffer.capacity}
        sections = [buffer.items]
    else:
        raise TypeError(f"cannot serialize buffer of type {type(buffer)!r}")
    meta["rng_state"] = buffer.rng.bit_generator.state
    meta_bytes = json.dumps(meta).encode("utf-8")
    parts = [_MAGIC, struct.pack("<IBI", _FORMAT_VERSION, _KIND_CODES[kind],
                                 len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(sections))]
    for section in sections:
        _write_section(parts, section)
    Path(path).write_bytes(b"".join(parts))


def load_buffer(path: str | Path):
    """Reconstruct a buffer written by `save_buffer`."""
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise ValueError("not a buffer file (bad magic)")
    version, kind_code, meta_len = struct.unpack_from("<IBI", buf, 4)
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported buffer format version {version}")
    offset = 4 + struct.calcsize("<IBI")
    meta = json.loads(buf[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    (n_sections,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    sections: list[list[Experience]] = []
    for _ in range(n_sections):
        (count,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        items, offset = _unpack_experiences(buf, offset, count)
        sections.append(items)
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    kind = {v: k for k, v in _KIND_CODES.items()}[kind_code]
    if kind == "mtr":
        out = MtrBuffer(meta["capacity"], meta["n_sub"], meta["beta"], rng)
        out.overflow = deque(sections[0])
        out.sub_buffers = [deque(s) for s in sections[1:]]
        out._cascade_len = sum(len(s) for s in sections[1:])
        out.push_count = meta["push_count"]
        return out
    if kind == "half":
        out = HalfHalfBuffer(meta["capacity"], rng)
        out.fifo_part.items = deque(sections[0])
        out.reservoir_part.items = sections[1]
        out.reservoir_part.seen = meta["reservoir_seen"]
        return out
    if kind == "reservoir":
        out = ReservoirBuffer(meta["capacity"], rng)
        out.items = sections[0]
        out.seen = meta["seen"]
        return out
    out = FifoBuffer(meta["capacity"], rng)
    out.items = deque(sections[0])
    return out


def make_buffer(kind: str, capacity: int, rng: np.random.Generator,
                n_sub: int = 20, beta: float = 0.85):
    """Construct a buffer by kind name; `mtr_irm` shares the MTR structure."""
    if kind == "fifo":
        return FifoBuffer(capacity, rng)
    if kind == "reservoir":
        return ReservoirBuffer(capacity, rng)
    if kind == "half":
        return HalfHalfBuffer(capacity, rng)
    if kind in ("mtr", "mtr_irm"):
        return MtrBuffer(capacity, n_sub, beta, rng)
    raise ValueError(f"unknown buffer kind: {kind!r}")
